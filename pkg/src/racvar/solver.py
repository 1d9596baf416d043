"""Projected subgradient solver for one sample-path problem.

Step sizes follow Polyak's rule with an estimated target level,

    x+ = P(x - (f(x) - f_ref + delta) / |g|^2 * g),

where ``f_ref`` is the best value at the last level update and ``delta`` is a
gap estimate.  A step that brings the best value ``delta / 2`` below ``f_ref``
moves the reference down; after ``patience`` steps without such progress
``delta`` is halved and the iterate restarts from the best point found.  The
run stops once ``delta <= eps`` and the best value has improved by less than
``eps`` over the last ``stall_window`` iterations, so ``eps`` is a tolerance on
the objective value.

When the oracle exposes ``argmin_u`` the scalar ``u`` is minimised exactly
after every theta step and the subgradient steps act on theta alone; this
partial minimisation keeps the iterates on the optimal-``u`` manifold, where
the problem is far better scaled than in the joint ``(u, theta)`` space.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .losses import ConstraintSet, project
from .objective import Decision

# subgradient steps with Polyak-type levels converge linearly on sharp
# (piecewise-linear) minima, the case of every sample-path CVaR problem here
CONVERGENCE_CLASS = "linear"


@dataclass
class SolveReport:
    solution: Decision
    achieved_tol: float
    iterations: int
    oracle_calls: int
    objective_value: float
    converged: bool
    elapsed: float = 0.0
    convergence_class: str = CONVERGENCE_CLASS
    trace: list = field(default_factory=list, repr=False)


def _write_trace(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "value", "best", "step", "delta"])
        w.writerows(rows)


def solve(objective, start: Decision, eps: float, constraint: ConstraintSet | None = None,
          max_iter: int = 20_000, max_time: float | None = None, stall_window: int = 25,
          patience: int = 10, delta0: float | None = None, exact_u: bool | None = None,
          trace_path=None, record_trace: bool = False) -> SolveReport:
    """Minimise ``objective`` from ``start`` to objective tolerance ``eps``.

    Parameters
    ----------
    objective
        Callable ``(u, theta) -> (value, g_u, g_theta)``.  If it also has an
        ``argmin_u(theta) -> (u, value, g_theta)`` method, ``u`` is eliminated
        exactly (disable with ``exact_u=False``).
    start
        Initial decision; its theta is projected onto ``constraint``.
    constraint
        Decision set for theta, or ``None`` when theta is unconstrained.
    delta0
        Initial gap estimate; defaults to ``max(eps, 0.05 * (1 + |f(start)|))``.
    """
    if not eps > 0:
        raise ValueError(f"tolerance must be positive, got {eps}")
    t0 = time.perf_counter()
    exact_u = hasattr(objective, "argmin_u") if exact_u is None else exact_u
    proj: Callable = (lambda th: project(th, constraint)) if constraint is not None else (lambda th: th)
    tangent: Callable = constraint.tangent if constraint is not None else (lambda g: g)

    calls = 0

    def evaluate(u, theta):
        nonlocal calls
        calls += 1
        if exact_u:
            u, f, g_theta = objective.argmin_u(theta)
            return u, f, 0.0, np.asarray(g_theta, dtype=float)
        f, g_u, g_theta = objective(u, theta)
        return u, f, float(g_u), np.asarray(g_theta, dtype=float)

    theta = proj(np.asarray(start.theta, dtype=float))
    u, f, g_u, g_th = evaluate(start.u, theta)
    best = (f, u, theta.copy(), g_u, g_th)
    f_ref = f
    history = [f]
    delta = max(eps, 0.05 * (1.0 + abs(f))) if delta0 is None else max(delta0, eps)
    floor = 0.25 * eps
    stuck = 0
    rows = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g_t = tangent(g_th) if g_th.size else g_th
        gnorm2 = g_u * g_u + float(g_t @ g_t)
        if gnorm2 == 0.0:
            # zero subgradient certifies optimality of the current point
            best = (f, u, theta.copy(), g_u, g_th)
            converged = True
            delta = 0.0
            break
        step = (f - f_ref + delta) / gnorm2
        if not exact_u:
            u = u - step * g_u
        if theta.size:
            theta = proj(theta - step * g_t)
        u, f, g_u, g_th = evaluate(u, theta)
        if f < best[0]:
            best = (f, u, theta.copy(), g_u, g_th)
        history.append(best[0])
        if best[0] <= f_ref - 0.5 * delta:
            f_ref = best[0]
            stuck = 0
        else:
            stuck += 1
            if stuck >= patience:
                delta = max(0.5 * delta, floor)
                f_ref = best[0]
                stuck = 0
                f, u, theta, g_u, g_th = best[0], best[1], best[2].copy(), best[3], best[4]
        if record_trace or trace_path is not None:
            rows.append((it, f, best[0], step, delta))
        if delta <= eps and it >= stall_window and history[-stall_window - 1] - best[0] < eps:
            converged = True
            break
        if max_time is not None and time.perf_counter() - t0 > max_time:
            break
    window = history[-stall_window - 1:] if len(history) > stall_window else history
    achieved = 0.0 if (converged and delta == 0.0) else max(delta, window[0] - best[0])
    if trace_path is not None:
        _write_trace(trace_path, rows)
    return SolveReport(
        solution=Decision(best[1], best[2]),
        achieved_tol=float(achieved),
        iterations=it,
        oracle_calls=calls,
        objective_value=float(best[0]),
        converged=converged,
        elapsed=time.perf_counter() - t0,
        trace=rows,
    )
