"""Retrospective approximation with importance sampling.

A run solves a sequence of sample-path problems on fresh batches of growing
size ``m_k`` to shrinking tolerances ``eps_k``, each warm-started at the
previous stage's solution.  :func:`run_vanilla_ra` keeps the transformation
parameter ``h`` fixed; :func:`run_enhanced_ra` re-selects ``h`` after every
stage by minimising an estimate of the second moment of the ``u``-gradient
over a grid, evaluated on one common batch of X draws.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng
from .losses import ConstraintSet, LossModel
from .models import ModelSpec, sample_x
from .objective import Decision, sample_path_objective
from .rng import Seed
from .solver import CONVERGENCE_CLASS, SolveReport, solve
from .transform import TransformParams, identity_batch, is_admissible, transform_batch

logger = logging.getLogger(__name__)

DEFAULT_H_GRID = tuple(np.geomspace(0.5, 8.0, 13))


@dataclass(frozen=True)
class RASchedule:
    """Stage sample sizes and objective tolerances.

    ``relative=True`` makes each tolerance a fraction of ``1 + |f|`` at the
    stage's starting point.  ``cv_sizes`` gives the size of a separate batch
    drawn for ``h`` selection after each stage; when ``None`` the selection
    after stage ``k`` reuses the fresh batch of stage ``k + 1`` (no extra
    samples), and no selection follows the last stage.
    """

    sample_sizes: tuple[int, ...]
    tolerances: tuple[float, ...]
    cv_sizes: tuple[int, ...] | None = None
    relative: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sample_sizes", tuple(int(m) for m in self.sample_sizes))
        object.__setattr__(self, "tolerances", tuple(float(e) for e in self.tolerances))
        if self.cv_sizes is not None:
            object.__setattr__(self, "cv_sizes", tuple(int(m) for m in self.cv_sizes))
            if len(self.cv_sizes) != len(self.sample_sizes):
                raise ValueError("cv_sizes must have one entry per stage")
        if len(self.sample_sizes) != len(self.tolerances) or not self.sample_sizes:
            raise ValueError("need one tolerance per stage and at least one stage")
        if min(self.sample_sizes) < 1 or min(self.tolerances) <= 0:
            raise ValueError("sample sizes and tolerances must be positive")

    @property
    def stages(self) -> int:
        return len(self.sample_sizes)

    @property
    def budget(self) -> int:
        return sum(self.sample_sizes) + (sum(self.cv_sizes) if self.cv_sizes else 0)

    def is_monotone(self) -> bool:
        m, e = self.sample_sizes, self.tolerances
        return all(a < b for a, b in zip(m, m[1:])) and all(a > b for a, b in zip(e, e[1:]))


def geometric_schedule(m1: int, stages: int, eps1: float, growth: float = 2.0,
                       relative: bool = False) -> RASchedule:
    """``m_k = m1 growth^(k-1)`` and ``eps_k = eps1 / sqrt(m_k / m1)``."""
    sizes = tuple(int(round(m1 * growth ** k)) for k in range(stages))
    tols = tuple(eps1 / math.sqrt(m / m1) for m in sizes)
    return RASchedule(sizes, tols, relative=relative)


def split_schedule(sizes: Sequence[int], eps1: float, relative: bool = True) -> RASchedule:
    """Stages of the given sizes with ``eps_k = eps1 / sqrt(m_k / m_1)``."""
    tols = tuple(eps1 / math.sqrt(m / sizes[0]) for m in sizes)
    return RASchedule(tuple(sizes), tols, relative=relative)


@dataclass
class StageRecord:
    stage: int
    m: int
    eps: float
    h: float | None
    start: Decision
    report: SolveReport
    work: int
    cumulative_work: int
    h_next: float | None = None
    criterion: dict | None = None

    @property
    def solution(self) -> Decision:
        return self.report.solution

    @property
    def estimate(self) -> float:
        return self.report.objective_value


@dataclass
class RATrace:
    beta: float
    stages: list[StageRecord] = field(default_factory=list)
    method: str = "vanilla"

    @property
    def final(self) -> Decision:
        return self.stages[-1].solution

    @property
    def final_estimate(self) -> float:
        return self.stages[-1].estimate

    @property
    def h_path(self) -> list:
        return [s.h for s in self.stages]

    @property
    def total_samples(self) -> int:
        return sum(s.m for s in self.stages)

    def summary_rows(self) -> list[dict]:
        rows = []
        for s in self.stages:
            r = s.report
            rows.append({
                "stage": s.stage, "m": s.m, "eps": s.eps, "h": s.h, "h_next": s.h_next,
                "iterations": r.iterations, "oracle_calls": r.oracle_calls,
                "work": s.work, "cumulative_work": s.cumulative_work,
                "converged": r.converged, "achieved_tol": r.achieved_tol,
                "objective": r.objective_value, "u": r.solution.u,
                "theta": " ".join(repr(float(t)) for t in r.solution.theta),
            })
        return rows

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "beta": self.beta,
            "final": {"u": self.final.u, "theta": self.final.theta.tolist()},
            "final_estimate": self.final_estimate,
            "stages": [
                {**{k: v for k, v in row.items() if k != "theta"},
                 "theta": self.stages[i].solution.theta.tolist(),
                 "start": {"u": self.stages[i].start.u, "theta": self.stages[i].start.theta.tolist()}}
                for i, row in enumerate(self.summary_rows())
            ],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path) -> None:
        rows = self.summary_rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


def _stage_batch(model, loss, beta, h, x, seed, stage):
    if h is None:
        tb = identity_batch(x, beta)
    else:
        tb = transform_batch(x, model, TransformParams(h, beta, loss.order_rho))
    return sample_path_objective(tb, loss, beta, rng.stream(seed, stage, rng.LOSS_NOISE))


def _run_stage(objective, start, eps_k, relative, constraint, solver_opts, delta0):
    if relative:
        u0, f0, _ = objective.argmin_u(start.theta)
        objective.calls -= 1
        eps_k = eps_k * (1.0 + abs(f0))
    rep = solve(objective, start, eps_k, constraint, delta0=delta0, **solver_opts)
    return rep, eps_k


def _default_constraint(loss: LossModel) -> ConstraintSet:
    make = getattr(loss, "constraint", None)
    return make() if make is not None else ConstraintSet()


def run_vanilla_ra(model: ModelSpec, loss: LossModel, beta: float, h: float | None,
                   schedule: RASchedule, seed: Seed, start: Decision,
                   constraint: ConstraintSet | None = None,
                   solver_opts: dict | None = None) -> RATrace:
    """Retrospective approximation at a fixed ``h``; ``h=None`` gives plain SAA stages."""
    if h is not None:
        TransformParams(h, beta, loss.order_rho)
    constraint = _default_constraint(loss) if constraint is None else constraint
    solver_opts = dict(solver_opts or {})
    trace = RATrace(beta=beta, method="saa" if h is None else "vanilla")
    current = start.copy()
    work = 0
    prev_eps = None
    for k, (m_k, eps_k) in enumerate(zip(schedule.sample_sizes, schedule.tolerances)):
        x = sample_x(model, m_k, rng.stream(seed, k, rng.SAMPLE)).raw
        objective = _stage_batch(model, loss, beta, h, x, seed, k)
        rep, eps_abs = _run_stage(objective, current, eps_k, schedule.relative, constraint,
                                  solver_opts, prev_eps)
        if not rep.converged:
            logger.warning("stage %d did not converge (achieved %.3g > %.3g)", k + 1,
                           rep.achieved_tol, eps_abs)
        work += rep.oracle_calls * m_k
        trace.stages.append(StageRecord(k + 1, m_k, eps_abs, h, current.copy(), rep,
                                        rep.oracle_calls * m_k, work, h_next=h))
        logger.info("stage %d: m=%d eps=%.3g iters=%d value=%.6g", k + 1, m_k, eps_abs,
                    rep.iterations, rep.objective_value)
        current = rep.solution.copy()
        prev_eps = eps_abs
    return trace


def h_criterion(x: np.ndarray, model: ModelSpec, loss: LossModel, dec: Decision, beta: float,
                h: float | None, loss_seed: Seed = 0) -> float:
    """``mean(1{l(Z_h, theta) >= u} * L_h^2)`` on the common batch ``x``.

    ``h=None`` uses the identity transform (``Z = X``, ``L = 1``), for which
    the criterion is the plain fraction of samples in the tail.
    """
    if h is None:
        tb = identity_batch(x, beta)
    else:
        tb = transform_batch(x, model, TransformParams(h, beta, loss.order_rho))
    losses = loss.bind(tb.transformed, loss_seed).values(dec.theta)
    return float(np.mean(np.where(losses >= dec.u, tb.lr ** 2, 0.0)))


def select_h(model: ModelSpec, loss: LossModel, dec: Decision, beta: float,
             grid: Sequence[float] = DEFAULT_H_GRID, n: int = 2000, seed: Seed = 0,
             x: np.ndarray | None = None, current: float | None = None,
             return_criteria: bool = False):
    """Grid minimiser of :func:`h_criterion` using common random numbers.

    Grid points with ``s_h <= 1`` are skipped.  Ties go to the smaller h.  If
    no sample reaches the tail for any h, ``current`` (or the smallest grid
    point) is returned with a warning.
    """
    admissible = sorted(float(h) for h in grid if is_admissible(h, beta))
    if not admissible:
        raise ValueError(f"no admissible h in grid {list(grid)} for beta={beta}")
    if len(admissible) < len(grid):
        logger.debug("select_h: dropped %d inadmissible grid points", len(grid) - len(admissible))
    if x is None:
        x = sample_x(model, n, rng.stream(seed, rng.CROSS_VALIDATION)).raw
    loss_seed = rng.stream(seed, rng.CROSS_VALIDATION, rng.LOSS_NOISE)
    crit = {h: h_criterion(x, model, loss, dec, beta, h, loss_seed) for h in admissible}
    positive = {h: c for h, c in crit.items() if c > 0}
    if not positive:
        choice = current if current is not None else admissible[0]
        logger.warning("select_h: no tail hits at u=%.4g for any h; keeping h=%s", dec.u, choice)
    else:
        best = min(positive.values())
        choice = min(h for h, c in positive.items() if c == best)
    return (choice, crit) if return_criteria else choice


def run_enhanced_ra(model: ModelSpec, loss: LossModel, beta: float, schedule: RASchedule,
                    seed: Seed, start: Decision, h0: float,
                    grid: Sequence[float] = DEFAULT_H_GRID,
                    constraint: ConstraintSet | None = None, solver_opts: dict | None = None,
                    selector: Callable | None = None) -> RATrace:
    """Retrospective approximation that re-selects ``h`` after every stage.

    ``selector(x, dec, h_current) -> h`` overrides the grid search (used to
    check that a constant selector reproduces :func:`run_vanilla_ra`).
    """
    TransformParams(h0, beta, loss.order_rho)
    constraint = _default_constraint(loss) if constraint is None else constraint
    solver_opts = dict(solver_opts or {})
    trace = RATrace(beta=beta, method="enhanced")
    current = start.copy()
    h = float(h0)
    work = 0
    prev_eps = None
    K = schedule.stages
    batches = [None] * K

    def stage_x(k):
        if batches[k] is None:
            batches[k] = sample_x(model, schedule.sample_sizes[k], rng.stream(seed, k, rng.SAMPLE)).raw
        return batches[k]

    for k in range(K):
        m_k, eps_k = schedule.sample_sizes[k], schedule.tolerances[k]
        objective = _stage_batch(model, loss, beta, h, stage_x(k), seed, k)
        rep, eps_abs = _run_stage(objective, current, eps_k, schedule.relative, constraint,
                                  solver_opts, prev_eps)
        work += rep.oracle_calls * m_k
        record = StageRecord(k + 1, m_k, eps_abs, h, current.copy(), rep, rep.oracle_calls * m_k, work)
        current = rep.solution.copy()
        prev_eps = eps_abs

        # step 2: cross-validate h at the new iterate
        if schedule.cv_sizes is not None:
            x_cv = sample_x(model, schedule.cv_sizes[k], rng.stream(seed, k, rng.CROSS_VALIDATION)).raw
        elif k + 1 < K:
            x_cv = stage_x(k + 1)
        else:
            x_cv = None
        if x_cv is not None:
            if selector is not None:
                h_next = float(selector(x_cv, current, h))
            else:
                h_next, crit = select_h(model, loss, current, beta, grid, x=x_cv, seed=rng.stream(seed, k),
                                        current=h, return_criteria=True)
                record.criterion = {repr(key): val for key, val in crit.items()}
            record.h_next = h_next
            h = h_next
        else:
            record.h_next = h
        trace.stages.append(record)
        logger.info("stage %d: m=%d h=%.3g -> %.3g value=%.6g", k + 1, m_k, record.h,
                    record.h_next, rep.objective_value)
    return trace


@dataclass
class ConditionResult:
    name: str
    passed: bool
    constant: float
    detail: str


@dataclass
class ScheduleReport:
    passed: bool
    convergence_class: str
    conditions: list[ConditionResult]

    def failing(self) -> list[str]:
        return [c.name for c in self.conditions if not c.passed]

    def format(self) -> str:
        lines = [f"schedule check ({self.convergence_class} solver): {'PASS' if self.passed else 'FAIL'}"]
        for c in self.conditions:
            lines.append(f"  [{'pass' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
        return "\n".join(lines)


COND_LINEAR = "liminf_{k->inf} eps_{k-1} sqrt(m_k) > 0"
COND_POLY = "liminf_{k->inf} log(1/sqrt(m_{k-1})) / log(eps_k) > 0"
COND_WORK = "limsup_{k->inf} (sum_{j<=k} m_j) eps_k^2 < inf"
COND_GROWTH = "limsup_{k->inf} m_k^{-1} sum_{j<=k} m_j < inf"


def _limit_estimate(seq: np.ndarray) -> float:
    """Extrapolated limit of a finite sequence (Aitken's delta-squared on the last 3 terms).

    Returns +inf / -inf when the last increments do not contract.
    """
    if seq.size < 3:
        return float(seq[-1])
    d1, d2 = seq[-2] - seq[-3], seq[-1] - seq[-2]
    scale = max(abs(seq[-1]), 1e-300)
    if abs(d2) <= 1e-12 * scale:
        return float(seq[-1])
    if d1 == 0.0:
        return math.copysign(math.inf, d2)
    q = d2 / d1
    if q < 0:
        return float(seq[-1])
    if q >= 1.0 - 1e-9:
        return math.copysign(math.inf, d2)
    return float(seq[-1] + d2 * q / (1.0 - q))


def _liminf_positive(name, seq, ratio) -> ConditionResult:
    if seq.size == 0:
        return ConditionResult(name, True, math.nan, "vacuous (fewer than two stages)")
    limit = _limit_estimate(seq)
    const = min(float(seq.min()), limit)
    ok = bool(np.all(seq > 0)) and const >= float(seq[0]) / ratio
    return ConditionResult(name, ok, const,
                           f"terms {np.array2string(seq, precision=4)}; extrapolated limit {limit:.4g}; "
                           f"requires lower bound >= first term / {ratio:g}")


def _limsup_finite(name, seq, ratio) -> ConditionResult:
    if seq.size == 0:
        return ConditionResult(name, True, math.nan, "vacuous (no stages)")
    limit = _limit_estimate(seq)
    const = max(float(seq.max()), limit)
    ok = math.isfinite(const) and const <= abs(float(seq[0])) * ratio
    return ConditionResult(name, ok, const,
                           f"terms {np.array2string(seq, precision=4)}; extrapolated limit {limit:.4g}; "
                           f"requires upper bound <= first term * {ratio:g}")


def validate_schedule(schedule: RASchedule, convergence_class: str = CONVERGENCE_CLASS,
                      ratio: float = 10.0) -> ScheduleReport:
    """Finite-horizon proxies for the RA sample-size/tolerance conditions.

    Each asymptotic liminf/limsup is replaced by the sequence's extrapolated
    limit (Aitken) together with its observed range, and must stay within a
    factor ``ratio`` of the sequence's first term.  A single-stage schedule
    passes vacuously.
    """
    if convergence_class not in ("linear", "polynomial"):
        raise ValueError("convergence_class must be 'linear' or 'polynomial'")
    m = np.asarray(schedule.sample_sizes, dtype=float)
    eps = np.asarray(schedule.tolerances, dtype=float)
    cum = np.cumsum(m)
    if m.size < 2:
        conds = [ConditionResult(n, True, math.nan, "vacuous (single stage)")
                 for n in ((COND_LINEAR if convergence_class == "linear" else COND_POLY),
                           COND_WORK, COND_GROWTH)]
        return ScheduleReport(True, convergence_class, conds)
    if convergence_class == "linear":
        c1 = _liminf_positive(COND_LINEAR, eps[:-1] * np.sqrt(m[1:]), ratio)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            seq = np.log(1.0 / np.sqrt(m[:-1])) / np.log(eps[1:])
        c1 = _liminf_positive(COND_POLY, seq, ratio)
    c2 = _limsup_finite(COND_WORK, cum * eps ** 2, ratio)
    c3 = _limsup_finite(COND_GROWTH, cum / m, ratio)
    conds = [c1, c2, c3]
    return ScheduleReport(all(c.passed for c in conds), convergence_class, conds)
