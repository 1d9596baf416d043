"""Benchmark studies: reference optima, error metrics, and method comparisons.

Every study is a deterministic function of its configuration and master
seed.  Replication ``i`` of a study uses the stream ``(seed, i)`` for all
methods, so comparisons between methods are paired.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__, rng
from .losses import ConstraintSet, CreditLoss, LinearLoss, LossModel
from .models import CreditModelSpec, ModelSpec, sample_x
from .objective import Decision, cvar_from_weighted, sample_path_objective
from .ra import DEFAULT_H_GRID, RATrace, run_enhanced_ra, run_vanilla_ra, split_schedule
from .rng import Seed
from .solver import solve
from .transform import TransformParams, identity_batch, transform_batch

logger = logging.getLogger(__name__)

METHODS = ("saa", "vanilla", "enhanced")
DEFAULT_BETAS = (0.037, 0.01, 0.003, 0.001, 5e-4)


@dataclass
class ExperimentConfig:
    """Settings shared by the portfolio studies."""

    dim: int = 5
    alpha: float = 0.5
    corr_offdiag: float = 0.3
    betas: tuple = DEFAULT_BETAS
    budget: int = 2500
    stage_fractions: tuple = (0.2, 0.8)
    replications: int = 50
    search_replications: int = 20
    n_ref: int = 1_000_000
    n_eval: int = 200_000
    h: float = 2.5
    h0: float = 2.5
    h_grid: tuple = DEFAULT_H_GRID
    eps1: float = 1e-3
    seed: int = 2024
    out_dir: str = "results"
    cache_dir: str | None = None
    jobs: int = 1

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.stage_fractions = tuple(float(f) for f in self.stage_fractions)
        self.h_grid = tuple(float(h) for h in self.h_grid)
        if self.budget < 1 or self.n_ref < 1 or self.n_eval < 1:
            raise ValueError("budgets and sample sizes must be positive")
        if self.replications < 2 or self.search_replications < 2:
            raise ValueError("need at least two replications")
        if any(not 0.0 < b < math.exp(-1.0) for b in self.betas):
            raise ValueError(f"every beta must lie in (0, 1/e), got {self.betas}")
        if not math.isclose(sum(self.stage_fractions), 1.0) or min(self.stage_fractions) <= 0:
            raise ValueError("stage fractions must be positive and sum to 1")

    def model(self) -> ModelSpec:
        return ModelSpec.exchangeable(self.dim, self.alpha, self.corr_offdiag)

    def loss(self) -> LinearLoss:
        return LinearLoss(self.dim)

    def stage_sizes(self, budget: int | None = None) -> tuple[int, ...]:
        budget = self.budget if budget is None else budget
        sizes = [max(1, int(round(budget * f))) for f in self.stage_fractions[:-1]]
        return tuple(sizes + [max(1, budget - sum(sizes))])

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("out_dir", "cache_dir", "jobs"):
            d.pop(key)
        return d

    def digest(self) -> str:
        return fingerprint(self.to_dict())


def fingerprint(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"cannot serialise {type(v)}")


def model_fingerprint(model: ModelSpec, loss: LossModel) -> dict:
    info = {"alphas": model.alphas, "corr": model.copula_corr, "loss": type(loss).__name__,
            "theta_dim": loss.theta_dim}
    if isinstance(loss, CreditLoss):
        s = loss.spec
        info["credit"] = {k: getattr(s, k) for k in ("intercepts", "slopes", "loans_per_class",
                                                     "exposure_low", "exposure_high", "returns",
                                                     "min_return")}
        info["factors"] = {"alphas": s.factor_model.alphas, "corr": s.factor_model.copula_corr}
    return json.loads(json.dumps(info, default=_jsonable))


def _constraint(loss: LossModel) -> ConstraintSet:
    make = getattr(loss, "constraint", None)
    return make() if make is not None else ConstraintSet()


def _start(loss: LossModel) -> Decision:
    return Decision(0.0, np.eye(loss.theta_dim)[0])


def _pmap(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Ordered map, in worker processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# reference optimum and out-of-sample evaluation


@dataclass
class ReferenceSolution:
    cvar: float
    theta: np.ndarray
    var: float
    se: float
    n: int
    in_sample: float

    def to_dict(self) -> dict:
        return {"cvar": self.cvar, "theta": np.asarray(self.theta).tolist(), "var": self.var,
                "se": self.se, "n": self.n, "in_sample": self.in_sample}

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceSolution":
        return cls(d["cvar"], np.asarray(d["theta"]), d["var"], d["se"], d["n"], d["in_sample"])


def _is_batch(model, loss, beta, n, seed, h):
    x = sample_x(model, n, seed).raw
    if h is None:
        return identity_batch(x, beta)
    return transform_batch(x, model, TransformParams(h, beta, loss.order_rho))


def reference_solution(model: ModelSpec, loss: LossModel, beta: float, n_ref: int, seed: Seed,
                       h: float | None = 2.5, eps_rel: float = 1e-7, cache_dir=None,
                       max_iter: int = 50_000) -> ReferenceSolution:
    """High-accuracy optimum ``(c_beta, theta*, u*)``.

    Solves the importance-sampled sample-path problem on ``n_ref`` draws (plain
    SAA when ``h`` is None), then re-evaluates the CVaR at the solution on an
    independent batch of the same size so that ``cvar`` carries no in-sample
    optimisation bias.  Results are cached as JSON under ``cache_dir`` keyed by
    a hash of every input.
    """
    if h is None and n_ref * beta < 100:
        raise ValueError(
            f"plain reference needs n_ref*beta >= 100; use n_ref >= {math.ceil(100 / beta)}"
        )
    if n_ref < 1000:
        raise ValueError("reference sample size must be at least 1000")
    key = fingerprint({"model": model_fingerprint(model, loss), "beta": beta, "n_ref": n_ref,
                       "seed": list(rng.key_of(seed)), "h": h, "eps_rel": eps_rel,
                       "version": __version__})
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"reference-{key}.json"
        if path.exists():
            with open(path) as fh:
                return ReferenceSolution.from_dict(json.load(fh))
    tb = _is_batch(model, loss, beta, n_ref, rng.stream(seed, rng.REFERENCE, 0), h)
    obj = sample_path_objective(tb, loss, beta, rng.stream(seed, rng.REFERENCE, 1))
    start = Decision(0.0, np.full(loss.theta_dim, 1.0 / loss.theta_dim))
    _, f0, _ = obj.argmin_u(start.theta)
    rep = solve(obj, start, eps_rel * (1.0 + abs(f0)), _constraint(loss), max_iter=max_iter)
    tb2 = _is_batch(model, loss, beta, n_ref, rng.stream(seed, rng.REFERENCE, 2), h)
    losses = loss.bind(tb2.transformed, rng.stream(seed, rng.REFERENCE, 3)).values(rep.solution.theta)
    est = cvar_from_weighted(losses, tb2.lr, beta)
    ref = ReferenceSolution(est.cvar, rep.solution.theta, est.var, est.se, n_ref, rep.objective_value)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(ref.to_dict(), fh, indent=2)
    return ref


class CVaREvaluator:
    """Out-of-sample CVaR of many decisions on one common weighted batch."""

    def __init__(self, model: ModelSpec, loss: LossModel, beta: float, n: int, seed: Seed,
                 h: float | None = 2.5):
        tb = _is_batch(model, loss, beta, n, rng.stream(seed, 0), h)
        self.bound = loss.bind(tb.transformed, rng.stream(seed, 1))
        self.weights = tb.lr
        self.beta = beta

    def __call__(self, theta) -> float:
        return cvar_from_weighted(self.bound.values(np.asarray(theta, float)), self.weights,
                                  self.beta).cvar


def relative_rmse(outputs, c_beta: float) -> float:
    """``sqrt(mean((c_hat / c_beta - 1)^2))``."""
    outputs = np.asarray(outputs, dtype=float)
    if not c_beta > 0:
        raise ValueError("reference value must be positive")
    if outputs.size < 2:
        raise ValueError("need at least two outputs")
    return float(np.sqrt(np.mean((outputs / c_beta - 1.0) ** 2)))


@dataclass
class RegretReport:
    per_replication: np.ndarray
    mean: float
    median: float
    se: float
    eval_se: float

    @property
    def percent(self) -> float:
        return self.mean


def relative_regret(theta_outputs, model: ModelSpec, loss: LossModel, beta: float,
                    c_beta: float | None = None, theta_ref=None, n_eval: int = 200_000,
                    h: float | None = 2.5, seed: Seed = 0,
                    evaluator: CVaREvaluator | None = None) -> RegretReport:
    """``100 * (c(theta_i) / c_beta - 1)`` per output, with mean, median and SE.

    ``c(theta_i)`` is estimated on one common importance-sampled batch.  When
    ``theta_ref`` is given the denominator is ``c(theta_ref)`` on that same
    batch, which cancels most of the evaluation noise; otherwise ``c_beta``
    is used as given.
    """
    ev = evaluator or CVaREvaluator(model, loss, beta, n_eval, rng.stream(seed, rng.EVALUATION), h)
    values = np.array([ev(t) for t in theta_outputs])
    if theta_ref is not None:
        c_beta = ev(theta_ref)
    if c_beta is None or not c_beta > 0:
        raise ValueError("need a positive reference CVaR or a reference decision")
    reg = 100.0 * (values / c_beta - 1.0)
    se = float(np.std(reg, ddof=1) / math.sqrt(reg.size)) if reg.size > 1 else math.nan
    est = cvar_from_weighted(ev.bound.values(np.asarray(theta_ref if theta_ref is not None
                                                        else theta_outputs[0], float)),
                             ev.weights, beta)
    return RegretReport(reg, float(reg.mean()), float(np.median(reg)), se,
                        100.0 * est.se / est.cvar)


# --------------------------------------------------------------------------
# worst-case standard error over a box around the optimum


@dataclass
class WorstCaseSE:
    se_is: float
    se_saa: float
    se_is_by_h: dict
    grid_points: int
    n: int

    @property
    def ratio(self) -> float:
        return self.se_saa / self.se_is


def box_grid(center: np.ndarray, r: float, points: int, max_full: int = 20_000) -> np.ndarray:
    """Points of ``{c_i (1 - r) <= y_i <= c_i (1 + r)}``.

    A full tensor grid when it has at most ``max_full`` points; otherwise every
    corner plus each axis sweep through the centre.
    """
    center = np.asarray(center, dtype=float)
    dim = center.size
    if r == 0 or points == 1:
        return center[None, :]
    lo, hi = center * (1 - r), center * (1 + r)
    axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
    if points ** dim <= max_full:
        return np.array(list(product(*axes)))
    corners = np.array(list(product(*[(a, b) for a, b in zip(lo, hi)])))
    sweeps = []
    for i in range(dim):
        pts = np.repeat(center[None, :], points, axis=0)
        pts[:, i] = axes[i]
        sweeps.append(pts)
    return np.unique(np.vstack([corners] + sweeps), axis=0)


def _relative_se_on_grid(scen: np.ndarray, w1: np.ndarray, w2: np.ndarray, n_total: int,
                         beta: float, grid: np.ndarray, n: int, chunk: int = 512) -> np.ndarray:
    """Relative SE of an ``n``-sample objective estimator at each grid point.

    With ``e = (l - u)^+ / beta`` the first and second moments of the
    per-sample term are ``mean(e * w1)`` and ``mean(e^2 * w2)`` over the
    ``n_total`` draws.  ``scen`` holds only the draws that can reach the tail
    somewhere on the grid; the rest contribute zero.
    """
    out = np.empty(grid.shape[0])
    for s in range(0, grid.shape[0], chunk):
        g = grid[s:s + chunk]
        u, theta = g[:, 0], g[:, 1:]
        e = np.maximum(scen @ theta.T - u[None, :], 0.0) / beta
        m1 = (e * w1[:, None]).sum(axis=0) / n_total
        m2 = (e * e * w2[:, None]).sum(axis=0) / n_total
        var = np.maximum(m2 - m1 ** 2, 0.0)
        out[s:s + chunk] = np.sqrt(var / n) / (u + m1)
    return out


def worst_case_se(model: ModelSpec, loss: LossModel, beta: float, r: float, hs: Sequence[float],
                  n: int, reference: Decision, points: int = 5, n_var: int = 400_000,
                  seed: Seed = 0, h_moments: float = 2.5) -> WorstCaseSE:
    """Largest relative SE of the objective estimator over a grid on the box S_r.

    Moments at every grid point come from ``n_var`` common draws of X.  The
    IS estimator at each ``h`` uses weights ``L_h`` and ``L_h^2`` for its first
    and second moments.  The plain estimator's moments are rare-event
    expectations under X, so they are themselves estimated by importance
    sampling at ``h_moments`` (weights ``L`` for both moments); this keeps the
    SAA variance estimate accurate at the rarest corners of the box.  The
    SE is that of an ``n``-sample estimator; ``se_is`` is the worst over ``hs``.
    """
    center = reference.as_vector()
    grid = box_grid(center, r, points)
    u_min = grid[:, 0].min()
    theta_lo, theta_hi = grid[:, 1:].min(axis=0), grid[:, 1:].max(axis=0)

    def reachable(y):
        bound = np.maximum(y * theta_lo, y * theta_hi).sum(axis=1)
        return bound >= u_min

    x = sample_x(model, n_var, rng.stream(seed, rng.EVALUATION)).raw
    noise = rng.stream(seed, rng.EVALUATION, rng.LOSS_NOISE)

    def weighted(h):
        tb = transform_batch(x, model, TransformParams(h, beta, loss.order_rho))
        yz = loss.bind(tb.transformed, noise).scenarios
        k = reachable(yz)
        return yz[k], tb.lr[k]

    ym, lm = weighted(h_moments)
    se_saa = float(_relative_se_on_grid(ym, lm, lm, n_var, beta, grid, n).max())
    by_h = {}
    for h in hs:
        yz, lr = weighted(h)
        by_h[float(h)] = float(_relative_se_on_grid(yz, lr, lr * lr, n_var, beta, grid, n).max())
    return WorstCaseSE(max(by_h.values()), se_saa, by_h, grid.shape[0], n)


# --------------------------------------------------------------------------
# method runs


def run_method(method: str, model: ModelSpec, loss: LossModel, beta: float, budget: int,
               seed: Seed, cfg: ExperimentConfig, h0: float | None = None) -> RATrace:
    """One replication of ``method`` with total sample budget ``budget``."""
    start = _start(loss)
    if method == "saa":
        return run_vanilla_ra(model, loss, beta, None, split_schedule((budget,), cfg.eps1), seed, start)
    schedule = split_schedule(cfg.stage_sizes(budget), cfg.eps1)
    if method == "vanilla":
        return run_vanilla_ra(model, loss, beta, cfg.h, schedule, seed, start)
    if method == "enhanced":
        return run_enhanced_ra(model, loss, beta, schedule, seed, start,
                               cfg.h0 if h0 is None else h0, cfg.h_grid)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _replicate_one(args):
    method, model, loss, beta, budget, seed, cfg, h0 = args
    tr = run_method(method, model, loss, beta, budget, seed, cfg, h0)
    return tr.final_estimate, tr.final.theta, tr.stages[-1].h


def replicate(method: str, cfg: ExperimentConfig, beta: float, budget: int | None = None,
              replications: int | None = None, h0: float | None = None, model=None, loss=None,
              seed: Seed | None = None):
    """Final estimates and decisions of independent replications (paired across methods)."""
    model = cfg.model() if model is None else model
    loss = cfg.loss() if loss is None else loss
    budget = cfg.budget if budget is None else budget
    reps = cfg.replications if replications is None else replications
    master = cfg.seed if seed is None else seed
    items = [(method, model, loss, beta, budget, rng.stream(master, i), cfg, h0) for i in range(reps)]
    res = _pmap(_replicate_one, items, cfg.jobs)
    return (np.array([r[0] for r in res]), np.array([r[1] for r in res]),
            [r[2] for r in res])


@dataclass
class MethodMetrics:
    beta: float
    method: str
    replications: int
    rel_rmse: float
    rel_rmse_se: float
    median_regret: float
    mean_regret: float
    regret_se: float
    runtime: float = 0.0


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    reference: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def get(self, beta: float, method: str):
        for r in self.rows:
            if math.isclose(r.beta, beta) and r.method == method:
                return r
        raise KeyError((beta, method))


def _rmse_se(outputs, c):
    # delta-method SE of the RMSE from the SE of the mean squared error
    e2 = (np.asarray(outputs) / c - 1.0) ** 2
    rmse = math.sqrt(e2.mean())
    return float(np.std(e2, ddof=1) / math.sqrt(e2.size) / (2 * rmse)) if rmse > 0 else 0.0


class Study:
    """Shared state of one portfolio study at one beta: reference and evaluator."""

    def __init__(self, cfg: ExperimentConfig, beta: float, model=None, loss=None):
        self.cfg, self.beta = cfg, beta
        self.model = cfg.model() if model is None else model
        self.loss = cfg.loss() if loss is None else loss
        cache = cfg.cache_dir or os.path.join(cfg.out_dir, "cache")
        self.reference = reference_solution(self.model, self.loss, beta, cfg.n_ref,
                                            rng.stream(cfg.seed, rng.REFERENCE),
                                            h=cfg.h, cache_dir=cache)
        self.evaluator = CVaREvaluator(self.model, self.loss, beta, cfg.n_eval,
                                       rng.stream(cfg.seed, rng.EVALUATION), cfg.h)

    def regret(self, thetas) -> RegretReport:
        return relative_regret(thetas, self.model, self.loss, self.beta,
                               theta_ref=self.reference.theta, evaluator=self.evaluator)

    def metrics(self, method: str, budget: int | None = None, h0: float | None = None,
                replications: int | None = None) -> MethodMetrics:
        t0 = time.perf_counter()
        est, thetas, _ = replicate(method, self.cfg, self.beta, budget, replications, h0,
                                   self.model, self.loss)
        reg = self.regret(thetas)
        c = self.reference.cvar
        return MethodMetrics(self.beta, method, est.size, relative_rmse(est, c), _rmse_se(est, c),
                             reg.median, reg.mean, reg.se, time.perf_counter() - t0)


def compare_methods(cfg: ExperimentConfig, betas: Sequence[float] | None = None,
                    methods: Sequence[str] = METHODS) -> MetricReport:
    """Relative RMSE and regret of each method at the configured budget."""
    report = MetricReport()
    for beta in (cfg.betas if betas is None else betas):
        st = Study(cfg, beta)
        report.reference[beta] = st.reference.to_dict()
        for m in methods:
            row = st.metrics(m)
            logger.info("beta=%g %s: rmse=%.4f regret(median)=%.4f%%", beta, m, row.rel_rmse,
                        row.median_regret)
            report.rows.append(row)
    return report


# --------------------------------------------------------------------------
# samples to reach a regret target


@dataclass
class BudgetSearch:
    method: str
    beta: float
    target: float
    budget: int
    achieved: float
    reached: bool
    trace: list


def samples_to_regret(method: str, study: Study, target: float = 1.0, replications: int = 20,
                      start: int = 250, cap: int = 256_000, refine: int = 4) -> BudgetSearch:
    """Smallest total budget whose median relative regret (percent) is at most ``target``.

    Budgets double from ``start`` until the target is met, then the last
    bracket is narrowed by ``refine`` geometric bisection steps.  IS methods
    split each budget over stages by the configured fractions.
    """
    if not target > 0:
        raise ValueError("target must be positive")
    trace = []

    def median_regret(b):
        _, thetas, _ = replicate(method, study.cfg, study.beta, b, replications,
                                 model=study.model, loss=study.loss)
        med = study.regret(thetas).median
        trace.append((b, med))
        logger.info("%s beta=%g budget=%d median regret %.3f%%", method, study.beta, b, med)
        return med

    b, med = start, median_regret(start)
    if med <= target:
        return BudgetSearch(method, study.beta, target, b, med, True, trace)
    lo = b
    while med > target:
        if b >= cap:
            return BudgetSearch(method, study.beta, target, b, med, False, trace)
        lo, b = b, min(2 * b, cap)
        med = median_regret(b)
    hi, hi_med = b, med
    for _ in range(refine):
        mid = int(round(math.sqrt(lo * hi)))
        if mid <= lo or mid >= hi:
            break
        m = median_regret(mid)
        if m <= target:
            hi, hi_med = mid, m
        else:
            lo = mid
    return BudgetSearch(method, study.beta, target, hi, hi_med, True, trace)


# --------------------------------------------------------------------------
# h0 robustness and CLT scale


def h0_sweep(cfg: ExperimentConfig, beta: float, h0s: Sequence[float] = (0.5, 1, 2, 4, 8),
             study: Study | None = None) -> dict:
    """Median final regret of enhanced RA for each starting ``h0``."""
    study = study or Study(cfg, beta)
    return {float(h0): study.metrics("enhanced", h0=h0) for h0 in h0s}


@dataclass
class ScalingResult:
    sizes: tuple
    sd: np.ndarray
    slope: float
    intercept: float


def _stage_solutions(args):
    model, loss, beta, h, sizes, seed, eps1 = args
    sched = split_schedule(sizes, eps1)
    tr = run_vanilla_ra(model, loss, beta, h, sched, seed, _start(loss))
    return [s.solution.as_vector() for s in tr.stages]


def clt_scaling(model: ModelSpec, loss: LossModel, beta: float, h: float | None = 2.5,
                sizes: Sequence[int] = (500, 2000, 8000), replications: int = 50, seed: Seed = 0,
                eps1: float = 1e-4, jobs: int = 1) -> ScalingResult:
    """Log-log slope of the stage-solution spread against the stage sample size.

    The spread at stage k is the root of the summed per-coordinate variances
    of ``(u_k, theta_k)`` across replications.
    """
    items = [(model, loss, beta, h, tuple(sizes), rng.stream(seed, i), eps1) for i in range(replications)]
    sols = np.array(_pmap(_stage_solutions, items, jobs))  # reps x stages x (1+p)
    sd = np.sqrt(sols.var(axis=0, ddof=1).sum(axis=1))
    slope, intercept = np.polyfit(np.log(sizes), np.log(sd), 1)
    return ScalingResult(tuple(sizes), sd, float(slope), float(intercept))


# --------------------------------------------------------------------------
# credit portfolio


@dataclass
class CreditReport:
    beta: float
    n: int
    reference: float
    reference_theta: np.ndarray
    is_errors: np.ndarray
    saa_errors: np.ndarray
    is_thetas: np.ndarray
    saa_thetas: np.ndarray

    @property
    def is_median(self) -> float:
        return float(np.median(self.is_errors))

    @property
    def saa_median(self) -> float:
        return float(np.median(self.saa_errors))


def _credit_one(args):
    spec, beta, n, h, seed, eps1 = args
    loss = CreditLoss(spec)
    out = []
    for hh in (h, None):
        tr = run_vanilla_ra(spec.factor_model, loss, beta, hh, split_schedule((n,), eps1), seed,
                            _start(loss))
        out.append((tr.final_estimate, tr.final.theta))
    return out


def run_credit_experiment(spec: CreditModelSpec, beta: float = 1e-3, n: int = 2000,
                          replications: int = 20, seed: Seed = 0, h: float = 2.5,
                          n_ref: int = 400_000, eps1: float = 1e-4, cache_dir=None,
                          jobs: int = 1) -> CreditReport:
    """Relative error of the optimal-CVaR estimate with and without IS on the factors.

    Both estimators solve one sample-path problem on ``n`` scenarios; the IS
    version transforms only the market factors, leaving defaults and
    exposures to be drawn from their conditional law.
    """
    loss = CreditLoss(spec)
    ref = reference_solution(spec.factor_model, loss, beta, n_ref, rng.stream(seed, rng.REFERENCE),
                             h=h, cache_dir=cache_dir)
    items = [(spec, beta, n, h, rng.stream(seed, i), eps1) for i in range(replications)]
    res = _pmap(_credit_one, items, jobs)
    is_est = np.array([r[0][0] for r in res])
    saa_est = np.array([r[1][0] for r in res])
    return CreditReport(beta, n, ref.cvar, ref.theta,
                        np.abs(is_est / ref.cvar - 1.0), np.abs(saa_est / ref.cvar - 1.0),
                        np.array([r[0][1] for r in res]), np.array([r[1][1] for r in res]))


# --------------------------------------------------------------------------
# output


def provenance(cfg_digest: str, seed, extra: dict | None = None) -> dict:
    info = {"config_hash": cfg_digest, "seed": seed, "version": __version__}
    info.update(extra or {})
    return info


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence], prov: dict) -> None:
    """CSV with ``# key=value`` provenance lines ahead of the header row."""
    buf = io.StringIO()
    for k in sorted(prov):
        buf.write(f"# {k}={prov[k]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return v


def figure_fig1b(cfg: ExperimentConfig, out: Path, beta: float = 1e-3, r: float = 0.2,
                 hs=(1.0, 2.5, 4.0), n: int = 2000, prov=None) -> WorstCaseSE:
    st = Study(cfg, beta)
    ref = Decision(st.reference.var, st.reference.theta)
    res = worst_case_se(st.model, st.loss, beta, r, hs, n, ref, seed=rng.stream(cfg.seed, 11))
    rows = [(beta, "saa", "", res.se_saa)] + [(beta, "is", h, v) for h, v in res.se_is_by_h.items()]
    write_csv(out / "fig1b.csv", ["beta", "method", "h", "worst_relative_se"], rows, prov or {})
    return res


def figure_fig2(cfg: ExperimentConfig, out: Path, prov=None) -> MetricReport:
    rep = compare_methods(cfg)
    write_csv(out / "fig2a.csv", ["beta", "method", "replications", "rel_rmse", "rel_rmse_se"],
              [(r.beta, r.method, r.replications, r.rel_rmse, r.rel_rmse_se) for r in rep.rows],
              prov or {})
    write_csv(out / "fig2b.csv", ["beta", "method", "replications", "median_regret_pct",
                                  "mean_regret_pct", "regret_se_pct"],
              [(r.beta, r.method, r.replications, r.median_regret, r.mean_regret, r.regret_se)
               for r in rep.rows], prov or {})
    return rep


def figure_fig3a(cfg: ExperimentConfig, out: Path, beta: float = 5e-4,
                 h0s=(0.5, 1, 2, 4, 8), prov=None) -> dict:
    sweep = h0_sweep(cfg, beta, h0s)
    write_csv(out / "fig3a.csv", ["beta", "h0", "replications", "median_regret_pct", "regret_se_pct"],
              [(beta, h0, m.replications, m.median_regret, m.regret_se) for h0, m in sweep.items()],
              prov or {})
    return sweep


def figure_fig3b(cfg: ExperimentConfig, out: Path, betas=(0.037, 0.003), replications: int | None = None,
                 methods=("vanilla", "enhanced", "saa"), target: float = 1.0, prov=None) -> list:
    results = []
    for beta in betas:
        st = Study(cfg, beta)
        for method in methods:
            results.append(samples_to_regret(method, st, target,
                                             replications or cfg.search_replications))
    rows = [(b.beta, b.method, b.budget, b.achieved, b.reached) for b in results]
    write_csv(out / "fig3b.csv", ["beta", "method", "samples_to_1pct", "median_regret_pct", "reached"],
              rows, prov or {})
    return results


def figure_fig4(out: Path, beta: float = 1e-3, n: int = 2000, replications: int = 20, seed: int = 0,
                cache_dir=None, jobs: int = 1, spec: CreditModelSpec | None = None,
                prov=None) -> CreditReport:
    spec = spec or CreditModelSpec.default()
    rep = run_credit_experiment(spec, beta, n, replications, seed, cache_dir=cache_dir, jobs=jobs)
    rows = []
    for i in range(replications):
        rows.append((i, "is", rep.is_errors[i], *rep.is_thetas[i]))
        rows.append((i, "saa", rep.saa_errors[i], *rep.saa_thetas[i]))
    k = spec.n_classes
    write_csv(out / "fig4.csv", ["replication", "method", "relative_error"] + [f"theta{i}" for i in range(k)],
              rows, {**(prov or {}), "reference_cvar": f"{rep.reference:.10g}", "beta": beta, "n": n})
    return rep
