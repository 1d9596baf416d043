"""INI configuration files for the command line.

Sections and keys (all optional; defaults in brackets)::

    [model]       dim [5], alpha [0.5] or alphas (list), corr_offdiag [0.3]
                  or corr (rows separated by ';')
    [credit]      factor_dim [4], factor_alpha [1.0], factor_corr_offdiag [0.3],
                  intercepts, slopes (rows separated by ';'), loans_per_class,
                  exposure_low, exposure_high, returns, min_return
    [problem]     loss [linear | credit], beta [0.037], method
                  [vanilla | enhanced | saa], h [2.5] (``none`` for no IS), h0 [2.5],
                  h_grid (list)
    [schedule]    sample_sizes and tolerances (lists), or m1 [500], stages [4],
                  growth [2], eps1 [1e-3]; relative [true]
    [experiment]  betas, budget, stage_fractions, replications,
                  search_replications, n_ref, n_eval, eps1, h, h0, h_grid, seed,
                  cache_dir

Lists are comma or whitespace separated.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .experiments import ExperimentConfig
from .losses import CreditLoss, LinearLoss, LossModel
from .models import CreditModelSpec, ModelSpec
from .ra import DEFAULT_H_GRID, RASchedule, geometric_schedule

KNOWN = {
    "model": {"dim", "alpha", "alphas", "corr_offdiag", "corr"},
    "credit": {"factor_dim", "factor_alpha", "factor_corr_offdiag", "intercepts", "slopes",
               "loans_per_class", "exposure_low", "exposure_high", "returns", "min_return"},
    "problem": {"loss", "beta", "method", "h", "h0", "h_grid"},
    "schedule": {"sample_sizes", "tolerances", "m1", "stages", "growth", "eps1", "relative"},
    "experiment": {"betas", "budget", "stage_fractions", "replications", "search_replications",
                   "n_ref", "n_eval", "eps1", "seed", "cache_dir", "h", "h0", "h_grid"},
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected a list of numbers, got {text!r}") from exc


def _matrix(text: str) -> np.ndarray:
    rows = [_floats(r) for r in text.split(";") if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"ragged matrix {text!r}")
    return np.array(rows)


def _optional_h(text: str) -> float | None:
    return None if text.strip().lower() in ("none", "off", "") else float(text)


@dataclass
class RunConfig:
    model: ModelSpec
    loss: LossModel
    beta: float = 0.037
    method: str = "vanilla"
    h: float | None = 2.5
    h0: float = 2.5
    h_grid: tuple = DEFAULT_H_GRID
    schedule: RASchedule = field(default_factory=lambda: geometric_schedule(500, 4, 1e-3, relative=True))
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    credit: CreditModelSpec | None = None
    digest: str = ""


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for section in cp.sections():
        if section not in KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        extra = set(cp[section]) - KNOWN[section]
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")
    try:
        return _build(cp, hashlib.sha256(text.encode()).hexdigest()[:16])
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def default_config() -> RunConfig:
    return parse_config("")


def _build(cp: configparser.ConfigParser, digest: str) -> RunConfig:
    m = cp["model"] if cp.has_section("model") else {}
    dim = int(m.get("dim", 5))
    alphas = _floats(m["alphas"]) if "alphas" in m else [float(m.get("alpha", 0.5))] * dim
    if len(alphas) != dim:
        raise ConfigError(f"alphas has {len(alphas)} entries, dim is {dim}")
    rho = float(m.get("corr_offdiag", 0.3))
    corr = _matrix(m["corr"]) if "corr" in m else np.full((dim, dim), rho) + (1 - rho) * np.eye(dim)
    model = ModelSpec(np.array(alphas), corr)

    p = cp["problem"] if cp.has_section("problem") else {}
    loss_kind = p.get("loss", "linear")
    credit = None
    if loss_kind == "credit":
        credit = _credit(cp["credit"] if cp.has_section("credit") else {})
        model = credit.factor_model
        loss: LossModel = CreditLoss(credit)
    elif loss_kind == "linear":
        loss = LinearLoss(dim)
    else:
        raise ConfigError(f"unknown loss {loss_kind!r}")
    method = p.get("method", "vanilla")
    if method not in ("vanilla", "enhanced", "saa"):
        raise ConfigError(f"unknown method {method!r}")
    beta = float(p.get("beta", 0.037))
    if not 0.0 < beta < math.exp(-1.0):
        raise ConfigError(f"beta must lie in (0, 1/e), got {beta}")
    h = _optional_h(p.get("h", "2.5"))
    h0 = float(p.get("h0", 2.5))
    h_grid = tuple(_floats(p["h_grid"])) if "h_grid" in p else DEFAULT_H_GRID

    s = cp["schedule"] if cp.has_section("schedule") else {}
    relative = (s.get("relative", "true").lower() in ("1", "true", "yes", "on"))
    if "sample_sizes" in s:
        sizes = [int(v) for v in _floats(s["sample_sizes"])]
        if "tolerances" in s:
            tols = _floats(s["tolerances"])
        else:
            eps1 = float(s.get("eps1", 1e-3))
            tols = [eps1 / math.sqrt(v / sizes[0]) for v in sizes]
        schedule = RASchedule(tuple(sizes), tuple(tols), relative=relative)
    else:
        schedule = geometric_schedule(int(s.get("m1", 500)), int(s.get("stages", 4)),
                                      float(s.get("eps1", 1e-3)), float(s.get("growth", 2.0)),
                                      relative=relative)

    e = cp["experiment"] if cp.has_section("experiment") else {}
    exp = ExperimentConfig(dim=dim, alpha=alphas[0], corr_offdiag=rho)
    updates = {}
    if "betas" in e:
        updates["betas"] = tuple(_floats(e["betas"]))
    if "stage_fractions" in e:
        updates["stage_fractions"] = tuple(_floats(e["stage_fractions"]))
    if "h_grid" in e:
        updates["h_grid"] = tuple(_floats(e["h_grid"]))
    for key in ("budget", "replications", "search_replications", "n_ref", "n_eval", "seed"):
        if key in e:
            updates[key] = int(float(e[key]))
    for key in ("eps1", "h", "h0"):
        if key in e:
            updates[key] = float(e[key])
    if "cache_dir" in e:
        updates["cache_dir"] = e["cache_dir"]
    exp = replace(exp, **updates)
    if cp.has_section("experiment") and (len(set(alphas)) > 1 or "corr" in m):
        # the portfolio studies build an exchangeable model from alpha and corr_offdiag
        raise ConfigError("[experiment] studies need an exchangeable model (alpha, corr_offdiag)")
    return RunConfig(model, loss, beta, method, h, h0, h_grid, schedule, exp, credit, digest)


def _credit(c) -> CreditModelSpec:
    base = CreditModelSpec.default(float(c.get("factor_corr_offdiag", 0.3)))
    m = int(c.get("factor_dim", base.factor_model.dim))
    factor = ModelSpec.exchangeable(m, float(c.get("factor_alpha", 1.0)),
                                    float(c.get("factor_corr_offdiag", 0.3)))
    slopes = _matrix(c["slopes"]) if "slopes" in c else base.slopes
    if slopes.shape[1] != m:
        raise ConfigError(f"slopes need {m} columns, got {slopes.shape[1]}")
    return CreditModelSpec(
        factor_model=factor,
        intercepts=np.array(_floats(c["intercepts"])) if "intercepts" in c else base.intercepts,
        slopes=slopes,
        loans_per_class=np.array(_floats(c["loans_per_class"]), dtype=np.int64)
        if "loans_per_class" in c else base.loans_per_class,
        exposure_low=np.array(_floats(c["exposure_low"])) if "exposure_low" in c else base.exposure_low,
        exposure_high=np.array(_floats(c["exposure_high"])) if "exposure_high" in c else base.exposure_high,
        returns=np.array(_floats(c["returns"])) if "returns" in c else base.returns,
        min_return=float(c.get("min_return", base.min_return)),
    )
