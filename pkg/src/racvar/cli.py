"""Command-line front end.

    racvar check-transform
    racvar solve --config run.ini
    racvar experiment {fig1b,fig2a,fig2b,fig3a,fig3b,fig4,credit,all}
    racvar validate-schedule [--config run.ini]

Exit status: 0 on success, 1 when a validation check fails, 2 on a
numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, rng
from .config import ConfigError, RunConfig, default_config, load_config
from .experiments import (figure_fig1b, figure_fig2, figure_fig3a, figure_fig3b, figure_fig4,
                          provenance, write_csv)
from .models import ModelSpec, sample_x
from .objective import Decision
from .ra import run_enhanced_ra, run_vanilla_ra, validate_schedule
from .transform import (TransformParams, inverse_transform, jacobian, transform,
                        transform_batch)

logger = logging.getLogger("racvar")

EXPERIMENTS = ("fig1b", "fig2a", "fig2b", "fig3a", "fig3b", "fig4", "credit", "all")


def numerical_det(x: np.ndarray, params: TransformParams, step: float = 1e-6) -> float:
    """Determinant of the central-difference Jacobian matrix of ``transform``."""
    d = x.size
    jac = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step * max(1.0, abs(x[j]))
        jac[:, j] = (transform(x + e, params) - transform(x - e, params)) / (2 * e[j])
    return float(np.linalg.det(jac))


def transform_checks(seed: int = 0, points: int = 100) -> list[tuple[str, bool, str]]:
    """Invariants of the transformation on random points."""
    gen = rng.generator(seed, 7)
    beta = 1e-3
    params = TransformParams(2.5, beta)
    out = []
    for d in (1, 2, 5):
        x = gen.uniform(0.0, 10.0, (points, d))
        rel = max(abs(jacobian(xi, params) / numerical_det(xi, params) - 1) for xi in x)
        out.append((f"jacobian vs numerical determinant, d={d}", rel <= 1e-4, f"max rel err {rel:.2e}"))
        z = transform(x, params)
        back = inverse_transform(z, params)
        err = float(np.max(np.abs(back - x) / np.maximum(np.abs(x), 1e-12)))
        out.append((f"inverse roundtrip, d={d}", err <= 1e-7, f"max rel err {err:.2e}"))
        out.append((f"monotone stretching, d={d}", bool(np.all(z >= x)), ""))
    x1 = gen.uniform(0.0, 10.0, (points, 1))
    slope = params.stretch ** (1.0 / params.rho)
    err = float(max(np.max(np.abs(transform(x1, params) / x1 - slope)),
                    np.max(np.abs(jacobian(x1, params) - slope))) / slope)
    out.append(("scalar closed form", err <= 1e-10, f"rel err {err:.2e}"))
    spec = ModelSpec.exchangeable(2, 0.5, 0.3)
    tb = transform_batch(sample_x(spec, 10_000, rng.stream(seed, 8)), spec, params)
    ok = bool(np.all(np.isfinite(tb.lr)) and np.all(tb.lr > 0))
    out.append(("likelihood ratios positive and finite", ok, f"min {tb.lr.min():.3g}, max {tb.lr.max():.3g}"))
    return out


def _git_revision() -> str:
    try:
        res = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        return res.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    exp = cfg.experiment
    updates = {"jobs": args.jobs, "out_dir": str(args.out)}
    if args.seed is not None:
        updates["seed"] = args.seed
    cfg.experiment = replace(exp, **updates)
    return cfg


def cmd_check_transform(args) -> int:
    results = transform_checks(args.seed or 0)
    for name, ok, detail in results:
        print(f"[{'pass' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    return 0 if all(ok for _, ok, _ in results) else 1


def cmd_validate_schedule(args) -> int:
    cfg = _load(args)
    report = validate_schedule(cfg.schedule)
    print(report.format())
    return 0 if report.passed else 1


def cmd_solve(args) -> int:
    cfg = _load(args)
    seed = cfg.experiment.seed
    start = Decision(0.0, np.eye(cfg.loss.theta_dim)[0])
    if cfg.method == "enhanced":
        trace = run_enhanced_ra(cfg.model, cfg.loss, cfg.beta, cfg.schedule, seed, start, cfg.h0, cfg.h_grid)
    else:
        h = None if cfg.method == "saa" else cfg.h
        trace = run_vanilla_ra(cfg.model, cfg.loss, cfg.beta, h, cfg.schedule, seed, start)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_json(out / "trace.json")
    rows = trace.summary_rows()
    write_csv(out / "trace.csv", list(rows[0]), [list(r.values()) for r in rows],
              provenance(cfg.digest, seed))
    for r in rows:
        print(f"stage {r['stage']}: m={r['m']} h={r['h']} eps={r['eps']:.3g} iterations={r['iterations']} "
              f"W={r['cumulative_work']} converged={r['converged']} objective={r['objective']:.6g}")
    print(f"final: u={trace.final.u:.6g} theta={np.array2string(trace.final.theta, precision=6)} "
          f"cvar_estimate={trace.final_estimate:.6g}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load(args)
    exp = cfg.experiment
    out = Path(args.out)
    prov = provenance(exp.digest(), exp.seed)
    names = ("fig1b", "fig2a", "fig3a", "fig3b", "fig4") if args.name == "all" else (args.name,)
    summary = {"provenance": {**prov, "git": _git_revision()}, "config": exp.to_dict(), "results": {}}
    for name in names:
        t0 = time.perf_counter()
        if name == "fig1b":
            r = figure_fig1b(exp, out, prov=prov)
            res = {"se_saa": r.se_saa, "se_is_by_h": r.se_is_by_h, "ratio": r.ratio}
        elif name in ("fig2a", "fig2b"):
            rep = figure_fig2(exp, out, prov=prov)
            res = [vars(r) for r in rep.rows]
        elif name == "fig3a":
            sweep = figure_fig3a(exp, out, prov=prov)
            res = {str(h): vars(m) for h, m in sweep.items()}
        elif name == "fig3b":
            res = [vars(b) for b in figure_fig3b(exp, out, prov=prov)]
        else:
            rep = figure_fig4(out, seed=exp.seed, cache_dir=exp.cache_dir or str(out / "cache"),
                              jobs=exp.jobs, spec=cfg.credit, prov=prov)
            res = {"reference": rep.reference, "is_median_error": rep.is_median,
                   "saa_median_error": rep.saa_median}
        summary["results"][name] = res
        summary.setdefault("runtime_seconds", {})[name] = time.perf_counter() - t0
        print(f"{name}: done")
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
    return 0


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="concurrent replications")
    common.add_argument("--verbose", "-v", action="count", default=0)
    parser = argparse.ArgumentParser(prog="racvar", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check-transform", parents=[common], help="run the transformation invariant suite")
    sub.add_parser("solve", parents=[common], help="run one RA optimisation from a config")
    e = sub.add_parser("experiment", parents=[common], help="run a benchmark study")
    e.add_argument("name", choices=EXPERIMENTS)
    sub.add_parser("validate-schedule", parents=[common], help="check a schedule's growth conditions")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"check-transform": cmd_check_transform, "solve": cmd_solve,
                "experiment": cmd_experiment, "validate-schedule": cmd_validate_schedule}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        parser.error(f"config: {exc}")
    except (ArithmeticError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
