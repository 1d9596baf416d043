import json

import numpy as np
import pytest

from oracles import cvar_lp
from racvar import rng
from racvar.cli import main, numerical_det, transform_checks
from racvar.config import ConfigError, default_config, load_config, parse_config
from racvar.losses import CreditLoss
from racvar.models import ModelSpec, sample_x
from racvar.ra import COND_GROWTH
from racvar.transform import TransformParams, jacobian


def test_default_config():
    cfg = default_config()
    assert cfg.model.dim == 5 and cfg.beta == 0.037 and cfg.method == "vanilla" and cfg.h == 2.5
    assert cfg.schedule.sample_sizes == (500, 1000, 2000, 4000) and cfg.schedule.relative


def test_parse_sections():
    cfg = parse_config("""
[model]
dim = 2
alphas = 0.5, 1.0
corr = 1 0.2; 0.2 1
[problem]
beta = 0.01
method = enhanced
h = none
h_grid = 1 2 4
[schedule]
sample_sizes = 100, 400
""")
    assert np.allclose(cfg.model.alphas, [0.5, 1.0]) and cfg.model.copula_corr[0, 1] == 0.2
    assert cfg.h is None and cfg.h_grid == (1.0, 2.0, 4.0) and cfg.method == "enhanced"
    assert cfg.schedule.tolerances == pytest.approx((1e-3, 5e-4))


def test_credit_config():
    cfg = parse_config("[problem]\nloss = credit\n[credit]\nmin_return = 0.045\n")
    assert isinstance(cfg.loss, CreditLoss) and cfg.model.dim == 4
    assert cfg.credit.min_return == 0.045


@pytest.mark.parametrize("text", [
    "[model]\ndimension = 3\n",
    "[solver]\neps = 1\n",
    "[problem]\nbeta = 0.5\n",
    "[problem]\nmethod = newton\n",
    "[problem]\nloss = quadratic\n",
    "[model]\ndim = 2\nalphas = 1 1 1\n",
    "[model]\ncorr = 1 0.2; 0.2\n",
    "[schedule]\nm1 = ten\n",
    "[model]\ndim = 2\nalphas = 0.5 1\n[experiment]\nreplications = 4\n",
    "not an ini file",
])
def test_malformed_config_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_config_digest_tracks_text():
    assert parse_config("[problem]\nbeta = 0.01\n").digest != parse_config("[problem]\nbeta = 0.02\n").digest


def test_numerical_det_matches_closed_form():
    x = np.array([0.3, 2.0, 5.0])
    p = TransformParams(2.5, 1e-3)
    assert numerical_det(x, p) == pytest.approx(float(jacobian(x, p)), rel=1e-6)


def test_transform_checks_all_pass():
    assert all(ok for _, ok, _ in transform_checks())


def test_cli_check_transform(capsys):
    assert main(["check-transform"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "[pass] jacobian vs numerical determinant, d=5" in out


def test_cli_validate_schedule_default(capsys):
    assert main(["validate-schedule"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_cli_validate_schedule_constant_sizes(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[schedule]\nsample_sizes = 1000 1000 1000 1000 1000\n"
                   "tolerances = 1e-2 5e-3 2.5e-3 1.25e-3 6.25e-4\n")
    assert main(["validate-schedule", "--config", str(cfg)]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and COND_GROWTH in out


def test_cli_bad_config_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[problem]\nbogus = 1\n")
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--config", str(cfg)])
    assert exc.value.code == 2 and "bogus" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["solve", "--unknown-flag"])


def test_cli_single_stage_without_transform_is_plain_saa(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[problem]\nh = none\n[schedule]\nsample_sizes = 600\ntolerances = 1e-7\n")
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--seed", "4", "--out", str(out)]) == 0
    trace = json.loads((out / "trace.json").read_text())
    x = sample_x(ModelSpec.exchangeable(5, 0.5, 0.3), 600, rng.stream(4, 0, rng.SAMPLE)).raw
    ref, _, _ = cvar_lp(x, np.ones(600), 0.037)
    assert trace["method"] == "saa" and len(trace["stages"]) == 1
    assert trace["final_estimate"] == pytest.approx(ref, rel=1e-5)
    csv_lines = (out / "trace.csv").read_text().splitlines()
    assert csv_lines[0].startswith("# config_hash=") and any(ln == "# seed=4" for ln in csv_lines)
    assert "cvar_estimate" in capsys.readouterr().out


def test_cli_solve_enhanced_runs(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[problem]\nmethod = enhanced\nbeta = 0.01\n[schedule]\nm1 = 200\nstages = 3\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    trace = json.loads((tmp_path / "trace.json").read_text())
    assert trace["method"] == "enhanced" and len(trace["stages"]) == 3


SMALL = """[experiment]
n_ref = 20000
n_eval = 20000
search_replications = 2
replications = 2
seed = 3
"""


def test_cli_experiment_fig3b(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL)
    out = tmp_path / "out"
    assert main(["experiment", "fig3b", "--config", str(cfg), "--out", str(out)]) == 0
    lines = [ln for ln in (out / "fig3b.csv").read_text().splitlines() if not ln.startswith("#")]
    assert lines[0].split(",")[:3] == ["beta", "method", "samples_to_1pct"]
    assert len(lines) == 1 + 2 * 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["provenance"]["seed"] == 3 and "fig3b" in summary["runtime_seconds"]
    header = (out / "fig3b.csv").read_text().splitlines()[:3]
    assert {h.split("=")[0] for h in header} == {"# config_hash", "# seed", "# version"}
