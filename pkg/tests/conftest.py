import numpy as np
import pytest

from racvar.losses import LinearLoss
from racvar.models import ModelSpec


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("reference-cache")


@pytest.fixture
def exchangeable5():
    return ModelSpec.exchangeable(5, 0.5, 0.3)


@pytest.fixture
def linear5():
    return LinearLoss(5)


def exponential_model():
    return ModelSpec(np.array([1.0]), np.eye(1))


def weibull_half_model():
    return ModelSpec(np.array([0.5]), np.eye(1))


# acceptance reporting: sub-checks are folded into one line per criterion


def pytest_configure(config):
    config.acceptance_results = {}


@pytest.fixture
def criterion(request):
    def record(number: int, label: str, passed: bool, detail: str, gating: bool = True):
        request.config.acceptance_results.setdefault(number, []).append(
            (label, bool(passed), detail, gating))
        print(f"criterion {number} [{label}]: {'PASS' if passed else 'FAIL'} ({detail})")
        return passed
    return record


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "acceptance_results", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        parts = results[number]
        ok = all(p for _, p, _, gating in parts if gating)
        detail = "; ".join(f"{label}{'' if g else ' [supplementary]'}: {'pass' if p else 'FAIL'} ({d})"
                           for label, p, d, g in parts)
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} | {detail}")
