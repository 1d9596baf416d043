import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import projection_qp
from racvar.losses import ConfigurationError, ConstraintSet, CreditLoss, LinearLoss, project
from racvar.models import CreditModelSpec, sample_x


def test_linear_loss_examples():
    loss = LinearLoss(2)
    assert loss.eval(np.array([3.0, 5.0]), np.array([1.0, 0.0])) == 3.0
    assert loss.eval(np.array([2.0, 4.0]), np.array([0.5, 0.5])) == 3.0
    assert np.array_equal(loss.grad_theta(np.array([2.0, 4.0]), np.array([0.5, 0.5])), [2.0, 4.0])
    assert loss.order_rho == 1.0
    x, th = np.array([1.3, 0.2]), np.array([0.4, 0.6])
    for t in (1.0, 10.0, 1e4):
        assert loss.eval(t * x, th) / t == pytest.approx(loss.eval(x, th), rel=1e-14)


def test_credit_loss_examples():
    spec = CreditModelSpec.default()
    loss = CreditLoss(spec)
    x = sample_x(spec.factor_model, 3, 0).raw * 5
    assert np.all(loss.eval(x, np.zeros(2), seed=1) == 0.0)
    th, th2 = np.array([0.3, 0.7]), np.array([-1.0, 2.0])
    mid = loss.eval(x, 0.5 * (th + th2), seed=1)
    assert np.allclose(mid, 0.5 * loss.eval(x, th, seed=1) + 0.5 * loss.eval(x, th2, seed=1), rtol=1e-14)
    all_default = CreditModelSpec(spec.factor_model, np.array([np.inf, np.inf]), spec.slopes,
                                  np.array([300, 700]), 1.0, 1.0, spec.returns, spec.min_return)
    assert CreditLoss(all_default).eval(x[0], np.array([2.0, 1.0])) == pytest.approx(2 * 300 + 700)


def test_grad_matches_finite_difference():
    gen = np.random.default_rng(3)
    spec = CreditModelSpec.default()
    for loss, x in ((LinearLoss(4), gen.uniform(0, 5, 4)), (CreditLoss(spec), np.array([3.0, 2.0, 4.0, 1.0]))):
        th = gen.normal(size=loss.theta_dim)
        g = loss.grad_theta(x, th, seed=2)
        for j in range(th.size):
            e = np.zeros_like(th)
            e[j] = 1e-5
            fd = (loss.eval(x, th + e, seed=2) - loss.eval(x, th - e, seed=2)) / 2e-5
            assert fd == pytest.approx(g[j], rel=1e-6, abs=1e-9)


def test_projection_examples():
    c = ConstraintSet()
    assert np.allclose(project(np.array([0.0, 0.0]), c), [0.5, 0.5])
    # excess sum 2 spread over two coordinates
    assert np.allclose(project(np.array([2.0, 1.0]), c), [1.0, 0.0])
    assert np.allclose(project(np.array([2.0, 1.0]), c), projection_qp(np.array([2.0, 1.0])), atol=1e-8)
    th = np.array([0.2, 0.3, 0.5])
    assert np.array_equal(project(th, c), th - (th.sum() - 1) / 3)


def test_return_floor_projection_matches_qp():
    r = np.array([0.03, 0.05, 0.04])
    c = ConstraintSet.return_floor(r, 0.045)
    gen = np.random.default_rng(1)
    for _ in range(20):
        th = gen.normal(size=3)
        p = project(th, c)
        assert abs(p.sum() - 1) < 1e-12 and r @ p >= 0.045 - 1e-15
        assert np.allclose(p, projection_qp(th, r, 0.045), atol=1e-7)


def test_infeasible_constraint():
    with pytest.raises(ConfigurationError):
        ConstraintSet.return_floor(np.array([0.03, 0.03]), 0.05)
    with pytest.raises(ConfigurationError):
        ConstraintSet("box")


vec = arrays(np.float64, 3, elements=st.floats(-10, 10))


@settings(max_examples=100, deadline=None)
@given(vec, vec)
def test_projection_idempotent_nonexpansive(a, b):
    for c in (ConstraintSet(), ConstraintSet.return_floor(np.array([0.01, 0.05, 0.02]), 0.03)):
        pa, pb = project(a, c), project(b, c)
        assert np.allclose(project(pa, c), pa, atol=1e-12)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-10
        assert c.residual(pa) <= 1e-12
