import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from racvar.models import (CreditModelSpec, DomainError, InvalidCorrelationError, ModelSpec,
                           class_losses, log_density, sample_credit_loss, sample_x,
                           weibull_from_uniform)


def test_inverse_cdf_examples():
    assert weibull_from_uniform(1 - math.exp(-1), 1.0) == pytest.approx(1.0, rel=1e-14)
    assert weibull_from_uniform(1 - math.exp(-2), 0.5) == pytest.approx(4.0, rel=1e-14)


def test_weibull_tail_frequency():
    spec = ModelSpec(np.array([0.5, 0.5]), np.eye(2))
    x = sample_x(spec, 100_000, 11).raw
    p = math.exp(-2)
    hit = np.mean(x[:, 0] > 4)
    assert abs(hit - p) < 3 * math.sqrt(p * (1 - p) / 100_000)


def test_marginals_pass_ks():
    spec = ModelSpec(np.array([0.5, 1.0, 2.0]), np.full((3, 3), 0.4) + 0.6 * np.eye(3))
    x = sample_x(spec, 100_000, 3).raw
    assert np.all(x >= 0) and x.shape == (100_000, 3)
    for i, a in enumerate(spec.alphas):
        res = stats.kstest(x[:, i], lambda t, a=a: 1 - np.exp(-np.maximum(t, 0) ** a))
        # 1% critical value of the KS statistic for large n
        assert res.statistic < 1.628 / math.sqrt(x.shape[0])


def test_rank_correlation_matches_copula():
    r = 0.5
    spec = ModelSpec(np.array([0.5, 1.0]), np.array([[1, r], [r, 1]]))
    x = sample_x(spec, 100_000, 5).raw
    rho_s = stats.spearmanr(x[:, 0], x[:, 1]).statistic
    # Spearman correlation of a Gaussian copula, invariant to the marginals
    assert abs(rho_s - 6 / math.pi * math.asin(r / 2)) < 0.02


def test_determinism():
    spec = ModelSpec.exchangeable(3)
    a, b = sample_x(spec, 1000, (4, 2)), sample_x(spec, 1000, (4, 2))
    assert np.array_equal(a.raw, b.raw)
    assert not np.array_equal(a.raw, sample_x(spec, 1000, (4, 3)).raw)


def test_invalid_correlation():
    with pytest.raises(InvalidCorrelationError):
        ModelSpec(np.array([1.0, 1.0]), np.array([[1, 1.2], [1.2, 1]]))
    with pytest.raises(InvalidCorrelationError):
        ModelSpec(np.array([1.0, 1.0]), np.array([[1, 0.2], [0.3, 1]]))
    with pytest.raises(ValueError):
        ModelSpec(np.array([1.0, -1.0]), np.eye(2))


def test_log_density_examples():
    assert log_density(ModelSpec(np.array([1.0]), np.eye(1)), np.array([1.0])) == pytest.approx(-1.0, abs=1e-14)
    assert log_density(ModelSpec(np.array([1.0, 1.0]), np.eye(2)), np.array([1.0, 2.0])) == pytest.approx(-3.0, abs=1e-14)
    with pytest.raises(DomainError):
        log_density(ModelSpec.exchangeable(2), np.array([1.0, 0.0]))


def test_density_integrates_to_one_2d():
    spec = ModelSpec(np.array([1.0, 1.0]), np.array([[1, 0.5], [0.5, 1]]))
    f = lambda y, x: math.exp(log_density(spec, np.array([x, y])))
    total, _ = integrate.dblquad(f, 1e-12, 40, 1e-12, 40, epsabs=1e-6)
    assert total == pytest.approx(1.0, abs=1e-3)


def test_density_integrates_to_one_1d_heavy():
    spec = ModelSpec(np.array([0.5]), np.eye(1))
    total, _ = integrate.quad(lambda x: math.exp(log_density(spec, np.array([x]))), 0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-3)


def test_log_density_matches_scipy_copula():
    # Gaussian copula density through scipy's multivariate normal
    r = np.array([[1, 0.3, 0.1], [0.3, 1, -0.2], [0.1, -0.2, 1]])
    spec = ModelSpec(np.array([0.5, 1.0, 1.5]), r)
    x = np.array([[0.3, 2.0, 0.7], [5.0, 0.1, 1.2], [40.0, 3.0, 2.5]])
    u = 1 - np.exp(-x ** spec.alphas)
    z = stats.norm.ppf(u)
    marg = np.sum(np.log(spec.alphas) + (spec.alphas - 1) * np.log(x) - x ** spec.alphas, axis=1)
    cop = stats.multivariate_normal(np.zeros(3), r).logpdf(z) - np.sum(stats.norm.logpdf(z), axis=1)
    assert np.allclose(log_density(spec, x), marg + cop, rtol=1e-9)


def test_deep_tail_density_finite():
    spec = ModelSpec.exchangeable(2, 0.5, 0.3)
    v = log_density(spec, np.array([[1e4, 1e4], [1e6, 1.0]]))
    assert np.all(np.isfinite(v))


def _credit(intercepts, slopes=0.0, loans=(5000, 5000), low=0.0, high=1.0):
    return CreditModelSpec(ModelSpec.exchangeable(4, 1.0, 0.3), np.array(intercepts, float),
                           np.full((len(intercepts), 4), slopes), np.array(loans), low, high,
                           np.array([0.03, 0.05]), 0.04)


def test_credit_no_defaults():
    spec = _credit([-np.inf, -np.inf])
    assert sample_credit_loss(spec, np.ones(4), np.array([0.5, 0.5]), 0) == 0.0


def test_credit_all_default_unit_exposure():
    spec = _credit([np.inf, np.inf], low=1.0, high=1.0)
    assert sample_credit_loss(spec, np.ones(4), np.array([0.5, 0.5]), 0) == pytest.approx(5000.0)


def test_credit_mean_loss():
    spec = _credit([math.log(0.01 / 0.99), math.log(0.02 / 0.98)])
    x = np.zeros((10_000, 4))
    y = class_losses(spec, x, 9)[:, 0]
    mean = 5000 * 0.01 * 0.5
    assert abs(y.mean() - mean) < 3 * y.std(ddof=1) / math.sqrt(y.size)


def test_default_credit_calibration():
    # unconditional default rates of roughly 1% and 2%
    spec = CreditModelSpec.default()
    x = sample_x(spec.factor_model, 200_000, 1).raw
    p = spec.default_probability(x).mean(axis=0)
    assert 0.007 < p[0] < 0.015 and 0.014 < p[1] < 0.03


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.floats(0.2, 3.0), st.floats(-0.2, 0.8), st.integers(0, 2**31))
def test_samples_nonnegative_and_sized(dim, alpha, rho, seed):
    spec = ModelSpec.exchangeable(dim, alpha, rho) if dim > 1 else ModelSpec(np.array([alpha]), np.eye(1))
    x = sample_x(spec, 50, seed).raw
    assert x.shape == (50, dim) and np.all(x >= 0) and np.all(np.isfinite(x))
