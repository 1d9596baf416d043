"""Rockafellar-Uryasev CVaR objective and its sample-average estimators.

For a batch of (possibly transformed) scenarios ``z_i`` with likelihood-ratio
weights ``L_i`` the sample-path objective is

    f(u, theta) = u + 1/(n beta) * sum_i (l(z_i, theta) - u)^+ * L_i,

with plain SAA recovered by ``L_i = 1`` and ``z_i = x_i``.  Its minimiser in
``u`` at fixed theta is a weighted (1 - beta)-quantile of the losses and the
minimum value is the weighted CVaR.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .losses import BoundLoss, LossModel
from .models import ModelSpec, SampleBatch, sample_x
from .rng import LOSS_NOISE, Seed, stream
from .transform import TransformedBatch, TransformParams, identity_batch, transform_batch

logger = logging.getLogger(__name__)


class ConsistencyError(ValueError):
    """Batch and call disagree on the tail level."""


@dataclass
class Decision:
    u: float
    theta: np.ndarray

    def __post_init__(self):
        self.u = float(self.u)
        self.theta = np.asarray(self.theta, dtype=float).copy()

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.u], self.theta])

    @classmethod
    def from_vector(cls, v) -> "Decision":
        return cls(v[0], v[1:])

    def copy(self) -> "Decision":
        return Decision(self.u, self.theta)


@dataclass
class ObjectiveSample:
    value: float
    subgrad: np.ndarray
    per_sample_terms: np.ndarray


def _objective(losses, grads, weights, dec: Decision, beta: float) -> ObjectiveSample:
    n = losses.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    excess = losses - dec.u
    tail = excess >= 0
    terms = np.where(tail, excess, 0.0) * weights
    scale = 1.0 / (n * beta)
    tail_w = np.where(tail, weights, 0.0)
    g_u = 1.0 - scale * np.sum(tail_w)
    g_theta = scale * (tail_w @ grads)
    return ObjectiveSample(
        value=dec.u + scale * np.sum(terms),
        subgrad=np.concatenate([[g_u], g_theta]),
        per_sample_terms=terms,
    )


def saa_objective(batch: SampleBatch | np.ndarray, dec: Decision, beta: float,
                  loss: LossModel, seed: Seed = 0) -> ObjectiveSample:
    """Plain sample-average objective and its subgradient at ``dec``."""
    x = batch.raw if isinstance(batch, SampleBatch) else np.atleast_2d(np.asarray(batch, dtype=float))
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    bound = loss.bind(x, seed)
    return _objective(bound.values(dec.theta), bound.grads(dec.theta), np.ones(len(bound)), dec, beta)


def is_objective(tbatch: TransformedBatch, dec: Decision, beta: float,
                 loss: LossModel, seed: Seed = 0) -> ObjectiveSample:
    """Likelihood-ratio weighted objective on transformed samples."""
    if not math.isclose(tbatch.beta, beta, rel_tol=1e-12):
        raise ConsistencyError(f"batch built for beta={tbatch.beta}, objective asked for beta={beta}")
    bound = loss.bind(tbatch.transformed, seed)
    return _objective(bound.values(dec.theta), bound.grads(dec.theta), tbatch.lr, dec, beta)


def weighted_tail_split(losses: np.ndarray, weights: np.ndarray, mass: float):
    """Locate the weighted upper quantile.

    Returns ``(u, order, k, frac)``: ``order[:k]`` indexes the losses strictly
    above ``u`` in decreasing order and ``order[k]`` sits at ``u``, where the
    cumulative weight first reaches ``mass``.  ``frac`` in (0, 1] is the share of
    that boundary sample needed to make the tail weight exactly ``mass``.
    """
    n = losses.shape[0]
    total = float(np.sum(weights))
    if total < mass:
        raise ValueError(
            f"total weight {total:.6g} below the tail mass {mass:.6g}; objective unbounded in u"
        )
    k = min(n, 64)
    while True:
        if k >= n:
            idx = np.argsort(-losses, kind="stable")
        else:
            part = np.argpartition(-losses, k)[:k]
            idx = part[np.argsort(-losses[part], kind="stable")]
        cum = np.cumsum(weights[idx])
        if cum[-1] >= mass or k >= n:
            break
        k = min(n, 4 * k)
    j = int(np.searchsorted(cum, mass * (1.0 - 1e-15)))
    j = min(j, idx.size - 1)
    before = cum[j - 1] if j > 0 else 0.0
    w_j = weights[idx[j]]
    frac = 1.0 if w_j <= 0 else min(1.0, max(0.0, (mass - before) / w_j))
    return float(losses[idx[j]]), idx, j, frac


class SamplePathObjective:
    """Objective oracle for one fixed batch; counts oracle calls.

    ``f(u, theta)`` returns the value and the subgradient with the closed tail
    indicator.  ``argmin_u(theta)`` performs the exact minimisation in ``u`` and
    returns the CVaR subgradient in theta, in which the boundary sample enters
    with the fraction that makes the weighted tail mass exactly ``n beta``.
    """

    def __init__(self, bound: BoundLoss, weights: np.ndarray, beta: float):
        self.bound = bound
        self.weights = np.asarray(weights, dtype=float)
        self.beta = float(beta)
        self.n = len(bound)
        self.calls = 0

    @property
    def theta_dim(self) -> int:
        return self.bound.scenarios.shape[1]

    def __call__(self, u: float, theta: np.ndarray):
        self.calls += 1
        s = _objective(self.bound.values(theta), self.bound.grads(theta), self.weights,
                       Decision(u, theta), self.beta)
        return s.value, s.subgrad[0], s.subgrad[1:]

    def argmin_u(self, theta: np.ndarray):
        self.calls += 1
        losses = self.bound.values(theta)
        mass = self.n * self.beta
        u, order, k, frac = weighted_tail_split(losses, self.weights, mass)
        top = order[:k]
        w_top = self.weights[top]
        scale = 1.0 / mass
        value = u + scale * float(np.sum((losses[top] - u) * w_top))
        grads = self.bound.grads(theta)
        g_theta = scale * (w_top @ grads[top] + frac * self.weights[order[k]] * grads[order[k]])
        return u, value, g_theta

    def per_sample_terms(self, u: float, theta: np.ndarray) -> np.ndarray:
        return np.maximum(self.bound.values(theta) - u, 0.0) * self.weights


def sample_path_objective(tbatch: TransformedBatch, loss: LossModel, beta: float,
                          seed: Seed = 0) -> SamplePathObjective:
    if not math.isclose(tbatch.beta, beta, rel_tol=1e-12):
        raise ConsistencyError(f"batch built for beta={tbatch.beta}, objective asked for beta={beta}")
    return SamplePathObjective(loss.bind(tbatch.transformed, seed), tbatch.lr, beta)


@dataclass
class CVaREstimate:
    var: float
    cvar: float
    se: float
    n: int
    tail_count: int
    warning: str | None = None


def cvar_from_weighted(losses: np.ndarray, weights: np.ndarray, beta: float) -> CVaREstimate:
    """VaR and CVaR of a weighted empirical loss distribution."""
    n = losses.shape[0]
    mass = n * beta
    u, order, k, _ = weighted_tail_split(losses, weights, mass)
    terms = np.maximum(losses - u, 0.0) * weights
    cvar = u + float(np.sum(terms)) / mass
    se = float(np.std(u + terms / beta, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return CVaREstimate(var=u, cvar=cvar, se=se, n=n, tail_count=k + 1)


def evaluate_cvar_at(theta, beta: float, model: ModelSpec, loss: LossModel, n: int,
                     use_is: bool = True, h: float = 2.5, seed: Seed = 0,
                     min_tail: int = 50) -> CVaREstimate:
    """Estimate ``(v_beta(theta), C_beta(theta))`` from a fresh sample of size ``n``."""
    theta = np.asarray(theta, dtype=float)
    batch = sample_x(model, n, seed)
    if use_is:
        tb = transform_batch(batch, model, TransformParams(h, beta, loss.order_rho))
    else:
        tb = identity_batch(batch, beta)
    losses = loss.bind(tb.transformed, stream(seed, LOSS_NOISE)).values(theta)
    est = cvar_from_weighted(losses, tb.lr, beta)
    if not use_is and n * beta < min_tail:
        est.warning = f"n*beta = {n * beta:.3g} < {min_tail}: too few tail samples for plain estimation"
    elif est.tail_count < min_tail:
        est.warning = f"only {est.tail_count} samples in the estimated tail"
    if est.warning:
        logger.warning(est.warning)
    return est
