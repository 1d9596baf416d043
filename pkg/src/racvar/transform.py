"""Self-structuring importance-sampling transformation.

Samples of X are pushed toward the tail by the deterministic map

    T_h(x)_i = x_i * s_h ** kappa_i(x),
    kappa_i(x) = log(1 + |x_i|) / (rho * max_j log(1 + |x_j|)),
    s_h = h * log(log(1 / beta)),

and reweighted by the likelihood ratio
``L_h = f_X(T_h(x)) / f_X(x) * J_h(x)`` where ``J_h`` is the Jacobian
determinant of ``T_h``.  The coordinate attaining the max is scaled by exactly
``s_h**(1/rho)``, so the Jacobian matrix has a diagonal row there and the
determinant factorises into the closed form used by :func:`jacobian`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .models import ModelSpec, SampleBatch, log_density


class StretchTooSmallError(ValueError):
    """The stretch factor ``s_h`` does not exceed 1."""


class TransformDomainError(ValueError):
    """Tail level too large for ``log log (1/beta)`` to be positive."""


class InversionError(ArithmeticError):
    """inverse_transform did not reach the requested residual."""


def min_admissible_h(beta: float) -> float:
    """Infimum of the h values for which ``s_h > 1``."""
    if not 0.0 < beta < math.exp(-1.0):
        raise TransformDomainError(f"beta must lie in (0, 1/e), got {beta}")
    return 1.0 / math.log(math.log(1.0 / beta))


@dataclass(frozen=True)
class TransformParams:
    h: float
    beta: float
    rho: float = 1.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        stretch_factor(self)

    @property
    def stretch(self) -> float:
        return stretch_factor(self)

    @classmethod
    def from_stretch(cls, s: float, beta: float, rho: float = 1.0) -> "TransformParams":
        """Parameters whose stretch factor equals ``s`` at tail level ``beta``."""
        return cls(s / math.log(math.log(1.0 / beta)), beta, rho)


def is_admissible(h: float, beta: float) -> bool:
    if not (h > 0 and 0.0 < beta < math.exp(-1.0)):
        return False
    return h * math.log(math.log(1.0 / beta)) > 1.0


def stretch_factor(params: TransformParams) -> float:
    """``s_h = h log log(1/beta)``; must exceed 1."""
    h, beta = params.h, params.beta
    if not 0.0 < beta < math.exp(-1.0):
        raise TransformDomainError(f"beta must lie in (0, 1/e) so that log log(1/beta) > 0, got {beta}")
    s = h * math.log(math.log(1.0 / beta))
    if s <= 1.0:
        raise StretchTooSmallError(
            f"stretch factor s_h = {s:.6g} <= 1 for h = {h}, beta = {beta}; "
            f"h must exceed {min_admissible_h(beta):.6g}"
        )
    return s


def _log_scale(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``log(1+|x|)`` and its row-wise max (keepdims)."""
    lg = np.log1p(np.abs(x))
    return lg, lg.max(axis=-1, keepdims=True)


def kappa(x, rho: float) -> np.ndarray:
    """Exponent vector; rows equal to zero map to zero."""
    x = np.asarray(x, dtype=float)
    lg, top = _log_scale(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        k = lg / (rho * top)
    return np.where(top > 0, k, 0.0)


def transform(x, params: TransformParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x * params.stretch ** kappa(x, params.rho)


def log_jacobian(x, params: TransformParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    log_s = math.log(params.stretch)
    lg, top = _log_scale(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(top > 0, log_s / (params.rho * top), 0.0)
        k = np.where(top > 0, lg / (params.rho * top), 0.0)
    log_jt = np.log1p(scale * np.abs(x) / (1.0 + np.abs(x)))
    return np.sum(log_jt, axis=-1) - np.max(log_jt, axis=-1) + log_s * np.sum(k, axis=-1)


def jacobian(x, params: TransformParams) -> np.ndarray:
    """Jacobian determinant of ``T_h`` at ``x``; equals 1 at the origin."""
    return np.exp(log_jacobian(x, params))


def inverse_transform(z, params: TransformParams, max_iter: int = 200,
                      rtol: float = 1e-8) -> np.ndarray:
    """Invert ``T_h``.

    ``T_h`` preserves the ordering of ``|x_i|`` and scales the largest
    coordinate by exactly ``s_h**(1/rho)``, which pins down the normaliser
    ``max_j log(1+|x_j|)``.  Each remaining coordinate then solves a scalar
    increasing equation on the bracket ``[|z_i| s_h**(-1/rho), |z_i|]``,
    handled by bisection.
    """
    z = np.asarray(z, dtype=float)
    squeeze = z.ndim == 1
    z2 = np.atleast_2d(z)
    log_s = math.log(params.stretch)
    top_scale = params.stretch ** (1.0 / params.rho)
    az = np.abs(z2)
    x_top = az.max(axis=1, keepdims=True) / top_scale
    top = np.log1p(x_top)
    coeff = np.divide(log_s / params.rho, top, out=np.zeros_like(top), where=top > 0)

    def excess(t):
        # T applied to a magnitude t, minus |z|; increasing in t
        return t * np.exp(coeff * np.log1p(t)) - az

    lo = az / top_scale
    hi = az.copy()
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        up = excess(mid) > 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
        if np.all(hi - lo <= 1e-16 * np.maximum(hi, 1e-300)):
            break
    x = np.sign(z2) * 0.5 * (lo + hi)
    residual = np.max(np.abs(transform(x, params) - z2), axis=1)
    bound = rtol * (1.0 + np.max(az, axis=1))
    if np.any(residual > bound):
        worst = int(np.argmax(residual / bound))
        raise InversionError(
            f"inverse_transform residual {residual[worst]:.3g} exceeds {bound[worst]:.3g} "
            f"after {max_iter} iterations"
        )
    return x[0] if squeeze else x


def log_likelihood_ratio(x, z, spec: ModelSpec, params: TransformParams) -> np.ndarray:
    return log_density(spec, z) - log_density(spec, x) + log_jacobian(x, params)


def likelihood_ratio(x, z, spec: ModelSpec, params: TransformParams) -> np.ndarray:
    """``f_X(z) / f_X(x) * J_h(x)`` for ``z = T_h(x)``, exponentiated once."""
    return np.exp(log_likelihood_ratio(x, z, spec, params))


@dataclass(frozen=True)
class TransformedBatch:
    """Raw draws, their images, and likelihood-ratio weights.

    ``params`` is ``None`` for the identity change of measure (plain Monte
    Carlo), in which case ``transformed is raw`` and all weights are 1.
    """

    raw: np.ndarray
    transformed: np.ndarray
    lr: np.ndarray
    params: TransformParams | None
    beta: float

    def __len__(self) -> int:
        return self.raw.shape[0]


def transform_batch(batch: SampleBatch | np.ndarray, spec: ModelSpec,
                    params: TransformParams) -> TransformedBatch:
    x = batch.raw if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=float)
    z = transform(x, params)
    lr = likelihood_ratio(x, z, spec, params)
    return TransformedBatch(raw=x, transformed=z, lr=lr, params=params, beta=params.beta)


def identity_batch(batch: SampleBatch | np.ndarray, beta: float) -> TransformedBatch:
    x = batch.raw if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=float)
    return TransformedBatch(raw=x, transformed=x, lr=np.ones(x.shape[0]), params=None, beta=beta)


def dump_csv(tbatch: TransformedBatch, path) -> None:
    """Write (x, z, L_h) triples, one row per sample."""
    d = tbatch.raw.shape[1]
    header = [f"x{i}" for i in range(d)] + [f"z{i}" for i in range(d)] + ["lr"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for x, z, w in zip(tbatch.raw, tbatch.transformed, tbatch.lr):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in z] + [repr(float(w))])
