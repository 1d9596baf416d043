"""Parameterised losses l(x, theta) and the decision sets they are optimised over."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .models import CreditModelSpec, class_losses
from .rng import Seed


class ConfigurationError(ValueError):
    """Constraint data describe an empty or malformed decision set."""


class BoundLoss:
    """Loss restricted to a fixed set of scenarios.

    Both shipped losses are linear in theta once the scenario is fixed, so a
    bound loss is just the scenario matrix ``Y`` with ``l_i(theta) = Y[i] @ theta``
    and ``grad_theta l_i = Y[i]``.
    """

    def __init__(self, scenarios: np.ndarray):
        self.scenarios = np.ascontiguousarray(scenarios, dtype=float)

    def __len__(self) -> int:
        return self.scenarios.shape[0]

    def values(self, theta: np.ndarray) -> np.ndarray:
        return self.scenarios @ theta

    def grads(self, theta: np.ndarray) -> np.ndarray:
        return self.scenarios


class LossModel(ABC):
    """Loss ``l(x, theta)``, convex in theta, with homogeneity order ``order_rho``."""

    theta_dim: int
    order_rho: float = 1.0

    @abstractmethod
    def bind(self, x: np.ndarray, seed: Seed = 0) -> BoundLoss:
        """Fix the scenarios ``x`` (rows) and any scenario noise keyed by ``seed``."""

    def eval(self, x, theta, seed: Seed = 0):
        x = np.asarray(x, dtype=float)
        out = self.bind(np.atleast_2d(x), seed).values(np.asarray(theta, dtype=float))
        return float(out[0]) if x.ndim == 1 else out

    def grad_theta(self, x, theta, seed: Seed = 0):
        x = np.asarray(x, dtype=float)
        out = self.bind(np.atleast_2d(x), seed).grads(np.asarray(theta, dtype=float))
        return out[0] if x.ndim == 1 else out


class LinearLoss(LossModel):
    """Portfolio loss ``theta @ x``."""

    order_rho = 1.0

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.theta_dim = dim

    def bind(self, x, seed: Seed = 0) -> BoundLoss:
        return BoundLoss(x)

    def __repr__(self):
        return f"LinearLoss({self.theta_dim})"


def linear_loss(d: int) -> LinearLoss:
    return LinearLoss(d)


class CreditLoss(LossModel):
    """Loan-portfolio loss ``sum_i theta_i * (class-i default losses)``.

    Default indicators and exposures are drawn once per binding from the
    stream ``seed``, so that within one sample-path problem the loss is a
    deterministic, linear function of theta.  Homogeneity order is taken as 1
    in the class-loss aggregate.
    """

    order_rho = 1.0

    def __init__(self, spec: CreditModelSpec):
        self.spec = spec
        self.theta_dim = spec.n_classes

    def bind(self, x, seed: Seed = 0) -> BoundLoss:
        return BoundLoss(class_losses(self.spec, x, seed))

    def constraint(self) -> "ConstraintSet":
        return ConstraintSet.return_floor(self.spec.returns, self.spec.min_return)

    def __repr__(self):
        return f"CreditLoss(K={self.theta_dim})"


def credit_loss(spec: CreditModelSpec) -> CreditLoss:
    return CreditLoss(spec)


@dataclass(frozen=True)
class ConstraintSet:
    """``{theta : sum(theta) = 1}``, optionally intersected with ``{returns @ theta >= min_return}``."""

    kind: str = "simplex-sum"
    returns: np.ndarray | None = None
    min_return: float | None = None

    def __post_init__(self):
        if self.kind not in ("simplex-sum", "return-floor"):
            raise ConfigurationError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "return-floor":
            if self.returns is None or self.min_return is None:
                raise ConfigurationError("return-floor constraint needs returns and min_return")
            r = np.asarray(self.returns, dtype=float)
            object.__setattr__(self, "returns", r)
            if np.ptp(r) == 0 and r[0] < self.min_return:
                raise ConfigurationError(
                    f"infeasible: every portfolio returns {r[0]} < required {self.min_return}"
                )

    @classmethod
    def return_floor(cls, returns, min_return: float) -> "ConstraintSet":
        return cls("return-floor", np.asarray(returns, dtype=float), float(min_return))

    def residual(self, theta: np.ndarray) -> float:
        """Largest constraint violation (0 when feasible)."""
        res = abs(float(np.sum(theta)) - 1.0)
        if self.kind == "return-floor":
            res = max(res, self.min_return - float(self.returns @ theta))
        return res

    def tangent(self, g: np.ndarray) -> np.ndarray:
        """Component of ``g`` parallel to the hyperplane ``sum(theta) = 1``."""
        return g - g.mean()


def project(theta, c: ConstraintSet) -> np.ndarray:
    """Euclidean projection onto the decision set."""
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    onto_sum = theta - (theta.sum() - 1.0) / p
    if c.kind == "simplex-sum":
        return onto_sum
    r = c.returns
    if r @ onto_sum >= c.min_return:
        return onto_sum
    # active return floor: project onto {1'theta = 1, r'theta = q}
    r_t = r - r.mean()
    denom = r_t @ r_t
    if denom == 0.0:
        raise ConfigurationError("return-floor constraint is infeasible")
    out = onto_sum + (c.min_return - r @ onto_sum) / denom * r_t
    # KKT: the multiplier of the floor must be nonnegative, true by construction
    # since the floor was violated; guard against rounding on the floor
    if r @ out < c.min_return:
        out = out + (c.min_return - r @ out) / denom * r_t
    return out
