"""CVaR minimisation with self-structuring importance sampling and retrospective approximation."""

__version__ = "0.1.0"

from .losses import ConstraintSet, CreditLoss, LinearLoss, credit_loss, linear_loss, project
from .models import CreditModelSpec, ModelSpec, log_density, sample_credit_loss, sample_x
from .objective import Decision, evaluate_cvar_at, is_objective, saa_objective
from .ra import (RASchedule, geometric_schedule, run_enhanced_ra, run_vanilla_ra, select_h,
                 validate_schedule)
from .solver import solve
from .transform import (TransformParams, inverse_transform, jacobian, kappa, likelihood_ratio,
                        stretch_factor, transform)

__all__ = [
    "ConstraintSet", "CreditLoss", "CreditModelSpec", "Decision", "LinearLoss", "ModelSpec",
    "RASchedule", "TransformParams", "credit_loss", "evaluate_cvar_at", "geometric_schedule",
    "inverse_transform", "is_objective", "jacobian", "kappa", "likelihood_ratio", "linear_loss",
    "log_density", "project", "run_enhanced_ra", "run_vanilla_ra", "saa_objective",
    "sample_credit_loss", "sample_x", "select_h", "solve", "stretch_factor", "transform",
    "validate_schedule",
]
