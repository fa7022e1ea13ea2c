"""Black-box variational inference with location-scale families fitted by SPGD."""

from .base_dist import BaseDistribution, DomainError, gaussian, laplace, student_t
from .family import (
    FULL_RANK, MEAN_FIELD, FullRankParams, MeanFieldParams, param_distance_sq, reparametrize,
    standard_init,
)
from .spgd import ScheduleConfig, prox_entropy, run, run_seeds, suggested_schedule
from .targets import Target, make_target, mf_optimum, perturbed_quadratic, quadratic

__version__ = "0.1.0"

__all__ = [
    "BaseDistribution", "DomainError", "gaussian", "laplace", "student_t",
    "FULL_RANK", "MEAN_FIELD", "FullRankParams", "MeanFieldParams", "param_distance_sq", "reparametrize",
    "standard_init",
    "ScheduleConfig", "prox_entropy", "run", "run_seeds", "suggested_schedule",
    "Target", "make_target", "mf_optimum", "perturbed_quadratic", "quadratic",
]
