"""Equivariance-regularized diffusion posterior sampling for inverse problems."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, check_gradient
from .equi import EquiLossConfig, EquivariantFunction, equi_error, equi_loss, equicon_loss
from .gmm import GMMPrior, gmm_posterior_exact, sample_gmm
from .groups import GroupAction, make_group
from .models import AnalyticGmmScore, DenoiserScore, train_denoiser, tweedie_x0
from .operators import MeasurementOperator, Measurement, forward, make_operator
from .samplers import SamplerConfig, Trajectory
from .schedule import NoiseSchedule, make_linear_schedule

__all__ = [
    "__version__",
    "Tensor", "backward", "check_gradient",
    "EquiLossConfig", "EquivariantFunction", "equi_error", "equi_loss", "equicon_loss",
    "GMMPrior", "gmm_posterior_exact", "sample_gmm",
    "GroupAction", "make_group",
    "AnalyticGmmScore", "DenoiserScore", "train_denoiser", "tweedie_x0",
    "MeasurementOperator", "Measurement", "forward", "make_operator",
    "SamplerConfig", "Trajectory",
    "NoiseSchedule", "make_linear_schedule",
]
