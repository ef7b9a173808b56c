"""Gaussian-state estimation of a static magnetic field from continuous Faraday probing."""

__version__ = "0.1.0"

from .analytic import (
    analytic_sg_variance,
    analytic_variance,
    asymptotic_variance,
    mean_increment_sde,
)
from .filter import (
    FilterConfig,
    propagate_covariance,
    run_ensemble,
    run_trajectory,
    sg_variance,
    stern_gerlach_update,
)
from .gaussian import GaussianState, MeasurementSpec, condition_on_quadrature
from .model import EffectiveCouplings, PhysicalParams, derive_couplings
from .riccati import integrate_riccati, riccati_linearized, riccati_rhs
