"""Closed-form variances and the diffusion form of the conditional-mean update."""

from __future__ import annotations

import numpy as np


def analytic_variance(delta_b0, kappa, mu, r=1.0, t=0.0):
    """Conditional variance of B under continuous Faraday probing, noiseless case.

    Squeezing by ``r`` enters only as ``kappa**2 -> r * kappa**2``. Broadcasts
    over array ``t``.
    """
    k2 = r * np.square(kappa)
    t = np.asarray(t, dtype=np.float64)
    b2 = np.square(delta_b0)
    m2 = np.square(mu)
    num = (1 + k2 * t) * b2
    den = 1 + k2 * t + (2.0 / 3.0) * k2 * m2 * b2 * t**3 + (1.0 / 6.0) * k2**2 * m2 * b2 * t**4
    return num / den


def asymptotic_variance(kappa, mu, r=1.0, t=1.0):
    """Long-time limit ``6 / (r kappa^2 mu^2 t^3)``."""
    t = np.asarray(t, dtype=np.float64)
    return 6.0 / (r * np.square(kappa) * np.square(mu) * t**3)


def analytic_sg_variance(delta_b0, kappa, mu, t=0.0):
    """Variance of B after probing for ``t`` and then reading out the atomic spin projection."""
    t = np.asarray(t, dtype=np.float64)
    x = np.square(mu) * np.square(delta_b0)
    return np.square(delta_b0) / (1 + 2 * x * t**2 + (2.0 / 3.0) * np.square(kappa) * x * t**3)


def mean_increment_sde(cov_bp, kappa, dW):
    """Increment of the conditional mean of B for a Wiener increment ``dW``.

    ``cov_bp`` is the classical B-p_at covariance, i.e. half the gamma entry.
    """
    return np.sqrt(2.0) * kappa * cov_bp * dW
