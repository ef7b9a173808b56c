"""Five-variable magnetometer model: couplings, step matrices and probe segments.

Variables are ordered ``(B, x_at, p_at, x_ph, p_ph)``. ``B`` is in tesla,
the four quadratures are dimensionless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import BOHR_MAGNETON, C_LIGHT, EPSILON_0, HBAR, PICOTESLA
from .gaussian import LABELS, GaussianState

MAX_DECAY_PER_STEP = 0.01

IB, IXA, IPA, IXP, IPP = range(5)


@dataclass(frozen=True)
class PhysicalParams:
    """Laboratory inputs, SI units. Defaults are the Cs D1-line scenario.

    ``detuning`` is an angular frequency (rad/s).
    """

    wavelength: float = 852e-9
    dipole_moment: float = 2.61e-29
    linewidth: float = 3.1e7
    detuning: float = 2 * math.pi * 1e9
    beam_area: float = 2e-6
    photon_flux: float = 5e12
    atom_number: float = 2e12
    magnetic_moment: float = BOHR_MAGNETON
    delta_b0: float = 1.0 * PICOTESLA
    r: float = 1.0

    def __post_init__(self):
        for name in (
            "wavelength",
            "dipole_moment",
            "linewidth",
            "detuning",
            "beam_area",
            "photon_flux",
            "atom_number",
            "magnetic_moment",
            "delta_b0",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.r >= 1e-6:
            raise ValueError(f"squeezing r must be >= 1e-6, got {self.r}")


@dataclass(frozen=True)
class EffectiveCouplings:
    """Continuous-time rates: ``kappa**2`` and ``eta`` in 1/s, ``mu`` in 1/(s T)."""

    kappa: float
    mu: float
    eta: float = 0.0

    def __post_init__(self):
        for name in ("kappa", "mu", "eta"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    @property
    def kappa_sq(self) -> float:
        return self.kappa**2

    @classmethod
    def from_kappa_sq(cls, kappa_sq: float, mu: float, eta: float = 0.0):
        if kappa_sq < 0:
            raise ValueError(f"kappa_sq must be non-negative, got {kappa_sq}")
        return cls(math.sqrt(kappa_sq), mu, eta)


@dataclass(frozen=True)
class StepMatrices:
    S: np.ndarray
    L: np.ndarray
    M: np.ndarray
    noise_prefactor: float
    tau: float
    kappa_tau: float
    mu_tau: float


def derive_couplings(p: PhysicalParams) -> EffectiveCouplings:
    """Effective couplings from laboratory parameters.

    The light-atom coupling ``g**2`` scales as ``1/tau`` (quantisation length
    ``c tau``), so ``g**2 tau`` and hence ``kappa`` are step-independent.
    """
    omega = 2 * math.pi * C_LIGHT / p.wavelength
    g_sq_tau = omega * p.dipole_moment**2 / (p.beam_area * C_LIGHT * EPSILON_0 * HBAR)
    kappa = 2 * g_sq_tau / p.detuning * math.sqrt(p.atom_number * p.photon_flux / 4)
    mu = p.magnetic_moment / HBAR * math.sqrt(p.atom_number / 2)
    sigma = p.wavelength**2 / (2 * math.pi)
    half_width_sq = p.linewidth**2 / 4
    eta = p.photon_flux * sigma / p.beam_area * half_width_sq / (half_width_sq + p.detuning**2)
    return EffectiveCouplings(kappa, mu, eta)


def interaction_matrix(kappa_tau: float, mu_tau: float) -> np.ndarray:
    """One-step Heisenberg map of ``(B, x_at, p_at, x_ph, p_ph)``."""
    S = np.eye(5)
    S[IXA, IPP] = kappa_tau
    S[IPA, IB] = -mu_tau
    S[IXP, IPA] = kappa_tau
    return S


def build_step_matrices(
    c: EffectiveCouplings, tau: float, jx_fraction: float = 1.0, decay: bool = False
) -> StepMatrices:
    """Per-step matrices at the current remaining spin polarisation.

    Raises ``ValueError`` if decay is enabled and ``eta * tau`` exceeds
    ``MAX_DECAY_PER_STEP``.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if not 0 < jx_fraction <= 1:
        raise ValueError(f"jx_fraction must lie in (0, 1], got {jx_fraction}")
    shrink = math.sqrt(jx_fraction)
    kappa_tau = c.kappa * math.sqrt(tau) * shrink
    mu_tau = c.mu * tau * shrink
    S = interaction_matrix(kappa_tau, mu_tau)
    if decay:
        eta_tau = c.eta * tau
        if eta_tau > MAX_DECAY_PER_STEP:
            raise ValueError(
                f"eta*tau = {eta_tau:.3g} exceeds {MAX_DECAY_PER_STEP}; reduce the time step"
            )
        damp = math.sqrt(1 - eta_tau)
        L = np.diag([1.0, damp, damp, 1.0, 1.0])
        M = np.diag([0.0, eta_tau, eta_tau, 0.0, 0.0])
        prefactor = 2.0 / jx_fraction
    else:
        L = np.eye(5)
        M = np.zeros((5, 5))
        prefactor = 0.0
    return StepMatrices(S, L, M, prefactor, tau, kappa_tau, mu_tau)


def fresh_probe_segment(r: float = 1.0) -> GaussianState:
    """Uncorrelated light segment with ``x_ph`` variance ``1/r`` and ``p_ph`` variance ``r``."""
    if not r > 0:
        raise ValueError(f"squeezing r must be positive, got {r}")
    return GaussianState(np.zeros(2), np.diag([1.0 / r, r]), LABELS[3:])


def initial_state(delta_b0: float, r: float = 1.0, b_mean: float = 0.0) -> GaussianState:
    """Prior over B of width ``delta_b0``, atoms and light in their ground states."""
    if not delta_b0 > 0:
        raise ValueError(f"delta_b0 must be positive, got {delta_b0}")
    if not r > 0:
        raise ValueError(f"squeezing r must be positive, got {r}")
    mean = np.zeros(5)
    mean[IB] = b_mean
    return GaussianState(mean, np.diag([2 * delta_b0**2, 1.0, 1.0, 1.0 / r, r]), LABELS)
