"""Gaussian states over labelled variables.

Covariances use the quadrature convention
``gamma_ij = 2 Re <(y_i - <y_i>)(y_j - <y_j>)>``, so a vacuum quadrature has
``gamma = 1`` and the classical covariance matrix is ``gamma / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Canonical ordering of the magnetometer variables.
LABELS = ("B", "x_at", "p_at", "x_ph", "p_ph")

SYMMETRY_RTOL = 1e-12
PSD_RTOL = 1e-10
HEISENBERG_ATOL = 1e-9
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class GaussianState:
    """Mean vector and gamma-convention covariance over named variables."""

    mean: np.ndarray
    cov: np.ndarray
    labels: tuple = LABELS

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        cov = np.array(self.cov, dtype=np.float64)
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ValueError(f"cov has shape {cov.shape}, expected {(n, n)}")
        labels = tuple(self.labels)
        if len(labels) != n:
            raise ValueError(f"{len(labels)} labels for {n} variables")
        if len(set(labels)) != n:
            raise ValueError(f"duplicate labels in {labels}")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def variance(self, label: str) -> float:
        """Classical variance of one variable (``gamma_ii / 2``)."""
        i = self.index(label)
        return 0.5 * self.cov[i, i]

    def __eq__(self, other):
        if not isinstance(other, GaussianState):
            return NotImplemented
        return (
            self.labels == other.labels
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.cov, other.cov)
        )

    __hash__ = None


@dataclass(frozen=True)
class BlockDecomposition:
    """Partition of a covariance into retained (A), measured (B) and cross (C) blocks."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    retained: tuple
    measured: tuple


@dataclass(frozen=True)
class MeasurementSpec:
    """Which coordinate of the measured subsystem is read out."""

    index: int = 0


@dataclass
class ValidityReport:
    symmetry_residual: float
    min_eigenvalue: float
    max_eigenvalue: float
    heisenberg: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _indices(state: GaussianState, which: Sequence) -> list:
    out = []
    for w in which:
        if isinstance(w, str):
            out.append(state.index(w))
        else:
            i = int(w)
            if not 0 <= i < state.dim:
                raise IndexError(f"index {i} out of range for {state.dim} variables")
            out.append(i)
    return out


def linear_transform(state: GaussianState, S: np.ndarray) -> GaussianState:
    """Propagate ``<y> -> S <y>`` and ``gamma -> S gamma S^T``."""
    S = np.asarray(S, dtype=np.float64)
    if S.shape != (state.dim, state.dim):
        raise ValueError(f"S has shape {S.shape}, state has {state.dim} variables")
    return GaussianState(S @ state.mean, symmetrize(S @ state.cov @ S.T), state.labels)


def add_noise(
    state: GaussianState, L: np.ndarray, M: np.ndarray, prefactor: float
) -> GaussianState:
    """Damp with diagonal ``L`` and add diagonal noise ``prefactor * M``.

    ``gamma -> L gamma L + prefactor M`` and ``<y> -> L <y>``.
    """
    if prefactor < 0:
        raise ValueError(f"noise prefactor must be non-negative, got {prefactor}")
    L = np.asarray(L, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    n = state.dim
    for name, m in (("L", L), ("M", M)):
        if m.shape != (n, n):
            raise ValueError(f"{name} has shape {m.shape}, state has {n} variables")
        if np.any(m != np.diag(np.diag(m))):
            raise ValueError(f"{name} must be diagonal")
    cov = L @ state.cov @ L + prefactor * M
    return GaussianState(L @ state.mean, symmetrize(cov), state.labels)


def decompose(state: GaussianState, retained: Sequence) -> BlockDecomposition:
    keep = _indices(state, retained)
    meas = [i for i in range(state.dim) if i not in keep]
    g = state.cov
    return BlockDecomposition(
        A=g[np.ix_(keep, keep)],
        B=g[np.ix_(meas, meas)],
        C=g[np.ix_(keep, meas)],
        retained=tuple(keep),
        measured=tuple(meas),
    )


def condition_on_quadrature(
    state: GaussianState,
    retained: Sequence,
    spec: MeasurementSpec,
    outcome: float,
) -> tuple[GaussianState, float]:
    """Condition on a homodyne-type readout of one measured coordinate.

    The variables not listed in ``retained`` form the measured subsystem;
    ``spec.index`` selects the coordinate within it that is read out.
    Returns the state over the retained variables and the innovation
    ``outcome - <x>``.

    Since only one coordinate is measured, the pseudoinverse of the
    projected measured block is ``1/B_jj`` on that coordinate and zero
    elsewhere; below ``VARIANCE_FLOOR`` it is taken to be zero.
    """
    blocks = decompose(state, retained)
    if not 0 <= spec.index < len(blocks.measured):
        raise IndexError(
            f"measurement index {spec.index} outside measured subsystem of size "
            f"{len(blocks.measured)}"
        )
    j = spec.index
    var = blocks.B[j, j]
    gain = 1.0 / var if var > VARIANCE_FLOOR else 0.0
    innovation = float(outcome) - state.mean[blocks.measured[j]]
    c = blocks.C[:, j]
    A = blocks.A - gain * np.outer(c, c)
    mean = state.mean[list(blocks.retained)] + gain * c * innovation
    labels = tuple(state.labels[i] for i in blocks.retained)
    return GaussianState(mean, symmetrize(A), labels), innovation


def marginal(state: GaussianState, indices: Sequence) -> GaussianState:
    idx = _indices(state, indices)
    return GaussianState(
        state.mean[idx],
        state.cov[np.ix_(idx, idx)],
        tuple(state.labels[i] for i in idx),
    )


def join(first: GaussianState, second: GaussianState) -> GaussianState:
    """Uncorrelated product of two states."""
    n, m = first.dim, second.dim
    cov = np.zeros((n + m, n + m))
    cov[:n, :n] = first.cov
    cov[n:, n:] = second.cov
    return GaussianState(
        np.concatenate([first.mean, second.mean]), cov, first.labels + second.labels
    )


def sample_outcome(state: GaussianState, index, rng: np.random.Generator) -> float:
    """Draw a readout of one variable: normal with mean ``<x>``, variance ``gamma_xx/2``."""
    i = _indices(state, [index])[0]
    var = state.cov[i, i]
    if var < 0:
        raise ValueError(f"negative variance {var} for {state.labels[i]}")
    return float(state.mean[i] + np.sqrt(0.5 * var) * rng.standard_normal())


def _quadrature_pairs(labels: Sequence[str]) -> list:
    pairs = []
    for i, name in enumerate(labels):
        if name.startswith("x_"):
            partner = "p_" + name[2:]
            if partner in labels:
                pairs.append((name[2:], i, labels.index(partner)))
    return pairs


def check_validity(state: GaussianState) -> ValidityReport:
    """Report symmetry, positivity and per-mode uncertainty diagnostics."""
    g = np.asarray(state.cov)
    scale = max(float(np.max(np.abs(g))), np.finfo(float).tiny)
    sym = float(np.max(np.abs(g - g.T))) / scale
    eig = np.linalg.eigvalsh(symmetrize(g))
    report = ValidityReport(
        symmetry_residual=sym,
        min_eigenvalue=float(eig[0]),
        max_eigenvalue=float(eig[-1]),
    )
    if sym > SYMMETRY_RTOL:
        report.violations.append(f"asymmetric covariance (residual {sym:.3e})")
    if eig[0] < -PSD_RTOL * max(eig[-1], 0.0):
        report.violations.append(f"not positive semidefinite (min eigenvalue {eig[0]:.3e})")
    neg = [state.labels[i] for i in range(state.dim) if g[i, i] < 0]
    if neg:
        report.violations.append(f"negative variances: {', '.join(neg)}")
    for mode, i, k in _quadrature_pairs(state.labels):
        det = g[i, i] * g[k, k] - g[i, k] * g[k, i]
        report.heisenberg[mode] = float(det)
        if det < 1 - HEISENBERG_ATOL:
            report.violations.append(f"mode {mode} below uncertainty bound (det {det:.6g})")
    return report
