"""Continuous-measurement limit: the 2x2 Riccati equation for (B, p_at).

``V`` is the gamma-convention covariance of ``(B, p_at)`` and obeys
``dV/dt = -D V - V D^T - V E V`` with ``D = [[0, 0], [mu, 0]]`` and
``E = diag(0, r kappa^2)``.
"""

from __future__ import annotations

import math

import numpy as np
import numba
from scipy.linalg import expm

from .model import EffectiveCouplings

PSD_TOL = 1e-10


class RiccatiError(RuntimeError):
    pass


def drift_matrix(mu: float) -> np.ndarray:
    return np.array([[0.0, 0.0], [mu, 0.0]])


def measurement_matrix(kappa_sq: float, r: float = 1.0) -> np.ndarray:
    return np.diag([0.0, r * kappa_sq])


def riccati_rhs(V: np.ndarray, D: np.ndarray, E: np.ndarray) -> np.ndarray:
    return -D @ V - V @ D.T - V @ E @ V


@numba.njit(cache=True, nogil=True)
def _rk4_kernel(a, b, c, mu, e, dt, n_steps, record_steps, out):
    # V = [[a, b], [b, c]]; derivatives from the symmetric form of the rhs.
    j = 0
    n_rec = record_steps.shape[0]
    while j < n_rec and record_steps[j] == 0:
        out[j, 0] = a
        out[j, 1] = b
        out[j, 2] = c
        j += 1
    for k in range(1, n_steps + 1):
        ka = -e * b * b
        kb = -mu * a - e * b * c
        kc = -2.0 * mu * b - e * c * c

        a2 = a + 0.5 * dt * ka
        b2 = b + 0.5 * dt * kb
        c2 = c + 0.5 * dt * kc
        la = -e * b2 * b2
        lb = -mu * a2 - e * b2 * c2
        lc = -2.0 * mu * b2 - e * c2 * c2

        a3 = a + 0.5 * dt * la
        b3 = b + 0.5 * dt * lb
        c3 = c + 0.5 * dt * lc
        ma = -e * b3 * b3
        mb = -mu * a3 - e * b3 * c3
        mc = -2.0 * mu * b3 - e * c3 * c3

        a4 = a + dt * ma
        b4 = b + dt * mb
        c4 = c + dt * mc
        na = -e * b4 * b4
        nb = -mu * a4 - e * b4 * c4
        nc = -2.0 * mu * b4 - e * c4 * c4

        a += dt / 6.0 * (ka + 2.0 * la + 2.0 * ma + na)
        b += dt / 6.0 * (kb + 2.0 * lb + 2.0 * mb + nb)
        c += dt / 6.0 * (kc + 2.0 * lc + 2.0 * mc + nc)

        while j < n_rec and record_steps[j] == k:
            out[j, 0] = a
            out[j, 1] = b
            out[j, 2] = c
            j += 1
    return j


def integrate_riccati(
    V0,
    couplings: EffectiveCouplings,
    r: float = 1.0,
    t_final: float = 1e-2,
    dt: float | None = None,
    times=None,
):
    """Integrate the Riccati equation with classical RK4 on a uniform grid.

    Parameters
    ----------
    V0 : (2, 2) array
        Initial covariance of ``(B, p_at)``.
    couplings : EffectiveCouplings
        Only ``kappa`` and ``mu`` are used.
    r : float
        Probe squeezing; enters as ``kappa**2 -> r kappa**2``.
    t_final : float
        End time in seconds.
    dt : float, optional
        Step size, at most ``1e-4 / kappa**2``. Defaults to that bound.
    times : array_like, optional
        Sample times; each is snapped to the nearest grid point. Defaults
        to ``[0, t_final]``.

    Returns
    -------
    times : ndarray
        The grid times actually sampled.
    V : ndarray, shape (n, 2, 2)
    """
    V0 = np.asarray(V0, dtype=np.float64)
    if V0.shape != (2, 2):
        raise ValueError(f"V0 must be 2x2, got {V0.shape}")
    if not np.allclose(V0, V0.T, rtol=1e-12, atol=0):
        raise ValueError("V0 must be symmetric")
    kappa_sq = couplings.kappa_sq
    dt_max = 1e-4 / kappa_sq if kappa_sq > 0 else t_final / 1000
    if dt is None:
        dt = dt_max
    elif dt > dt_max * (1 + 1e-12):
        raise ValueError(f"dt = {dt:.3g} exceeds the stability bound {dt_max:.3g}")
    n_steps = max(1, math.ceil(t_final / dt - 1e-9))
    dt = t_final / n_steps
    if times is None:
        times = [0.0, t_final]
    times = np.asarray(times, dtype=np.float64)
    if np.any(times < 0) or np.any(times > t_final * (1 + 1e-12)):
        raise ValueError("sample times must lie in [0, t_final]")
    steps = np.rint(times / dt).astype(np.int64)
    order = np.argsort(steps, kind="stable")
    out = np.empty((len(steps), 3))
    _rk4_kernel(
        V0[0, 0], V0[0, 1], V0[1, 1],
        couplings.mu, r * kappa_sq, dt, n_steps, steps[order], out,
    )
    res = np.empty_like(out)
    res[order] = out
    V = np.empty((len(steps), 2, 2))
    V[:, 0, 0] = res[:, 0]
    V[:, 0, 1] = V[:, 1, 0] = res[:, 1]
    V[:, 1, 1] = res[:, 2]
    _check_psd(V)
    return steps * dt, V


def _check_psd(V):
    for v in V:
        scale = max(abs(v[0, 0]) * abs(v[1, 1]), np.finfo(float).tiny)
        det = v[0, 0] * v[1, 1] - v[0, 1] ** 2
        if v[0, 0] < 0 or v[1, 1] < 0 or det < -PSD_TOL * scale:
            raise RiccatiError("Riccati solution lost positive semidefiniteness; reduce dt")


def riccati_linearized(V0, couplings: EffectiveCouplings, r: float, times):
    """Solve the Riccati equation through its linear embedding.

    ``dW/dt = -D W``, ``dU/dt = E W + D^T U`` with ``W(0) = V0``,
    ``U(0) = I``; then ``V = W U^{-1}``.
    """
    D = drift_matrix(couplings.mu)
    E = measurement_matrix(couplings.kappa_sq, r)
    H = np.zeros((4, 4))
    H[:2, :2] = -D
    H[2:, :2] = E
    H[2:, 2:] = D.T
    X0 = np.vstack([np.asarray(V0, dtype=np.float64), np.eye(2)])
    out = []
    for t in np.atleast_1d(times):
        X = expm(H * t) @ X0
        W, U = X[:2], X[2:]
        out.append(np.linalg.solve(U.T, W.T).T)
    return np.array(out)
