"""Compiled inner loops for the five-variable filter.

These mirror the step sequence built from ``gaussian`` and ``model``
(transform, decay noise, x_ph readout, probe reset, polarisation loss);
``tests/test_filter.py`` checks them against that reference path.
"""

import math

import numba
import numpy as np

# Retained block is (B, x_at, p_at); the probe occupies rows 3 and 4.
NRET = 3
IXP = 3
VARIANCE_FLOOR = 1e-12


@numba.njit(cache=True, nogil=True)
def _symmetrize(G):
    n = G.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            v = 0.5 * (G[i, j] + G[j, i])
            G[i, j] = v
            G[j, i] = v


@numba.njit(cache=True, nogil=True)
def covariance_track(
    cov0, kappa, mu, eta, tau, r, decay, n_steps, record_steps,
    rec_cov, rec_jx, step_gain, step_xvar, step_jx, store_steps,
):
    """Run the deterministic covariance recursion.

    ``rec_*`` receive the post-reset state at each entry of the sorted
    ``record_steps``; if ``store_steps`` the per-step gain vector, predicted
    readout variance and polarisation fraction are written too. Returns the
    final covariance and polarisation fraction.
    """
    G = cov0.copy()
    S = np.eye(5)
    T = np.empty((5, 5))
    jx = 1.0
    eta_tau = eta * tau if decay else 0.0
    damp = math.sqrt(1.0 - eta_tau)
    sqrt_tau = math.sqrt(tau)
    n_rec = record_steps.shape[0]
    j = 0
    while j < n_rec and record_steps[j] == 0:
        rec_cov[j] = G
        rec_jx[j] = jx
        j += 1
    for k in range(n_steps):
        shrink = math.sqrt(jx)
        S[1, 4] = kappa * sqrt_tau * shrink
        S[2, 0] = -mu * tau * shrink
        S[3, 2] = kappa * sqrt_tau * shrink
        # G <- S G S^T
        for a in range(5):
            for b in range(5):
                acc = 0.0
                for m in range(5):
                    acc += S[a, m] * G[m, b]
                T[a, b] = acc
        for a in range(5):
            for b in range(5):
                acc = 0.0
                for m in range(5):
                    acc += T[a, m] * S[b, m]
                G[a, b] = acc
        _symmetrize(G)
        if decay:
            for a in range(5):
                la = damp if (a == 1 or a == 2) else 1.0
                for b in range(5):
                    lb = damp if (b == 1 or b == 2) else 1.0
                    G[a, b] = la * G[a, b] * lb
            G[1, 1] += 2.0 / jx * eta_tau
            G[2, 2] += 2.0 / jx * eta_tau
            _symmetrize(G)
        xvar = G[IXP, IXP]
        gain = 1.0 / xvar if xvar > VARIANCE_FLOOR else 0.0
        if store_steps:
            for a in range(NRET):
                step_gain[k, a] = gain * G[a, IXP]
            step_xvar[k] = xvar
            step_jx[k] = jx
        for a in range(NRET):
            ca = G[a, IXP]
            for b in range(NRET):
                T[a, b] = G[a, b] - gain * ca * G[b, IXP]
        for a in range(5):
            for b in range(5):
                G[a, b] = 0.0
        for a in range(NRET):
            for b in range(NRET):
                G[a, b] = T[a, b]
        _symmetrize(G)
        G[3, 3] = 1.0 / r
        G[4, 4] = r
        if decay:
            jx *= 1.0 - eta_tau
        while j < n_rec and record_steps[j] == k + 1:
            rec_cov[j] = G
            rec_jx[j] = jx
            j += 1
    return G, jx


@numba.njit(cache=True, nogil=True)
def _advance_mean(m, kt, mt, damp):
    m0 = m[0]
    m1 = m[1] + kt * m[4]
    m2 = m[2] - mt * m0
    m3 = m[3] + kt * m[2]
    m[1] = damp * m1
    m[2] = damp * m2
    m[3] = m3


@numba.njit(cache=True, nogil=True)
def mean_track(
    mean0, truth0, use_truth, kappa, mu, eta, tau, decay,
    step_jx, gain_f, xvar_f, gain_t, xvar_t, normals,
    record_steps, rec_mean, rec_truth, innovations,
):
    """Propagate the conditional mean of one trajectory.

    With ``use_truth`` the readout is drawn from the truth state's predicted
    ``x_ph`` distribution and the truth state is conditioned on it as well;
    otherwise it is drawn from the filter's own predictive distribution.
    """
    mf = mean0.copy()
    mt = truth0.copy()
    eta_tau = eta * tau if decay else 0.0
    damp = math.sqrt(1.0 - eta_tau)
    sqrt_tau = math.sqrt(tau)
    n_steps = normals.shape[0]
    n_rec = record_steps.shape[0]
    j = 0
    while j < n_rec and record_steps[j] == 0:
        rec_mean[j] = mf[0]
        rec_truth[j] = mt[0]
        j += 1
    for k in range(n_steps):
        shrink = math.sqrt(step_jx[k])
        kt = kappa * sqrt_tau * shrink
        mtau = mu * tau * shrink
        _advance_mean(mf, kt, mtau, damp)
        if use_truth:
            _advance_mean(mt, kt, mtau, damp)
            outcome = mt[3] + math.sqrt(0.5 * xvar_t[k]) * normals[k]
            chi_t = outcome - mt[3]
            for a in range(NRET):
                mt[a] += gain_t[k, a] * chi_t
            mt[3] = 0.0
            mt[4] = 0.0
        else:
            outcome = mf[3] + math.sqrt(0.5 * xvar_f[k]) * normals[k]
        chi = outcome - mf[3]
        innovations[k] = chi
        for a in range(NRET):
            mf[a] += gain_f[k, a] * chi
        mf[3] = 0.0
        mf[4] = 0.0
        while j < n_rec and record_steps[j] == k + 1:
            rec_mean[j] = mf[0]
            rec_truth[j] = mt[0]
            j += 1
    return mf
