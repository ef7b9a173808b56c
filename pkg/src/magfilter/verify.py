"""Acceptance checks and independent oracles, shared by ``magfilter verify`` and the tests."""

from __future__ import annotations

import contextlib
import io
import math
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .analytic import (
    analytic_sg_variance,
    analytic_variance,
    asymptotic_variance,
    mean_increment_sde,
)
from .constants import PICOTESLA
from .filter import FilterConfig, propagate_covariance, run_ensemble, run_trajectory, sg_variance
from .gaussian import GaussianState, MeasurementSpec, check_validity, condition_on_quadrature
from .model import EffectiveCouplings, PhysicalParams, derive_couplings
from .riccati import integrate_riccati, riccati_linearized

KAPPA_SQ_REF = 1.83e6
MU_REF = 8.79e4 / PICOTESLA
ETA_REF = 1.7577
DELTA_B0 = 1e-12
TAU = 1e-8


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    # Non-gating results are reported but never fail a run.
    gating: bool = True

    def line(self) -> str:
        tag = "PASS" if self.passed else ("FAIL" if self.gating else "NOTE")
        return f"[{tag}] {self.name}: {self.detail}"

    @property
    def ok(self) -> bool:
        return self.passed or not self.gating


def _rel(a, b):
    return abs(a / b - 1)


def _config(couplings=None, **kw) -> FilterConfig:
    kw.setdefault("tau", TAU)
    kw.setdefault("t_final", 1e-2)
    kw.setdefault("delta_b0", DELTA_B0)
    return FilterConfig(couplings or default_couplings(), **kw)


def default_couplings() -> EffectiveCouplings:
    return derive_couplings(PhysicalParams())


# --- independent oracles ---------------------------------------------------


def schur_condition(mean, gamma, retained, measured_index, outcome):
    """Classical Gaussian conditioning on one coordinate, others marginalised.

    Works on the classical covariance ``gamma / 2`` and returns the
    gamma-convention result.
    """
    sigma = 0.5 * np.asarray(gamma)
    keep = list(retained)
    j = [measured_index]
    s11 = sigma[np.ix_(keep, keep)]
    s12 = sigma[np.ix_(keep, j)]
    s22 = sigma[np.ix_(j, j)]
    cond = s11 - s12 @ np.linalg.solve(s22, s12.T)
    m = np.asarray(mean)[keep] + (s12 @ np.linalg.solve(s22, [[outcome - mean[measured_index]]])).ravel()
    return m, 2 * cond


def random_psd(rng, n):
    X = rng.standard_normal((n, n + 2))
    return X @ X.T / (n + 2) + 1e-3 * np.eye(n)


# --- acceptance criteria -----------------------------------------------------


def criterion_parameters():
    c = default_couplings()
    mu_pt = c.mu * PICOTESLA
    return [
        CheckResult("kappa^2 from reference inputs", _rel(c.kappa_sq, KAPPA_SQ_REF) <= 0.01,
                    f"{c.kappa_sq:.5e} 1/s vs 1.83e6 (rel {_rel(c.kappa_sq, KAPPA_SQ_REF):.2e}, tol 1e-2)"),
        CheckResult("mu from reference inputs", _rel(c.mu, MU_REF) <= 0.01,
                    f"{mu_pt:.5e} 1/(s pT) vs 8.79e4 (rel {_rel(c.mu, MU_REF):.2e}, tol 1e-2)"),
        CheckResult("eta from reference inputs", _rel(c.eta, ETA_REF) <= 1e-3,
                    f"{c.eta:.6f} 1/s vs 1.7577 (rel {_rel(c.eta, ETA_REF):.2e}, tol 1e-3)"),
    ]


def criterion_closed_form():
    c = default_couplings()
    out = []
    for r in (1.0, 3.0):
        cfg = _config(c, r=r)
        t0 = time.perf_counter()
        track = propagate_covariance(cfg)
        elapsed = time.perf_counter() - t0
        mask = (track.times >= 1e-6) & (track.times <= 1e-2)
        exact = analytic_variance(DELTA_B0, c.kappa, c.mu, r, track.times[mask])
        err = np.max(np.abs(track.var_B[mask] / exact - 1))
        out.append(CheckResult(
            f"discrete filter vs closed form, r={r:g}",
            err <= 5e-3 and elapsed <= 60,
            f"max rel err {err:.2e} (tol 5e-3) over {cfg.n_steps} steps in {elapsed:.1f} s (limit 60 s)",
        ))
        times = np.geomspace(1e-6, 1e-2, 60)
        V0 = np.diag([2 * DELTA_B0**2, 1.0])
        ts, V = integrate_riccati(V0, c, r, 1e-2, times=times)
        exact = analytic_variance(DELTA_B0, c.kappa, c.mu, r, ts)
        err = np.max(np.abs(0.5 * V[:, 0, 0] / exact - 1))
        out.append(CheckResult(f"RK4 Riccati vs closed form, r={r:g}", err <= 1e-6,
                               f"max rel err {err:.2e} (tol 1e-6)"))
    return out


def criterion_scaling():
    t = 1e-2
    c = default_couplings()
    exact = analytic_variance(DELTA_B0, c.kappa, c.mu, 1.0, t)
    asym = asymptotic_variance(c.kappa, c.mu, 1.0, t)
    err = _rel(exact, asym)
    c2 = derive_couplings(PhysicalParams(atom_number=4e12))
    v1 = propagate_covariance(_config(c, record_stride=10**9)).var_B[-1]
    v2 = propagate_covariance(_config(c2, record_stride=10**9)).var_B[-1]
    ratio = v2 / v1
    return [
        CheckResult("closed form vs 6/(kappa^2 mu^2 t^3) at 10 ms", err <= 0.01,
                    f"{exact / PICOTESLA**2:.4e} vs {asym / PICOTESLA**2:.4e} pT^2 (rel {err:.2e}, tol 1e-2)"),
        CheckResult("doubling atom number quarters long-time variance", _rel(ratio, 0.25) <= 0.03,
                    f"ratio {ratio:.5f} vs 0.25 (rel {_rel(ratio, 0.25):.2e}, tol 3e-2)"),
    ]


def criterion_squeezing():
    c = default_couplings()
    v1 = propagate_covariance(_config(c, r=1.0, record_stride=10**9)).var_B[-1]
    v3 = propagate_covariance(_config(c, r=3.0, record_stride=10**9)).var_B[-1]
    ratio = v3 / v1
    return [CheckResult("squeezed probe r=3 improves variance by 1/3", _rel(ratio, 1 / 3) <= 0.02,
                        f"ratio {ratio:.5f} vs 0.33333 (rel {_rel(ratio, 1 / 3):.2e}, tol 2e-2)")]


def criterion_stern_gerlach():
    c = default_couplings()
    t = 1e-3
    before, after = sg_variance(_config(c, t_final=1e-2), t)
    ratio = after / before
    exact = analytic_sg_variance(DELTA_B0, c.kappa, c.mu, t)
    err = _rel(after, exact)
    return [
        CheckResult("atomic readout reduces variance fourfold", _rel(ratio, 0.25) <= 0.02,
                    f"kappa^2 t = {c.kappa_sq * t:.0f}, ratio {ratio:.5f} (rel {_rel(ratio, 0.25):.2e}, tol 2e-2)"),
        CheckResult("atomic readout vs closed form", err <= 5e-3,
                    f"rel err {err:.2e} (tol 5e-3)"),
    ]


def criterion_decay():
    c = default_couplings()
    noisy_cfg = _config(c, decay=True)
    clean_cfg = _config(c, decay=False)
    noisy = propagate_covariance(noisy_cfg)
    clean = propagate_covariance(clean_cfg)
    step = 10**4
    noisy_lin = propagate_covariance(replace(noisy_cfg, record_stride=step))
    clean_lin = propagate_covariance(replace(clean_cfg, record_stride=step))
    mono = all(
        np.all(np.diff(tr.var_B) <= 1e-12 * tr.var_B[:-1]) for tr in (noisy, noisy_lin)
    )
    late = noisy_lin.times >= 1e-3
    above = bool(np.all(noisy_lin.var_B[late] > clean_lin.var_B[late]))
    late_log = noisy.times >= 1e-3
    above = above and bool(np.all(noisy.var_B[late_log] > clean.var_B[late_log]))
    i5 = int(np.argmin(np.abs(noisy_lin.times - 5e-3)))
    plateau = noisy_lin.delta_B[-1] / noisy_lin.delta_B[i5]
    reference = clean_lin.delta_B[-1] / clean_lin.delta_B[i5]
    return [
        CheckResult("decay: deltaB non-increasing", mono, "checked on log and linear grids"),
        CheckResult("decay: above noiseless curve for t >= 1 ms", above,
                    f"deltaB(10 ms) {noisy.delta_B[-1] / PICOTESLA:.3e} vs {clean.delta_B[-1] / PICOTESLA:.3e} pT"),
        CheckResult("decay: plateau", plateau >= 0.5 and abs(reference - 0.5**1.5) < 0.02,
                    f"deltaB(10 ms)/deltaB(5 ms) = {plateau:.3f} (>= 0.5), noiseless {reference:.3f} (~0.354)"),
    ]


def _within(res, se, k=3.0, floor=0.0):
    return np.abs(res) <= k * se + floor


def criterion_filter_consistency(n_traj=500, workers=4):
    c = default_couplings()
    out = []
    floor = 1e-12 * DELTA_B0**2
    truth = run_ensemble(_config(c, t_final=1e-3, truth_mode="ground-truth", seed=0), n_traj,
                         workers=workers)
    ratio = truth.mse[-1] / truth.var_B[-1]
    out.append(CheckResult("ground truth: MSE/deltaB^2 at 1 ms", 0.85 <= ratio <= 1.15,
                           f"{ratio:.4f} with {n_traj} trajectories (window [0.85, 1.15])"))
    ok = _within(truth.ltv_residual, truth.var_of_mean_se, floor=floor)
    z = np.max(np.abs(truth.ltv_residual) / np.maximum(truth.var_of_mean_se, floor))
    out.append(CheckResult("ground truth: law of total variance at every time", bool(ok.all()),
                           f"max |residual|/SE {z:.2f} (limit 3) over {len(ok)} times"))
    draws = run_ensemble(_config(c, t_final=1e-3, truth_mode="innovation", seed=1), n_traj,
                         workers=workers)
    zs = np.abs(draws.ltv_residual) / np.maximum(draws.var_of_mean_se, floor)
    out.append(CheckResult("innovation draws: law of total variance at 1 ms", bool(zs[-1] <= 3),
                           f"|residual|/SE {zs[-1]:.2f} (limit 3)"))
    out.append(CheckResult("innovation draws: law of total variance, all times", bool(zs.max() <= 3),
                           f"max |residual|/SE {zs.max():.2f} over {len(zs)} correlated times",
                           gating=False))
    for label, st in (("ground truth", truth), ("innovation draws", draws)):
        dev = st.mean_of_mean - 0.0
        ok = _within(dev, st.mean_se)
        z = np.max(np.abs(dev) / np.maximum(st.mean_se, 1e-300))
        out.append(CheckResult(f"{label}: ensemble mean equals prior mean", bool(ok.all()),
                               f"max |mean|/SE {z:.2f} (limit 3)"))
    return out


def criterion_oracles(n_instances=1000, seed=12345):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(3, 6))
        gamma = random_psd(rng, n)
        mean = rng.standard_normal(n)
        n_meas = int(rng.integers(1, min(2, n - 1) + 1))
        perm = rng.permutation(n)
        measured = sorted(perm[:n_meas].tolist())
        retained = sorted(perm[n_meas:].tolist())
        j = int(rng.integers(0, n_meas))
        outcome = mean[measured[j]] + rng.standard_normal()
        state = GaussianState(mean, gamma, tuple(f"v{i}" for i in range(n)))
        new, _ = condition_on_quadrature(state, retained, MeasurementSpec(j), outcome)
        m_ref, g_ref = schur_condition(mean, gamma, retained, measured[j], outcome)
        err_g = np.max(np.abs(new.cov - g_ref)) / np.max(np.abs(g_ref))
        err_m = np.max(np.abs(new.mean - m_ref)) / max(np.max(np.abs(m_ref)), 1.0)
        worst = max(worst, err_g, err_m)
    c = default_couplings()
    V0 = np.diag([2 * DELTA_B0**2, 1.0])
    times = np.geomspace(1e-6, 1e-2, 40)
    ts, V = integrate_riccati(V0, c, 1.0, 1e-2, times=times)
    W = riccati_linearized(V0, c, 1.0, ts)
    err_wu = max(np.max(np.abs(W[:, i, k] / V[:, i, k] - 1)) for i, k in ((0, 0), (0, 1), (1, 1)))
    return [
        CheckResult("conditioning vs Schur complement oracle", worst <= 1e-12,
                    f"max rel err {worst:.2e} over {n_instances} instances (tol 1e-12)"),
        CheckResult("W/U linearisation vs RK4", err_wu <= 1e-8,
                    f"max rel err {err_wu:.2e} (tol 1e-8)"),
    ]


def criterion_determinism(workdir=None):
    from .cli import main

    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        outputs = []
        for i, workers in enumerate((1, 1, 3)):
            path = Path(tmp) / f"run{i}.csv"
            with contextlib.redirect_stdout(io.StringIO()):
                code = main(["ensemble", "--n", "4", "--seed", "7", "--workers", str(workers),
                             "--out", str(path)])
            outputs.append((code, path.read_bytes()))
    codes = [code for code, _ in outputs]
    base = outputs[0][1]
    same_runs = outputs[1][1] == base
    same_workers = outputs[2][1] == base
    return [
        CheckResult("byte-identical CSV across runs", same_runs and codes == [0, 0, 0],
                    f"exit codes {codes}, {len(base)} bytes"),
        CheckResult("byte-identical CSV across worker counts", same_workers,
                    "1 vs 3 workers"),
    ]


# --- further invariants ----------------------------------------------------


def check_invariants():
    c = default_couplings()
    out = []
    for decay in (False, True):
        track = propagate_covariance(_config(c, decay=decay, r=2.0))
        bad = []
        for cov in track.cov:
            rep = check_validity(GaussianState(np.zeros(5), cov))
            bad += rep.violations
        out.append(CheckResult(f"state validity along track (decay={decay})", not bad,
                               "; ".join(sorted(set(bad))[:3]) or f"{len(track.cov)} states"))
    clean = propagate_covariance(_config(c))
    ok = bool(np.all(np.diff(clean.var_x_at) >= -1e-12 * clean.var_x_at[1:]))
    out.append(CheckResult("x_at variance non-decreasing (noiseless)", ok, ""))

    # Discrete filter -> Riccati: deviation shrinks linearly with tau.
    devs = []
    for tau in (4e-7, 2e-7, 1e-7):
        track = propagate_covariance(_config(c, tau=tau, t_final=1e-3, n_records=50))
        exact = analytic_variance(DELTA_B0, c.kappa, c.mu, 1.0, track.times)
        devs.append(np.max(np.abs(track.var_B / exact - 1)))
    ratios = [devs[0] / devs[1], devs[1] / devs[2]]
    ok = all(1.7 <= q <= 2.3 for q in ratios)
    out.append(CheckResult("discrete filter converges as O(tau)", ok,
                           f"deviations {', '.join(f'{d:.2e}' for d in devs)}, halving ratios "
                           f"{ratios[0]:.2f}, {ratios[1]:.2f}"))

    # Conditional-mean increments vs the diffusion form.
    cfg = _config(c, tau=TAU, t_final=1e3 * TAU, record_stride=1, truth_mode="innovation")
    rec = run_trajectory(cfg)
    track = propagate_covariance(cfg)
    cov_bp_prev = np.concatenate([[0.0], track.cov_Bp[:-1]])
    dW = rec.innovations * math.sqrt(2 * cfg.tau)
    sde = mean_increment_sde(cov_bp_prev, c.kappa, dW)
    inc = np.diff(np.concatenate([[0.0], rec.mean_B]))
    mask = np.abs(sde) > 0
    disc = np.max(np.abs(inc[mask] / sde[mask] - 1))
    same = np.array_equal(rec.var_B, track.var_B)
    out.append(CheckResult("mean increments match diffusion form to O(kappa^2 tau)",
                           disc <= 2 * c.kappa_sq * cfg.tau,
                           f"max rel discrepancy {disc:.2e} (bound {2 * c.kappa_sq * cfg.tau:.2e})"))
    out.append(CheckResult("covariance track identical inside trajectory", same, ""))
    return out


CRITERIA = {
    1: ("Parameter derivation", criterion_parameters),
    2: ("Closed-form agreement", criterion_closed_form),
    3: ("Asymptotic scaling", criterion_scaling),
    4: ("Squeezing gain", criterion_squeezing),
    5: ("Stern-Gerlach gain", criterion_stern_gerlach),
    6: ("Decay behaviour", criterion_decay),
    7: ("Filter consistency", criterion_filter_consistency),
    8: ("Oracle equivalence", criterion_oracles),
    9: ("Determinism", criterion_determinism),
}


def run_checks(which=None) -> list[CheckResult]:
    results = []
    for key, (title, fn) in CRITERIA.items():
        if which is not None and key not in which:
            continue
        for res in fn():
            res.name = f"{key}. {title}: {res.name}"
            results.append(res)
    if which is None:
        results += check_invariants()
    return results
