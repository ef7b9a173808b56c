import math
from dataclasses import replace

import numpy as np
import pytest

from magfilter.analytic import analytic_sg_variance, analytic_variance, mean_increment_sde
from magfilter.filter import (
    FilterConfig,
    propagate_covariance,
    run_ensemble,
    run_trajectory,
    sg_variance,
    stern_gerlach_update,
    trajectory_rng,
)
from magfilter.gaussian import GaussianState, check_validity
from magfilter.model import EffectiveCouplings, PhysicalParams, derive_couplings, initial_state

C = derive_couplings(PhysicalParams())
DB0 = 1e-12


def cfg(**kw):
    kw.setdefault("tau", 1e-8)
    kw.setdefault("t_final", 1e-3)
    return FilterConfig(C, **kw)


def test_config_validation():
    with pytest.raises(ValueError):
        cfg(tau=1e-2, t_final=1e-3)
    with pytest.raises(ValueError):
        FilterConfig(C, tau=1e-2, t_final=10.0, decay=True)
    with pytest.raises(ValueError):
        cfg(truth_mode="oracle")


def test_record_grid():
    c = cfg()
    steps = c.record_steps()
    assert steps[0] == 1 and steps[-1] == c.n_steps
    assert np.all(np.diff(steps) > 0)
    assert len(steps) <= 200
    lin = replace(c, record_stride=30000).record_steps()
    np.testing.assert_array_equal(lin, [30000, 60000, 90000, 100000])


# --- covariance track ----------------------------------------------------------


def test_no_probe_coupling_keeps_prior():
    c = FilterConfig(EffectiveCouplings(0.0, C.mu), tau=1e-7, t_final=1e-3)
    tr = propagate_covariance(c)
    np.testing.assert_allclose(tr.var_B, DB0**2, rtol=1e-15)


@pytest.mark.parametrize("decay, r", [(False, 1.0), (True, 3.0)])
def test_kernel_matches_reference_path(decay, r):
    c = FilterConfig(
        EffectiveCouplings(C.kappa, C.mu, 400.0), tau=1e-6, t_final=2e-3, decay=decay, r=r,
        record_stride=50,
    )
    fast = propagate_covariance(c)
    slow = propagate_covariance(c, method="reference")
    np.testing.assert_allclose(fast.cov, slow.cov, rtol=1e-11, atol=1e-11 * DB0**2)
    np.testing.assert_allclose(fast.jx_fraction, slow.jx_fraction, rtol=1e-14)


def test_noiseless_track_matches_closed_form():
    tr = propagate_covariance(cfg(t_final=1e-2))
    exact = analytic_variance(DB0, C.kappa, C.mu, 1.0, tr.times)
    mask = tr.times >= 1e-6
    np.testing.assert_allclose(tr.var_B[mask], exact[mask], rtol=5e-3)


def test_decay_curve_plateaus_above_noiseless():
    clean = propagate_covariance(cfg(t_final=1e-2))
    noisy = propagate_covariance(cfg(t_final=1e-2, decay=True))
    assert np.all(np.diff(noisy.var_B) <= 0)
    assert noisy.delta_B[-1] > clean.delta_B[-1]
    assert noisy.jx_fraction[-1] == pytest.approx((1 - C.eta * 1e-8) ** 10**6, rel=1e-10)


def test_variance_non_increasing_and_x_at_non_decreasing():
    tr = propagate_covariance(cfg(r=2.0))
    assert np.all(np.diff(tr.var_B) <= 0)
    assert np.all(np.diff(tr.var_x_at) >= 0)


def test_states_along_track_are_valid():
    tr = propagate_covariance(cfg(decay=True, r=3.0))
    for g in tr.cov[::10]:
        assert check_validity(GaussianState(np.zeros(5), g)).ok


def test_convergence_to_continuum_is_first_order():
    devs = []
    for tau in (4e-7, 2e-7, 1e-7):
        tr = propagate_covariance(cfg(tau=tau, n_records=40))
        exact = analytic_variance(DB0, C.kappa, C.mu, 1.0, tr.times)
        devs.append(np.max(np.abs(tr.var_B / exact - 1)))
    assert 1.7 < devs[0] / devs[1] < 2.3
    assert 1.7 < devs[1] / devs[2] < 2.3


# --- Stern-Gerlach -------------------------------------------------------------


def test_sg_on_uncorrelated_atoms_changes_nothing():
    s = initial_state(DB0)
    out = stern_gerlach_update(s)
    assert out.variance("B") == s.variance("B")
    assert "p_at" not in out.labels


def test_sg_after_probing_matches_closed_form():
    before, after = sg_variance(cfg(), 1e-3)
    assert after == pytest.approx(analytic_sg_variance(DB0, C.kappa, C.mu, 1e-3), rel=5e-3)
    assert after / before == pytest.approx(0.25, rel=0.02)


def test_sg_is_single_shot():
    final = propagate_covariance(cfg(t_final=1e-4)).final
    once = stern_gerlach_update(final)
    assert stern_gerlach_update(once) == once


def test_sg_outcome_moves_mean_only():
    final = propagate_covariance(cfg(t_final=1e-4)).final
    a = stern_gerlach_update(final, outcome=0.0)
    b = stern_gerlach_update(final, outcome=0.01)
    np.testing.assert_array_equal(a.cov, b.cov)
    assert b.mean[0] != a.mean[0]


# --- trajectories ----------------------------------------------------------------


def test_zero_innovations_keep_prior_mean():
    c = cfg(t_final=1e-4, b_mean=3e-13, truth_mode="innovation")
    rec = run_trajectory(c, normals=np.zeros(c.n_steps))
    np.testing.assert_array_equal(rec.mean_B, 3e-13)
    assert np.all(rec.innovations == 0)


@pytest.mark.parametrize("mode", ["innovation", "ground-truth"])
def test_trajectory_kernel_matches_reference(mode):
    c = FilterConfig(
        EffectiveCouplings(C.kappa, C.mu, 400.0), tau=1e-6, t_final=5e-4, decay=True, r=2.0,
        record_stride=1, truth_mode=mode, seed=11,
    )
    fast = run_trajectory(c)
    slow = run_trajectory(c, method="reference")
    assert fast.B_true == slow.B_true
    scale = np.max(np.abs(slow.mean_B))
    np.testing.assert_allclose(fast.mean_B, slow.mean_B, rtol=0, atol=1e-12 * scale)
    np.testing.assert_allclose(fast.innovations, slow.innovations, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(fast.var_B, slow.var_B, rtol=1e-11)


def test_covariance_track_identical_inside_trajectory():
    c = cfg(t_final=2e-4, decay=True)
    rec = run_trajectory(c)
    np.testing.assert_array_equal(rec.var_B, propagate_covariance(c).var_B)


def test_trajectory_seeded_reproducibility():
    c = cfg(t_final=1e-4)
    a = run_trajectory(c, trajectory_rng(5, 2))
    b = run_trajectory(c, trajectory_rng(5, 2))
    np.testing.assert_array_equal(a.mean_B, b.mean_B)
    assert a.B_true == b.B_true


def test_fixed_truth_is_used():
    rec = run_trajectory(cfg(t_final=1e-4, b_true=2e-12))
    assert rec.B_true == 2e-12


def test_discrete_mean_update_vs_diffusion_form():
    c = cfg(t_final=1e-5, record_stride=1, truth_mode="innovation")
    rec = run_trajectory(c)
    tr = propagate_covariance(c)
    cov_bp = np.concatenate([[0.0], tr.cov_Bp[:-1]])
    sde = mean_increment_sde(cov_bp, C.kappa, rec.innovations * math.sqrt(2 * c.tau))
    inc = np.diff(np.concatenate([[0.0], rec.mean_B]))
    mask = sde != 0
    rel = np.abs(inc[mask] / sde[mask] - 1)
    assert rel.max() <= 2 * C.kappa_sq * c.tau


# --- ensembles -------------------------------------------------------------------


def test_identical_seeds_give_zero_spread():
    st = run_ensemble(cfg(t_final=1e-4), 2, seeds=[4, 4])
    np.testing.assert_array_equal(st.var_of_mean, 0.0)


def test_ensemble_independent_of_worker_count():
    c = cfg(t_final=2e-4, decay=True)
    a = run_ensemble(c, 6, workers=1)
    b = run_ensemble(c, 6, workers=3)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.b_true, b.b_true)


def test_ensemble_trajectory_zero_is_run_trajectory():
    c = cfg(t_final=1e-4)
    st = run_ensemble(c, 3)
    np.testing.assert_array_equal(st.means[0], run_trajectory(c).mean_B)


def test_ensemble_rejects_single_trajectory():
    with pytest.raises(ValueError):
        run_ensemble(cfg(t_final=1e-4), 1)


@pytest.mark.slow
def test_ensemble_statistics_noiseless():
    st = run_ensemble(cfg(truth_mode="ground-truth", seed=0), 500, workers=4)
    ratio = st.mse[-1] / st.var_B[-1]
    assert 0.85 <= ratio <= 1.15
    floor = 1e-12 * DB0**2
    assert np.all(np.abs(st.ltv_residual) <= 3 * st.var_of_mean_se + floor)
    assert np.all(np.abs(st.mean_of_mean) <= 3 * st.mean_se)
