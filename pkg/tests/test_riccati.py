import numpy as np
import pytest

from magfilter.analytic import (
    analytic_sg_variance,
    analytic_variance,
    asymptotic_variance,
    mean_increment_sde,
)
from magfilter.model import PhysicalParams, derive_couplings
from magfilter.riccati import (
    drift_matrix,
    integrate_riccati,
    measurement_matrix,
    riccati_linearized,
    riccati_rhs,
)

DB0 = 1e-12
C = derive_couplings(PhysicalParams())
V0 = np.diag([2 * DB0**2, 1.0])
PICO2 = 1e-24


def test_rhs_zero_state():
    out = riccati_rhs(np.zeros((2, 2)), drift_matrix(3.0), measurement_matrix(5.0))
    np.testing.assert_array_equal(out, np.zeros((2, 2)))


def test_rhs_hand_substitution():
    mu, k2 = 8.79e16, 1.83e6
    out = riccati_rhs(V0, drift_matrix(mu), measurement_matrix(k2))
    assert out[0, 0] == 0.0
    assert out[0, 1] == pytest.approx(-2 * mu * DB0**2, rel=1e-15)
    assert out[1, 0] == out[0, 1]
    assert out[1, 1] == pytest.approx(-k2, rel=1e-15)


def test_rhs_vanishes_without_coupling():
    V = np.array([[2.0, 0.3], [0.3, 0.7]])
    np.testing.assert_array_equal(riccati_rhs(V, drift_matrix(0), measurement_matrix(0)), 0 * V)


def test_rk4_matches_finite_difference_of_closed_form():
    # Independent check of the rhs convention: derivative of the closed form.
    t, h = 2e-4, 1e-9
    dv = (analytic_variance(DB0, C.kappa, C.mu, 1, t + h)
          - analytic_variance(DB0, C.kappa, C.mu, 1, t - h)) / (2 * h)
    _, V = integrate_riccati(V0, C, 1.0, t, times=[t])
    rhs = riccati_rhs(V[0], drift_matrix(C.mu), measurement_matrix(C.kappa_sq))
    assert 0.5 * rhs[0, 0] == pytest.approx(dv, rel=1e-5)


@pytest.mark.parametrize("r", [1.0, 3.0])
def test_rk4_matches_closed_form(r):
    times = np.geomspace(1e-6, 1e-2, 25)
    ts, V = integrate_riccati(V0, C, r, 1e-2, times=times)
    exact = analytic_variance(DB0, C.kappa, C.mu, r, ts)
    np.testing.assert_allclose(0.5 * V[:, 0, 0], exact, rtol=1e-6)
    assert np.all(V[:, 0, 1] == V[:, 1, 0])


def test_rk4_zero_initial_state_stays_zero():
    _, V = integrate_riccati(np.zeros((2, 2)), C, 1.0, 1e-4)
    np.testing.assert_array_equal(V, 0.0)


def test_rk4_step_halving():
    dt = 1e-4 / C.kappa_sq
    _, V1 = integrate_riccati(V0, C, 1.0, 1e-2, dt=dt)
    _, V2 = integrate_riccati(V0, C, 1.0, 1e-2, dt=dt / 2)
    assert abs(V2[-1, 0, 0] / V1[-1, 0, 0] - 1) < 1e-8


def test_rk4_rejects_large_step():
    with pytest.raises(ValueError):
        integrate_riccati(V0, C, 1.0, 1e-3, dt=1e-3 / C.kappa_sq)


@pytest.mark.parametrize("r", [1.0, 3.0])
def test_linearisation_matches_rk4(r):
    times = np.geomspace(1e-6, 1e-2, 20)
    ts, V = integrate_riccati(V0, C, r, 1e-2, times=times)
    W = riccati_linearized(V0, C, r, ts)
    np.testing.assert_allclose(W, V, rtol=1e-8)


# --- closed forms ------------------------------------------------------------


def test_closed_form_at_zero():
    assert analytic_variance(DB0, C.kappa, C.mu, 1, 0.0) == DB0**2
    assert analytic_sg_variance(DB0, C.kappa, C.mu, 0.0) == DB0**2


def test_closed_form_asymptote_at_10ms():
    t = 1e-2
    exact = analytic_variance(DB0, C.kappa, C.mu, 1, t)
    asym = asymptotic_variance(C.kappa, C.mu, 1, t)
    # 6/(kappa^2 mu^2 t^3) with kappa^2 = 1.833e6 /s, mu = 8.794e4 /(s pT).
    assert asym / PICO2 == pytest.approx(4.23e-10, rel=2e-3)
    assert exact == pytest.approx(asym, rel=0.01)
    assert np.sqrt(exact) / 1e-12 == pytest.approx(2.06e-5, rel=5e-3)


def test_squeezing_ratio():
    t = 1e-2
    ratio = analytic_variance(DB0, C.kappa, C.mu, 3, t) / analytic_variance(DB0, C.kappa, C.mu, 1, t)
    assert ratio == pytest.approx(1 / 3, rel=0.02)


def test_sg_long_time_ratio():
    t = 1e3 / C.kappa_sq
    ratio = analytic_sg_variance(DB0, C.kappa, C.mu, t) / analytic_variance(DB0, C.kappa, C.mu, 1, t)
    assert ratio == pytest.approx(0.25, rel=0.02)


def test_sg_without_probe_light():
    t = 1e-4
    expected = DB0**2 / (1 + 2 * C.mu**2 * DB0**2 * t**2)
    assert analytic_sg_variance(DB0, 0.0, C.mu, t) == pytest.approx(expected, rel=1e-15)


def test_sg_equals_conditioning_riccati_solution_on_p_at():
    # Reading out p_at exactly leaves V11 - V12^2/V22 for B.
    t = 3e-4
    _, V = integrate_riccati(V0, C, 1.0, t, times=[t])
    v = V[0]
    cond = 0.5 * (v[0, 0] - v[0, 1] ** 2 / v[1, 1])
    assert cond == pytest.approx(analytic_sg_variance(DB0, C.kappa, C.mu, t), rel=1e-7)


def test_mean_increment_sde():
    assert mean_increment_sde(3.0, 2.0, 0.0) == 0.0
    assert mean_increment_sde(-1e-20, 1e3, 1e-4) == pytest.approx(-np.sqrt(2) * 1e-21, rel=1e-15)


def test_long_time_covariance_bp():
    # |cov(B, p_at)| -> 3/(kappa^2 mu t^2), so increments shrink as t^-2.
    times = np.array([2e-3, 4e-3, 8e-3])
    ts, V = integrate_riccati(V0, C, 1.0, 1e-2, times=times)
    cov_bp = 0.5 * V[:, 0, 1]
    np.testing.assert_allclose(-cov_bp, 3 / (C.kappa_sq * C.mu * ts**2), rtol=2e-3)
