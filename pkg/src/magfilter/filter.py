"""Discrete-time conditional filter for the magnetometer and its Monte Carlo harness.

Each step of duration ``tau`` applies the atom-light/atom-field interaction,
optional spontaneous-emission damping and noise, a readout of ``x_ph``, a
fresh probe segment and the loss of spin polarisation, in that order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .gaussian import (
    GaussianState,
    MeasurementSpec,
    add_noise,
    condition_on_quadrature,
    join,
    linear_transform,
    sample_outcome,
)
from .model import (
    MAX_DECAY_PER_STEP,
    EffectiveCouplings,
    build_step_matrices,
    fresh_probe_segment,
    initial_state,
)

TRUTH_MODES = ("ground-truth", "innovation")
ATOMS_AND_FIELD = ("B", "x_at", "p_at")


@dataclass(frozen=True)
class FilterConfig:
    couplings: EffectiveCouplings
    tau: float = 1e-8
    t_final: float = 1e-2
    decay: bool = False
    r: float = 1.0
    delta_b0: float = 1e-12
    b_mean: float = 0.0
    sg_time: float | None = None
    truth_mode: str = "ground-truth"
    b_true: float | None = None
    seed: int = 0
    n_records: int = 200
    record_stride: int | None = None

    def __post_init__(self):
        if not 0 < self.tau < self.t_final:
            raise ValueError(f"need 0 < tau < t_final, got tau={self.tau}, t_final={self.t_final}")
        if self.decay and self.couplings.eta * self.tau > MAX_DECAY_PER_STEP:
            raise ValueError(
                f"eta*tau = {self.couplings.eta * self.tau:.3g} exceeds {MAX_DECAY_PER_STEP}"
            )
        if not self.r > 0:
            raise ValueError(f"squeezing r must be positive, got {self.r}")
        if not self.delta_b0 > 0:
            raise ValueError(f"delta_b0 must be positive, got {self.delta_b0}")
        if self.truth_mode not in TRUTH_MODES:
            raise ValueError(f"truth_mode must be one of {TRUTH_MODES}, got {self.truth_mode!r}")
        if self.sg_time is not None and not 0 < self.sg_time:
            raise ValueError(f"sg_time must be positive, got {self.sg_time}")
        if self.record_stride is not None and self.record_stride < 1:
            raise ValueError(f"record_stride must be >= 1, got {self.record_stride}")
        if self.n_records < 1:
            raise ValueError(f"n_records must be >= 1, got {self.n_records}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.tau))

    def record_steps(self) -> np.ndarray:
        n = self.n_steps
        if self.record_stride is not None:
            steps = np.arange(self.record_stride, n + 1, self.record_stride)
            if steps.size == 0 or steps[-1] != n:
                steps = np.append(steps, n)
            return steps.astype(np.int64)
        return np.unique(np.rint(np.geomspace(1, n, self.n_records)).astype(np.int64))


@dataclass
class CovarianceTrack:
    """Deterministic covariance history at the recorded steps."""

    times: np.ndarray
    steps: np.ndarray
    cov: np.ndarray
    jx_fraction: np.ndarray
    final: GaussianState
    # Per-step quantities needed to drive the mean track; empty unless requested.
    step_gain: np.ndarray = field(default=None, repr=False)
    step_xvar: np.ndarray = field(default=None, repr=False)
    step_jx: np.ndarray = field(default=None, repr=False)

    @property
    def var_B(self) -> np.ndarray:
        return 0.5 * self.cov[:, 0, 0]

    @property
    def delta_B(self) -> np.ndarray:
        return np.sqrt(self.var_B)

    @property
    def cov_Bp(self) -> np.ndarray:
        """Classical covariance of B and p_at."""
        return 0.5 * self.cov[:, 0, 2]

    @property
    def var_x_at(self) -> np.ndarray:
        return 0.5 * self.cov[:, 1, 1]


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    mean_B: np.ndarray
    var_B: np.ndarray
    innovations: np.ndarray
    jx_fraction: np.ndarray
    B_true: float | None = None


@dataclass
class EnsembleStats:
    times: np.ndarray
    mean_of_mean: np.ndarray
    mean_se: np.ndarray
    var_of_mean: np.ndarray
    var_of_mean_se: np.ndarray
    mse: np.ndarray
    mse_se: np.ndarray
    var_B: np.ndarray
    ltv_residual: np.ndarray
    means: np.ndarray = field(repr=False)
    b_true: np.ndarray = field(repr=False)


def _filter_prior(config: FilterConfig) -> GaussianState:
    return initial_state(config.delta_b0, config.r, config.b_mean)


def _truth_prior(config: FilterConfig, b_true: float) -> GaussianState:
    mean = np.zeros(5)
    mean[0] = b_true
    return GaussianState(mean, np.diag([0.0, 1.0, 1.0, 1.0 / config.r, config.r]))


def filter_step(
    state: GaussianState,
    config: FilterConfig,
    jx_fraction: float,
    outcome: float | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[GaussianState, float, float]:
    """One interaction/readout cycle built from the gaussian-core operations.

    The readout is ``outcome`` if given, else drawn from ``rng``, else the
    predicted mean. Returns the new state, the innovation and the updated
    polarisation fraction.
    """
    sm = build_step_matrices(config.couplings, config.tau, jx_fraction, config.decay)
    state = linear_transform(state, sm.S)
    if config.decay:
        state = add_noise(state, sm.L, sm.M, sm.noise_prefactor)
    x_ph = state.index("x_ph")
    if outcome is None:
        outcome = sample_outcome(state, x_ph, rng) if rng is not None else state.mean[x_ph]
    atoms, chi = condition_on_quadrature(state, ATOMS_AND_FIELD, MeasurementSpec(0), outcome)
    state = join(atoms, fresh_probe_segment(config.r))
    if config.decay:
        jx_fraction *= 1 - config.couplings.eta * config.tau
    return state, chi, jx_fraction


def _track(config, cov0, record_steps, store_steps):
    n = config.n_steps
    n_rec = len(record_steps)
    rec_cov = np.empty((n_rec, 5, 5))
    rec_jx = np.empty(n_rec)
    m = n if store_steps else 0
    gain = np.empty((m, 3))
    xvar = np.empty(m)
    jx = np.empty(m)
    c = config.couplings
    G, _ = _kernels.covariance_track(
        np.ascontiguousarray(cov0, dtype=np.float64), c.kappa, c.mu, c.eta, config.tau,
        config.r, config.decay, n, record_steps, rec_cov, rec_jx, gain, xvar, jx, store_steps,
    )
    return G, rec_cov, rec_jx, gain, xvar, jx


def propagate_covariance(
    config: FilterConfig, method: str = "kernel", store_steps: bool = False
) -> CovarianceTrack:
    """Deterministic covariance history of the filter.

    ``method="reference"`` runs the same recursion through the generic
    ``GaussianState`` operations; it is slow and meant for short checks.
    """
    steps = config.record_steps()
    prior = _filter_prior(config)
    if method == "kernel":
        G, rec_cov, rec_jx, gain, xvar, jx = _track(config, prior.cov, steps, store_steps)
        final = GaussianState(prior.mean, G, prior.labels)
        return CovarianceTrack(
            steps * config.tau, steps, rec_cov, rec_jx, final,
            gain if store_steps else None,
            xvar if store_steps else None,
            jx if store_steps else None,
        )
    if method != "reference":
        raise ValueError(f"unknown method {method!r}")
    state = GaussianState(np.zeros(5), prior.cov, prior.labels)
    jx = 1.0
    rec_cov, rec_jx = [], []
    wanted = set(steps.tolist())
    for k in range(1, config.n_steps + 1):
        state, _, jx = filter_step(state, config, jx)
        if k in wanted:
            rec_cov.append(np.array(state.cov))
            rec_jx.append(jx)
    final = GaussianState(prior.mean, state.cov, state.labels)
    return CovarianceTrack(steps * config.tau, steps, np.array(rec_cov), np.array(rec_jx), final)


def stern_gerlach_update(state: GaussianState, outcome: float | None = None) -> GaussianState:
    """Destructive readout of the atomic spin projection ``p_at`` (J_z).

    The spin projection is the only atomic quadrature correlated with B.
    Without ``outcome`` the predicted mean is used, which leaves the mean
    unchanged; the covariance does not depend on it. A state that has
    already been read out is returned unchanged.
    """
    if "p_at" not in state.labels:
        return state
    i = state.index("p_at")
    if outcome is None:
        outcome = state.mean[i]
    retained = [k for k in range(state.dim) if k != i]
    new, _ = condition_on_quadrature(state, retained, MeasurementSpec(0), outcome)
    return new


def sg_variance(config: FilterConfig, t: float | None = None) -> tuple[float, float]:
    """B variance just before and just after an atomic readout at time ``t``."""
    t = config.sg_time if t is None else t
    if t is None:
        raise ValueError("no Stern-Gerlach time given")
    cfg = replace(config, t_final=t, record_stride=None, n_records=1)
    final = propagate_covariance(cfg).final
    after = stern_gerlach_update(final)
    return final.variance("B"), after.variance("B")


def trajectory_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent stream for trajectory ``index``; does not depend on the ensemble size."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _draw_truth(config: FilterConfig, rng: np.random.Generator) -> float | None:
    if config.truth_mode != "ground-truth":
        return None
    if config.b_true is not None:
        return float(config.b_true)
    return config.b_mean + config.delta_b0 * rng.standard_normal()


def _mean_track(config, filt, truth, b_true, normals, steps):
    c = config.couplings
    n_rec = len(steps)
    rec_mean = np.empty(n_rec)
    rec_truth = np.empty(n_rec)
    innovations = np.empty(config.n_steps)
    mean0 = _filter_prior(config).mean.copy()
    use_truth = truth is not None
    truth0 = np.zeros(5)
    if use_truth:
        truth0[0] = b_true
        gain_t, xvar_t = truth.step_gain, truth.step_xvar
    else:
        gain_t, xvar_t = filt.step_gain, filt.step_xvar
    _kernels.mean_track(
        mean0, truth0, use_truth, c.kappa, c.mu, c.eta, config.tau, config.decay,
        filt.step_jx, filt.step_gain, filt.step_xvar, gain_t, xvar_t,
        np.ascontiguousarray(normals, dtype=np.float64), steps, rec_mean, rec_truth, innovations,
    )
    return rec_mean, innovations


def _covariance_tracks(config: FilterConfig):
    filt = propagate_covariance(config, store_steps=True)
    truth = None
    if config.truth_mode == "ground-truth":
        prior = _truth_prior(config, 0.0)
        steps = config.record_steps()
        G, rec_cov, rec_jx, gain, xvar, jx = _track(config, prior.cov, steps, True)
        truth = CovarianceTrack(
            steps * config.tau, steps, rec_cov, rec_jx,
            GaussianState(prior.mean, G), gain, xvar, jx,
        )
    return filt, truth


def run_trajectory(
    config: FilterConfig,
    rng: np.random.Generator | None = None,
    normals: np.ndarray | None = None,
    method: str = "kernel",
    _tracks=None,
) -> TrajectoryRecord:
    """Simulate one measurement record and the filter's conditional mean.

    Random draws come from ``rng`` (default: stream 0 of ``config.seed``):
    first the true field if it is to be sampled, then one standard normal
    per step. ``normals`` overrides the per-step draws.
    """
    if rng is None:
        rng = trajectory_rng(config.seed, 0)
    b_true = _draw_truth(config, rng)
    if normals is None:
        normals = rng.standard_normal(config.n_steps)
    elif len(normals) != config.n_steps:
        raise ValueError(f"need {config.n_steps} normals, got {len(normals)}")
    steps = config.record_steps()
    if method == "reference":
        return _run_trajectory_reference(config, b_true, normals, steps)
    if method != "kernel":
        raise ValueError(f"unknown method {method!r}")
    filt, truth = _tracks if _tracks is not None else _covariance_tracks(config)
    rec_mean, innovations = _mean_track(config, filt, truth, b_true, normals, steps)
    return TrajectoryRecord(
        steps * config.tau, rec_mean, filt.var_B, innovations, filt.jx_fraction, b_true
    )


class _Replay:
    """Stand-in generator that hands out pre-drawn standard normals in order."""

    def __init__(self, normals):
        self._it = iter(normals)

    def standard_normal(self):
        return next(self._it)


def _run_trajectory_reference(config, b_true, normals, steps):
    state = _filter_prior(config)
    truth = _truth_prior(config, b_true) if b_true is not None else None
    draws = _Replay(normals)
    jx = 1.0
    wanted = set(steps.tolist())
    mean_B, var_B, jxs = [], [], []
    innovations = np.empty(config.n_steps)
    for k in range(1, config.n_steps + 1):
        if truth is not None:
            sm = build_step_matrices(config.couplings, config.tau, jx, config.decay)
            pred = linear_transform(truth, sm.S)
            if config.decay:
                pred = add_noise(pred, sm.L, sm.M, sm.noise_prefactor)
            outcome = sample_outcome(pred, "x_ph", draws)
            truth, _, _ = filter_step(truth, config, jx, outcome=outcome)
            state, chi, jx = filter_step(state, config, jx, outcome=outcome)
        else:
            state, chi, jx = filter_step(state, config, jx, rng=draws)
        innovations[k - 1] = chi
        if k in wanted:
            mean_B.append(state.mean[0])
            var_B.append(state.variance("B"))
            jxs.append(jx)
    return TrajectoryRecord(
        steps * config.tau, np.array(mean_B), np.array(var_B), innovations, np.array(jxs), b_true
    )


def run_ensemble(
    config: FilterConfig,
    n_traj: int,
    seeds=None,
    workers: int = 1,
) -> EnsembleStats:
    """Monte Carlo statistics over independent trajectories.

    Trajectory ``i`` uses ``trajectory_rng(config.seed, i)`` unless explicit
    per-trajectory ``seeds`` are given. Results do not depend on ``workers``.
    """
    if n_traj < 2:
        raise ValueError(f"need at least two trajectories, got {n_traj}")
    if seeds is not None and len(seeds) != n_traj:
        raise ValueError(f"got {len(seeds)} seeds for {n_traj} trajectories")
    tracks = _covariance_tracks(config)

    def one(i):
        rng = trajectory_rng(config.seed, i) if seeds is None else np.random.default_rng(seeds[i])
        rec = run_trajectory(config, rng, _tracks=tracks)
        return rec.mean_B, rec.B_true

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(n_traj)))
    else:
        results = [one(i) for i in range(n_traj)]

    means = np.array([m for m, _ in results])
    var_B = tracks[0].var_B
    mean_of_mean = means.mean(axis=0)
    mean_se = means.std(axis=0, ddof=1) / math.sqrt(n_traj)
    var_of_mean = means.var(axis=0, ddof=1)
    var_of_mean_se = var_of_mean * math.sqrt(2.0 / (n_traj - 1))
    if config.truth_mode == "ground-truth":
        b_true = np.array([b for _, b in results])
        sq = (means - b_true[:, None]) ** 2
        mse = sq.mean(axis=0)
        mse_se = sq.std(axis=0, ddof=1) / math.sqrt(n_traj)
    else:
        b_true = np.full(n_traj, np.nan)
        mse = np.full(len(var_B), np.nan)
        mse_se = np.full(len(var_B), np.nan)
    ltv = config.delta_b0**2 - (var_B + var_of_mean)
    return EnsembleStats(
        tracks[0].times, mean_of_mean, mean_se, var_of_mean, var_of_mean_se,
        mse, mse_se, var_B, ltv, means, b_true,
    )
