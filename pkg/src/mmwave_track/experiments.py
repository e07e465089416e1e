"""Monte-Carlo harness producing per-step MSE traces for each tracker.

Each trial draws its own truth trajectory, observation noise and
initialization errors from a private substream keyed by ``(seed, trial)``,
so results do not depend on how trials are batched. Random draws are taken
in standard units and scaled afterwards, which keeps trials paired across
SNR and array-size sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import ArrayConfig, ChannelState, DynamicsParams, noise_psd_from_snr
from .trackers import (
    StepSizes,
    combine,
    ekf_pass,
    lms_pass,
    measurement_and_jacobian,
    measurement_noise,
    process_noise,
    transition_matrix,
)

ALGORITHMS = ("lms", "bilms", "ekf", "none")
PARAM_GROUPS = ("aoa", "aod", "gain")
TERMINAL_INITS = ("scheme", "truth", "forward")
#: Initial AoA/AoD spread around the beam direction, half-width in radians.
ANGLE_SPREAD = np.deg2rad(5.0)
#: Fraction of the horizon, counted from the end, averaged as steady state.
STEADY_STATE_FRACTION = 0.2


@dataclass(frozen=True)
class InitScheme:
    """Tracker start: exact truth, or truth plus Gaussian error.

    Variances are per real entry: ``var_alpha_eps`` for each of Re/Im of
    every gain and ``var_angle_eps`` (rad^2) for every angle.
    """

    kind: str = "perfect"
    var_alpha_eps: float = 0.25
    var_angle_eps: float = np.deg2rad(0.5) ** 2

    def __post_init__(self):
        if self.kind not in ("perfect", "imperfect"):
            raise ValueError(f"init kind must be 'perfect' or 'imperfect', got {self.kind!r}")
        if not (self.var_alpha_eps >= 0 and self.var_angle_eps >= 0):
            raise ValueError("initialization variances must be non-negative")

    def std_vector(self, L: int) -> np.ndarray:
        if self.kind == "perfect":
            return np.zeros(4 * L)
        return np.sqrt(np.concatenate([
            np.full(2 * L, self.var_alpha_eps), np.full(2 * L, self.var_angle_eps)
        ]))


@dataclass(frozen=True)
class ExperimentConfig:
    array: ArrayConfig = field(default_factory=ArrayConfig)
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    steps: StepSizes = field(default_factory=StepSizes)
    snr_db: float = 30.0
    horizon: int = 100
    trials: int = 500
    init: InitScheme = field(default_factory=InitScheme)
    algorithms: tuple[str, ...] = ("lms", "bilms", "ekf", "none")
    seed: int = 0
    paths: int = 1
    terminal_init: str = "scheme"
    #: EKF starting covariance scale under perfect initialization.
    perfect_init_var: float = 1e-6

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon!r}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError(f"trials must be a positive integer, got {self.trials!r}")
        if int(self.paths) != self.paths or self.paths < 1:
            raise ValueError(f"paths must be a positive integer, got {self.paths!r}")
        algs = tuple(self.algorithms)
        if not algs:
            raise ValueError("algorithms must not be empty")
        unknown = [a for a in algs if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithms {unknown}; choose from {ALGORITHMS}")
        if len(set(algs)) != len(algs):
            raise ValueError("algorithms must not repeat")
        object.__setattr__(self, "algorithms", algs)
        if self.terminal_init not in TERMINAL_INITS:
            raise ValueError(f"terminal_init must be one of {TERMINAL_INITS}, got {self.terminal_init!r}")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if not self.perfect_init_var >= 0:
            raise ValueError("perfect_init_var must be non-negative")

    @property
    def noise_psd(self) -> float:
        return noise_psd_from_snr(self.snr_db, self.array)


@dataclass
class MseTrace:
    """Per-step MSE for every algorithm and parameter group.

    ``mse[alg][group]`` and ``stderr[alg][group]`` have length ``horizon``;
    ``trial_errors[alg][group]`` keeps the per-trial squared errors,
    shape ``(trials, horizon)``, with NaN rows for diverged trials.
    """

    horizon: int
    mse: dict
    stderr: dict
    diverged: dict
    trial_errors: dict

    def all_diverged(self, alg: str) -> bool:
        return self.diverged[alg] == next(iter(self.trial_errors[alg].values())).shape[0]

    def steady_state(self, alg: str, group: str = "aoa",
                     fraction: float = STEADY_STATE_FRACTION) -> tuple[float, float]:
        """Mean and standard error of the late-horizon MSE across trials."""
        start = steady_state_start(self.horizon, fraction)
        per_trial = self.trial_errors[alg][group][:, start:].mean(axis=1)
        per_trial = per_trial[np.isfinite(per_trial)]
        if per_trial.size == 0:
            return float("nan"), float("nan")
        se = per_trial.std(ddof=1) / np.sqrt(per_trial.size) if per_trial.size > 1 else 0.0
        return float(per_trial.mean()), float(se)

    def records(self):
        """Yield ``(step, algorithm, group, mse, stderr, diverged_count)`` rows, steps 1-based."""
        for alg in self.mse:
            for group in PARAM_GROUPS:
                for k in range(self.horizon):
                    yield (k + 1, alg, group, float(self.mse[alg][group][k]),
                           float(self.stderr[alg][group][k]), int(self.diverged[alg]))


def steady_state_start(horizon: int, fraction: float = STEADY_STATE_FRACTION) -> int:
    return min(horizon - 1, int(np.floor(horizon * (1.0 - fraction))))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def initial_truth(config: ArrayConfig, L: int, rng: np.random.Generator) -> ChannelState:
    """Angles uniform within +-5 degrees of the beams; standard complex Gaussian gains."""
    theta = config.theta_point + rng.uniform(-ANGLE_SPREAD, ANGLE_SPREAD, L)
    phi = config.phi_point + rng.uniform(-ANGLE_SPREAD, ANGLE_SPREAD, L)
    alpha = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / np.sqrt(2.0)
    return ChannelState(alpha, theta, phi, k=1)


def init_trial(truth: ChannelState, scheme: InitScheme, rng: np.random.Generator) -> np.ndarray:
    """Starting estimate for a tracker given the true state."""
    x = truth.to_vector()
    if scheme.kind == "perfect":
        return x
    return x + scheme.std_vector(truth.L) * rng.standard_normal(x.size)


@dataclass
class _TrialDraws:
    truth0: ChannelState
    innovations: np.ndarray  # (horizon - 1, 4L) standard normals
    noise: np.ndarray  # (horizon, 2) standard normals
    init_eps: np.ndarray  # (4L,)
    terminal_eps: np.ndarray  # (4L,)


def _draw_trial(cfg: ExperimentConfig, trial: int) -> _TrialDraws:
    rng = trial_rng(cfg.seed, trial)
    L = cfg.paths
    truth0 = initial_truth(cfg.array, L, rng)
    innovations = rng.standard_normal((cfg.horizon - 1, 4 * L))
    noise = rng.standard_normal((cfg.horizon, 2))
    init_eps = rng.standard_normal(4 * L)
    terminal_eps = rng.standard_normal(4 * L)
    return _TrialDraws(truth0, innovations, noise, init_eps, terminal_eps)


def simulate_truth(x0, innovations, dyn: DynamicsParams) -> np.ndarray:
    """Stacked truth trajectory from standard-normal innovations.

    ``innovations`` has shape ``(..., K - 1, 4L)``; the result has shape
    ``(..., K, 4L)``. Gain entries follow the AR(1) recursion with
    per-component innovation variance (1 - rho^2) / 2; angles random-walk.
    """
    x0 = np.asarray(x0, dtype=float)
    L = x0.shape[-1] // 4
    scale = np.concatenate([
        np.full(2 * L, np.sqrt((1.0 - dyn.rho ** 2) / 2.0)),
        np.full(L, np.sqrt(dyn.var_theta)),
        np.full(L, np.sqrt(dyn.var_phi)),
    ])
    u = innovations * scale
    K = u.shape[-2] + 1
    out = np.empty(x0.shape[:-1] + (K, x0.shape[-1]))
    out[..., 0, :] = x0
    decay = np.concatenate([np.full(2 * L, dyn.rho), np.ones(2 * L)])
    for k in range(1, K):
        out[..., k, :] = decay * out[..., k - 1, :] + u[..., k - 1, :]
    return out


def squared_errors(est, truth) -> dict:
    """Per-step squared error by parameter group, averaged over paths."""
    L = truth.shape[-1] // 4
    diff = est - truth
    gain = diff[..., :L] ** 2 + diff[..., L:2 * L] ** 2
    return {
        "aoa": (diff[..., 2 * L:3 * L] ** 2).mean(axis=-1),
        "aod": (diff[..., 3 * L:] ** 2).mean(axis=-1),
        "gain": gain.mean(axis=-1),
    }


def run_experiment(cfg: ExperimentConfig) -> MseTrace:
    """Monte-Carlo MSE traces for every selected algorithm."""
    draws = [_draw_trial(cfg, t) for t in range(cfg.trials)]
    L = cfg.paths
    n0 = cfg.noise_psd
    x0_true = np.stack([d.truth0.to_vector() for d in draws])
    truth = simulate_truth(x0_true, np.stack([d.innovations for d in draws]), cfg.dynamics)
    # Measurements indexed (step, trial, 2) for the passes.
    truth_km = np.swapaxes(truth, 0, 1)
    h, _ = measurement_and_jacobian(truth_km, cfg.array)
    noise = np.swapaxes(np.stack([d.noise for d in draws]), 0, 1)
    ys = h + np.sqrt(n0 / 2.0) * noise

    std = cfg.init.std_vector(L)
    x_init = x0_true + std * np.stack([d.init_eps for d in draws])

    estimates = {}
    fwd = None
    if "lms" in cfg.algorithms or "bilms" in cfg.algorithms:
        fwd = lms_pass(x_init, ys, cfg.steps, cfg.array)
    for alg in cfg.algorithms:
        if alg == "none":
            estimates[alg] = np.broadcast_to(x_init, truth_km.shape)
        elif alg == "lms":
            estimates[alg] = fwd
        elif alg == "bilms":
            if cfg.terminal_init == "truth":
                x_end = truth_km[-1]
            elif cfg.terminal_init == "forward":
                x_end = fwd[-1]
            else:
                x_end = truth_km[-1] + std * np.stack([d.terminal_eps for d in draws])
            bwd = lms_pass(x_end, ys, cfg.steps, cfg.array, reverse=True)
            estimates[alg] = combine(fwd, bwd)
        elif alg == "ekf":
            P0 = np.diag(std ** 2) if cfg.init.kind == "imperfect" else cfg.perfect_init_var * np.eye(4 * L)
            estimates[alg] = ekf_pass(
                x_init, P0, ys,
                transition_matrix(L, cfg.dynamics.rho), process_noise(L, cfg.dynamics),
                measurement_noise(n0), cfg.array,
            )

    mse, stderr, diverged, trial_errors = {}, {}, {}, {}
    for alg, est in estimates.items():
        est = np.swapaxes(est, 0, 1)  # (trial, step, 4L)
        with np.errstate(over="ignore", invalid="ignore"):
            errs = squared_errors(est, truth)
        # Squared errors can overflow while the estimate itself is still finite.
        ok = np.isfinite(est).all(axis=(1, 2))
        for e in errs.values():
            ok &= np.isfinite(e).all(axis=1)
        diverged[alg] = int((~ok).sum())
        mse[alg], stderr[alg], trial_errors[alg] = {}, {}, {}
        for group, e in errs.items():
            e = np.where(ok[:, None], e, np.nan)
            trial_errors[alg][group] = e
            good = e[ok]
            if good.shape[0] == 0:
                mse[alg][group] = np.full(cfg.horizon, np.nan)
                stderr[alg][group] = np.full(cfg.horizon, np.nan)
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                mse[alg][group] = good.mean(axis=0)
                if good.shape[0] > 1:
                    stderr[alg][group] = good.std(axis=0, ddof=1) / np.sqrt(good.shape[0])
                else:
                    stderr[alg][group] = np.zeros(cfg.horizon)
    return MseTrace(cfg.horizon, mse, stderr, diverged, trial_errors)


SWEEP_PARAMETERS = ("snr_db", "array_size")


def with_parameter(cfg: ExperimentConfig, parameter: str, value) -> ExperimentConfig:
    if parameter == "snr_db":
        return replace(cfg, snr_db=float(value))
    if parameter == "array_size":
        return replace(cfg, array=replace(cfg.array, M=int(value), N=int(value)))
    raise ValueError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {parameter!r}")


def sweep(cfg: ExperimentConfig, parameter: str, values) -> list[MseTrace]:
    """One trace per value; every value reuses the same seed and so the same draws."""
    values = list(values)
    if not values:
        raise ValueError("sweep values must not be empty")
    configs = [with_parameter(cfg, parameter, v) for v in values]
    return [run_experiment(c) for c in configs]
