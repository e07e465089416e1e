"""LMS, bidirectional LMS and EKF trackers for the beamformed channel.

All trackers work on the stacked real estimate
``x = [Re(alpha), Im(alpha), theta, phi]`` of length ``4 * L``. The batched
kernels (``measurement_and_jacobian``, ``lms_update``, ``lms_pass``,
``ekf_update``) accept any number of leading batch axes so a whole set of
Monte-Carlo trials advances in one call; the tracker objects wrap them for
single-trajectory use.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import ArrayConfig, DynamicsParams, Measurement, _dg, _g, direction_offsets


class TrackerDiverged(FloatingPointError):
    """An estimate became non-finite."""

    def __init__(self, step: int):
        super().__init__(f"tracker diverged at step {step}")
        self.step = step


class NumericalFailure(np.linalg.LinAlgError):
    """Innovation covariance too ill-conditioned to invert."""


@dataclass(frozen=True)
class StepSizes:
    mu_alpha: float = 0.1
    mu_theta: float = 1e-4
    mu_phi: float = 1e-4

    def __post_init__(self):
        for name in ("mu_alpha", "mu_theta", "mu_phi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")

    def diagonal(self, L: int) -> np.ndarray:
        """Per-entry step sizes matching the stacked estimate layout."""
        return np.concatenate([
            np.full(2 * L, self.mu_alpha),
            np.full(L, self.mu_theta),
            np.full(L, self.mu_phi),
        ])


def _split(x):
    L = x.shape[-1] // 4
    alpha = x[..., :L] + 1j * x[..., L:2 * L]
    return alpha, x[..., 2 * L:3 * L], x[..., 3 * L:]


def check_estimate(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0 or x.size % 4:
        raise ValueError(f"estimate must be a 1-D vector of length 4L, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("estimate entries must be finite")
    return x


def measurement_and_jacobian(x, config: ArrayConfig) -> tuple[np.ndarray, np.ndarray]:
    """Predicted stacked measurement and its derivative at estimate ``x``.

    Returns ``h`` with shape ``(..., 2)`` holding ``[h_R, h_I]`` and ``J``
    with shape ``(..., 2, 4L)`` whose rows are the real and imaginary parts
    of dh/dx.
    """
    x = np.asarray(x, dtype=float)
    alpha, theta, phi = _split(x)
    d_theta, d_phi = direction_offsets(theta, phi, config)
    d = config.spacing_ratio
    gr = _g(config.M, d_theta, d)
    gt = _g(config.N, d_phi, d)
    dgr = _dg(config.M, d_theta, d, -np.sin(theta))
    dgt = _dg(config.N, d_phi, d, np.sin(phi))

    h = np.sum(alpha * gr * gt, axis=-1)
    gg = gr * gt
    dh = np.concatenate([gg, 1j * gg, alpha * dgr * gt, alpha * gr * dgt], axis=-1)
    J = np.stack([dh.real, dh.imag], axis=-2)
    return np.stack([h.real, h.imag], axis=-1), J


def lms_update(x, y, mu_diag, config: ArrayConfig) -> np.ndarray:
    """One LMS adaptation: ``x + 2 * mu * J^T e`` with ``e = y - h(x)``."""
    h, J = measurement_and_jacobian(x, config)
    e = np.asarray(y, dtype=float) - h
    return x + 2.0 * mu_diag * np.einsum("...ij,...i->...j", J, e)


def lms_pass(x0, ys, steps: StepSizes, config: ArrayConfig, reverse: bool = False) -> np.ndarray:
    """Run LMS over a measurement window.

    ``ys`` has shape ``(K, ..., 2)``. Forward, ``x0`` estimates the state at
    index 0 and each measurement moves the estimate one index later. With
    ``reverse=True``, ``x0`` estimates index ``K - 1`` and measurements are
    consumed from the end, moving the estimate one index earlier. The
    output has shape ``(K, ..., 4L)`` aligned with the measurement index.
    """
    x = np.array(x0, dtype=float)
    ys = np.asarray(ys, dtype=float)
    K = ys.shape[0]
    mu = steps.diagonal(x.shape[-1] // 4)
    out = np.empty((K,) + x.shape)
    order = range(K - 1, -1, -1) if reverse else range(K)
    with np.errstate(all="ignore"):
        for i, k in enumerate(order):
            out[k] = x
            if i < K - 1:
                x = lms_update(x, ys[k], mu, config)
    return out


@dataclass(frozen=True)
class LmsTracker:
    """Nonlinear LMS tracker holding the current estimate."""

    estimate: np.ndarray
    steps: StepSizes
    config: ArrayConfig
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "estimate", check_estimate(self.estimate))


def lms_step(tracker: LmsTracker, meas: Measurement) -> LmsTracker:
    mu = tracker.steps.diagonal(tracker.estimate.size // 4)
    with np.errstate(all="ignore"):
        x = lms_update(tracker.estimate, meas.as_array(), mu, tracker.config)
    if not np.all(np.isfinite(x)):
        raise TrackerDiverged(tracker.k + 1)
    return replace(tracker, estimate=x, k=tracker.k + 1)


def transition_matrix(L: int, rho: float) -> np.ndarray:
    return np.diag(np.concatenate([np.full(2 * L, rho), np.ones(2 * L)]))


def process_noise(L: int, dyn: DynamicsParams) -> np.ndarray:
    return np.diag(np.concatenate([
        np.full(2 * L, (1.0 - dyn.rho ** 2) / 2.0),
        np.full(L, dyn.var_theta),
        np.full(L, dyn.var_phi),
    ]))


def measurement_noise(noise_psd: float) -> np.ndarray:
    return np.eye(2) * noise_psd / 2.0


@dataclass(frozen=True)
class EkfTracker:
    """Extended Kalman filter over the AR(1) / random-walk state model."""

    estimate: np.ndarray
    covariance: np.ndarray
    transition: np.ndarray
    process_noise: np.ndarray
    meas_noise: np.ndarray
    config: ArrayConfig
    k: int = 0

    def __post_init__(self):
        x = check_estimate(self.estimate)
        n = x.size
        for name, shape in (("covariance", (n, n)), ("transition", (n, n)),
                            ("process_noise", (n, n)), ("meas_noise", (2, 2))):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {value.shape}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "estimate", x)

    @classmethod
    def from_model(cls, estimate, covariance, dyn: DynamicsParams, noise_psd: float,
                   config: ArrayConfig) -> "EkfTracker":
        L = np.size(estimate) // 4
        return cls(estimate, covariance, transition_matrix(L, dyn.rho), process_noise(L, dyn),
                   measurement_noise(noise_psd), config)


#: Innovation covariances with a larger condition number are rejected.
MAX_CONDITION = 1e12


def ekf_update(x, P, y, F, Q, R, config: ArrayConfig):
    """Predict then correct; works on batches of estimates and covariances.

    Returns ``(x, P, ok)`` where ``ok`` flags batch members whose innovation
    covariance was well conditioned. Members that fail keep NaN values.
    """
    x_pred = x @ F.T
    P_pred = F @ P @ F.T + Q
    h, J = measurement_and_jacobian(x_pred, config)
    Jt = np.swapaxes(J, -1, -2)
    S = J @ P_pred @ Jt + R
    ok = np.isfinite(S).all(axis=(-2, -1))
    safe_S = np.where(ok[..., None, None], S, np.eye(2))
    ok &= np.linalg.cond(safe_S) <= MAX_CONDITION
    safe_S = np.where(ok[..., None, None], safe_S, np.eye(2))
    gain = P_pred @ Jt @ np.linalg.inv(safe_S)
    innovation = np.asarray(y, dtype=float) - h
    x_new = x_pred + np.einsum("...ij,...j->...i", gain, innovation)
    eye = np.eye(x.shape[-1])
    P_new = (eye - gain @ J) @ P_pred
    P_new = 0.5 * (P_new + np.swapaxes(P_new, -1, -2))
    x_new = np.where(ok[..., None], x_new, np.nan)
    P_new = np.where(ok[..., None, None], P_new, np.nan)
    return x_new, P_new, ok


def ekf_step(tracker: EkfTracker, meas: Measurement) -> EkfTracker:
    with np.errstate(all="ignore"):
        x, P, ok = ekf_update(tracker.estimate, tracker.covariance, meas.as_array(),
                              tracker.transition, tracker.process_noise, tracker.meas_noise,
                              tracker.config)
    if not ok:
        raise NumericalFailure(f"innovation covariance singular at step {tracker.k + 1}")
    if not np.all(np.isfinite(x)):
        raise TrackerDiverged(tracker.k + 1)
    return replace(tracker, estimate=x, covariance=P, k=tracker.k + 1)


def ekf_pass(x0, P0, ys, F, Q, R, config: ArrayConfig) -> np.ndarray:
    """Filter a window; output index ``k`` is the estimate before seeing ``ys[k]``.

    The indexing matches :func:`lms_pass` so that the estimate at index 0
    is the initialization.
    """
    x = np.array(x0, dtype=float)
    P = np.broadcast_to(P0, x.shape + (x.shape[-1],)).copy()
    ys = np.asarray(ys, dtype=float)
    K = ys.shape[0]
    out = np.empty((K,) + x.shape)
    with np.errstate(all="ignore"):
        for k in range(K):
            out[k] = x
            if k < K - 1:
                x, P, _ = ekf_update(x, P, ys[k], F, Q, R, config)
    return out


def combine(forward, backward) -> np.ndarray:
    """Per-step average of forward and backward estimate sequences."""
    return 0.5 * (np.asarray(forward) + np.asarray(backward))


@dataclass
class BilmsBuffer:
    """One tracking window for bidirectional LMS.

    ``terminal_init`` is the re-acquired estimate at the window end; the
    pass estimates are filled in by :func:`bilms_run`.
    """

    measurements: list[Measurement]
    terminal_init: np.ndarray | None = None
    forward_estimates: list[np.ndarray] = field(default_factory=list)
    backward_estimates: list[np.ndarray] = field(default_factory=list)


def bilms_run(buffer: BilmsBuffer, steps: StepSizes, config: ArrayConfig, initial) -> list[np.ndarray]:
    """Forward LMS from ``initial``, backward LMS from the terminal init, averaged."""
    if buffer.terminal_init is None:
        raise ValueError("BiLMS needs a terminal initialization before the backward pass")
    if not buffer.measurements:
        raise ValueError("BiLMS window holds no measurements")
    x0 = check_estimate(initial)
    xK = check_estimate(buffer.terminal_init)
    if xK.shape != x0.shape:
        raise ValueError("initial and terminal estimates differ in length")
    ys = np.array([m.as_array() for m in buffer.measurements])
    fwd = lms_pass(x0, ys, steps, config)
    bwd = lms_pass(xK, ys, steps, config, reverse=True)
    for name, seq in (("forward", fwd), ("backward", bwd)):
        bad = ~np.isfinite(seq).all(axis=-1)
        if bad.any():
            step = int(np.argmax(bad)) if name == "forward" else int(len(bad) - 1 - np.argmax(bad[::-1]))
            raise TrackerDiverged(step)
    buffer.forward_estimates = list(fwd)
    buffer.backward_estimates = list(bwd)
    return list(combine(fwd, bwd))
