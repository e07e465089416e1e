"""Ground-truth channel simulation for a single-RF-chain mmWave link.

Angles are radians throughout this module. A uniform linear array with
element spacing ``spacing_ratio`` (d / lambda) is assumed on both ends.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

#: |1 - exp(-2j*pi*d*delta)| below this switches g to the direct geometric sum.
SINGULAR_TOL = 1e-9
#: Looser threshold for the derivative; its closed form divides by (1 - z)**2.
DERIVATIVE_SINGULAR_TOL = 1e-4


@dataclass(frozen=True)
class ArrayConfig:
    """Antenna counts and fixed analog beam pointing directions.

    Parameters
    ----------
    M : int
        Receive antenna count.
    N : int
        Transmit antenna count.
    spacing_ratio : float
        Element spacing over wavelength.
    theta_point, phi_point : float
        Combiner / precoder pointing angles in radians, within (0, pi).
    """

    M: int = 16
    N: int = 16
    spacing_ratio: float = 0.5
    theta_point: float = np.pi / 4
    phi_point: float = np.pi / 4

    def __post_init__(self):
        for name in ("M", "N"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not self.spacing_ratio > 0:
            raise ValueError(f"spacing_ratio must be positive, got {self.spacing_ratio!r}")
        for name in ("theta_point", "phi_point"):
            value = float(getattr(self, name))
            if not 0.0 < value < np.pi:
                raise ValueError(f"{name} must lie in (0, pi) radians, got {value!r}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class DynamicsParams:
    """AR(1) gain correlation and angle random-walk variances (rad^2)."""

    rho: float = 0.995
    var_theta: float = np.deg2rad(0.5) ** 2
    var_phi: float = np.deg2rad(0.5) ** 2

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho!r}")
        for name in ("var_theta", "var_phi"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)!r}")


@dataclass(frozen=True, eq=False)
class ChannelState:
    """True channel unknowns at time index ``k``: one entry per path."""

    alpha: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    k: int = 0

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=complex))
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if alpha.ndim != 1 or not (alpha.shape == theta.shape == phi.shape):
            raise ValueError("alpha, theta and phi must be 1-D with identical length")
        if alpha.size < 1:
            raise ValueError("a channel needs at least one path")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(theta)) and np.all(np.isfinite(phi))):
            raise ValueError("channel state entries must be finite")
        if self.k < 0:
            raise ValueError("time index k must be non-negative")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)

    @property
    def L(self) -> int:
        return self.alpha.size

    def to_vector(self) -> np.ndarray:
        """Stack as the real vector [Re(alpha), Im(alpha), theta, phi]."""
        return np.concatenate([self.alpha.real, self.alpha.imag, self.theta, self.phi])

    @classmethod
    def from_vector(cls, x, k: int = 0) -> "ChannelState":
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size % 4 or x.size == 0:
            raise ValueError(f"stacked vector length must be a positive multiple of 4, got {x.shape}")
        L = x.size // 4
        return cls(x[:L] + 1j * x[L:2 * L], x[2 * L:3 * L], x[3 * L:], k)

    def __eq__(self, other):
        if not isinstance(other, ChannelState):
            return NotImplemented
        return (
            self.k == other.k
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.theta, other.theta)
            and np.array_equal(self.phi, other.phi)
        )


@dataclass(frozen=True)
class Measurement:
    """Real/imaginary split of one de-rotated scalar observation."""

    y_re: float
    y_im: float

    def __post_init__(self):
        if not (np.isfinite(self.y_re) and np.isfinite(self.y_im)):
            raise ValueError("measurement components must be finite")

    def as_complex(self) -> complex:
        return complex(self.y_re, self.y_im)

    def as_array(self) -> np.ndarray:
        return np.array([self.y_re, self.y_im])


def array_response(count: int, angle: float, spacing_ratio: float = 0.5) -> np.ndarray:
    """Unit-norm ULA steering vector with element ``m`` at phase -2*pi*d*m*cos(angle)."""
    if int(count) != count or count < 1:
        raise ValueError(f"count must be a positive integer, got {count!r}")
    m = np.arange(int(count))
    return np.exp(-2j * np.pi * spacing_ratio * m * np.cos(angle)) / np.sqrt(count)


def _check_k(K):
    if int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K!r}")
    return int(K)


def _geometric_sum(K, delta, spacing_ratio):
    m = np.arange(K)
    phase = -2j * np.pi * spacing_ratio * np.multiply.outer(delta, m)
    return np.exp(phase).mean(axis=-1)


def _geometric_sum_derivative(K, delta, spacing_ratio):
    m = np.arange(K)
    phase = -2j * np.pi * spacing_ratio * np.multiply.outer(delta, m)
    return (-2j * np.pi * spacing_ratio * m * np.exp(phase)).mean(axis=-1)


def g_fn(K: int, delta, spacing_ratio: float = 0.5):
    """Normalized array factor ``(1/K) * sum_m exp(-2j*pi*d*m*delta)`` in closed form.

    ``delta`` is a direction-cosine difference and may be an array. Exactly
    zero maps to 1; grating-lobe points, where the closed form is 0/0, fall
    back to the explicit sum.
    """
    K = _check_k(K)
    delta = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(delta)):
        raise ValueError("delta must be finite")
    out = _g(K, delta, spacing_ratio)
    return out[()] if out.ndim == 0 else out


def _g(K, delta, spacing_ratio):
    z = np.exp(-2j * np.pi * spacing_ratio * delta)
    den = 1.0 - z
    singular = np.abs(den) < SINGULAR_TOL
    safe_den = np.where(singular, 1.0, den)
    out = (1.0 - z ** K) / (K * safe_den)
    if np.any(singular):
        out = np.where(singular, _geometric_sum(K, delta, spacing_ratio), out)
    return np.where(delta == 0.0, 1.0 + 0j, out)


def g_fn_derivative(K: int, delta, spacing_ratio: float = 0.5, ddelta_dangle=1.0):
    """Derivative of :func:`g_fn` with respect to an angle.

    ``ddelta_dangle`` is the chain-rule factor d(delta)/d(angle), e.g.
    ``-sin(theta)`` for the receive side. At ``delta == 0`` exactly the
    result is 0 by convention, although the true limit of dg/d(delta) there
    is ``-1j*pi*d*(K-1)``.
    """
    K = _check_k(K)
    delta = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(delta)):
        raise ValueError("delta must be finite")
    out = _dg(K, delta, spacing_ratio, ddelta_dangle)
    return out[()] if out.ndim == 0 else out


def _dg(K, delta, spacing_ratio, ddelta_dangle):
    a = 2 * np.pi * spacing_ratio
    z = np.exp(-1j * a * delta)
    den = 1.0 - z
    singular = np.abs(den) < DERIVATIVE_SINGULAR_TOL
    safe_den = np.where(singular, 1.0, den)
    bracket = K * z ** K - z - (K - 1) * z ** (K + 1)
    dg = 1j * a / K * bracket / safe_den ** 2
    if np.any(singular):
        dg = np.where(singular, _geometric_sum_derivative(K, delta, spacing_ratio), dg)
    return np.where(delta == 0.0, 0j, dg * ddelta_dangle)


def channel_matrix(state: ChannelState, config: ArrayConfig) -> np.ndarray:
    """M x N channel as a sum of rank-one path terms."""
    H = np.zeros((config.M, config.N), dtype=complex)
    for a, th, ph in zip(state.alpha, state.theta, state.phi):
        a_r = array_response(config.M, th, config.spacing_ratio)
        a_t = array_response(config.N, ph, config.spacing_ratio)
        H += a * np.outer(a_r, a_t.conj())
    return H


def beamformers(config: ArrayConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(f, w)``: precoder of length N and combiner of length M."""
    f = array_response(config.N, config.phi_point, config.spacing_ratio)
    w = array_response(config.M, config.theta_point, config.spacing_ratio)
    return f, w


def direction_offsets(theta, phi, config: ArrayConfig):
    """Receive and transmit direction-cosine offsets relative to the beams."""
    d_theta = np.cos(theta) - np.cos(config.theta_point)
    d_phi = np.cos(config.phi_point) - np.cos(phi)
    return d_theta, d_phi


def measure_clean(state: ChannelState, config: ArrayConfig) -> complex:
    """Noiseless beamformed observation ``w^H H f``, evaluated through g."""
    d_theta, d_phi = direction_offsets(state.theta, state.phi, config)
    gr = g_fn(config.M, d_theta, config.spacing_ratio)
    gt = g_fn(config.N, d_phi, config.spacing_ratio)
    return complex(np.sum(state.alpha * gr * gt))


def evolve(state: ChannelState, dyn: DynamicsParams, rng: np.random.Generator) -> ChannelState:
    """Advance the channel one step: AR(1) gains, Gaussian random-walk angles."""
    L = state.L
    s = np.sqrt((1.0 - dyn.rho ** 2) / 2.0)
    u_alpha = s * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
    theta = state.theta + np.sqrt(dyn.var_theta) * rng.standard_normal(L)
    phi = state.phi + np.sqrt(dyn.var_phi) * rng.standard_normal(L)
    return replace(state, alpha=dyn.rho * state.alpha + u_alpha, theta=theta, phi=phi, k=state.k + 1)


def noise_psd_from_snr(snr_db: float, config: ArrayConfig) -> float:
    """N0 such that M*N/N0 equals the requested SNR."""
    return config.M * config.N / 10.0 ** (snr_db / 10.0)


def observe(
    state: ChannelState,
    config: ArrayConfig,
    noise_psd: float,
    rng: np.random.Generator,
    pilot: complex = 1.0,
) -> Measurement:
    """Noisy combiner output, de-rotated by the conjugate pilot."""
    if noise_psd < 0:
        raise ValueError(f"noise_psd must be non-negative, got {noise_psd!r}")
    if not np.isclose(abs(pilot), 1.0):
        raise ValueError("pilot symbol must have unit magnitude")
    _, w = beamformers(config)
    v = np.sqrt(noise_psd / 2.0) * (rng.standard_normal(config.M) + 1j * rng.standard_normal(config.M))
    y = measure_clean(state, config) * pilot + np.vdot(w, v)
    y *= np.conj(pilot)
    return Measurement(float(y.real), float(y.imag))
