"""Diffusion-advection channel with a transparent Poisson-counting receiver.

A burst of ``zeta`` molecules is released at the origin at ``t_r``; the
medium drifts with a location-invariant velocity ``v(t)``. The receiver is a
sphere of radius ``r_R`` centred at ``r0 * d`` that counts the molecules it
contains. Counts are Poisson with mean ``zeta * V_R * h(r0 d, t)``, where
``h`` is the drifting Gaussian Green's function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import stats

from .errors import ConfigError, NonPositiveObservationTime

ArrayLike = Union[float, Sequence[float], np.ndarray]

# Default physical parameters of the reference configuration.
REFERENCE_D = 1e-8
REFERENCE_ZETA = 1e4
REFERENCE_R0 = 1e-4
REFERENCE_RR = 1.5e-5
REFERENCE_TR = 0.0


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the channel and receiver (SI units)."""

    diffusion_coeff: float = REFERENCE_D
    burst_size: float = REFERENCE_ZETA
    tx_rx_distance: float = REFERENCE_R0
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    receiver_radius: float = REFERENCE_RR
    release_time: float = REFERENCE_TR

    def __post_init__(self) -> None:
        if not self.diffusion_coeff > 0:
            raise ConfigError("diffusion_coeff must be positive")
        if not self.burst_size > 0:
            raise ConfigError("burst_size must be positive")
        if not self.tx_rx_distance > 0:
            raise ConfigError("tx_rx_distance must be positive")
        if not 0 < self.receiver_radius < self.tx_rx_distance:
            raise ConfigError("receiver_radius must lie in (0, tx_rx_distance)")
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ConfigError("direction must be a unit 3-vector")
        object.__setattr__(self, "direction", tuple(float(c) for c in d))

    @property
    def receiver_volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.receiver_radius**3

    @property
    def d(self) -> np.ndarray:
        return np.asarray(self.direction)

    @property
    def r0_vec(self) -> np.ndarray:
        return self.tx_rx_distance * self.d

    @property
    def gain(self) -> float:
        """zeta * V_R, the factor turning concentration into expected counts."""
        return self.burst_size * self.receiver_volume


@dataclass(frozen=True)
class ConstantFlow:
    """Time-invariant velocity vector (m/s)."""

    velocity: tuple[float, float, float]

    def __post_init__(self) -> None:
        v = np.asarray(self.velocity, dtype=float)
        if v.shape != (3,):
            raise ConfigError("velocity must be a 3-vector")
        object.__setattr__(self, "velocity", tuple(float(c) for c in v))

    @classmethod
    def along(cls, params: SystemParams, speed: float) -> "ConstantFlow":
        return cls(tuple(speed * params.d))

    def velocity_at(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self.velocity), t.shape + (3,)).copy()

    def displacement(self, t: ArrayLike, t_r: float) -> np.ndarray:
        """m(t) = integral of v from t_r to t; shape ``t.shape + (3,)``."""
        t = np.asarray(t, dtype=float)
        return (t - t_r)[..., None] * np.asarray(self.velocity)


@dataclass(frozen=True)
class PiecewiseConstantFlow:
    """Velocity ``velocities[k]`` on ``[breakpoints[k-1], breakpoints[k])``.

    ``breakpoints`` holds the K-1 switching instants (strictly increasing) for
    K segment velocities; the first velocity applies before the first switch
    and the last one after the final switch.
    """

    breakpoints: tuple[float, ...]
    velocities: tuple[tuple[float, float, float], ...]

    def __post_init__(self) -> None:
        b = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        v = np.asarray(self.velocities, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] != b.size + 1:
            raise ConfigError("need len(breakpoints) + 1 velocity 3-vectors")
        if b.size and np.any(np.diff(b) <= 0):
            raise ConfigError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", tuple(float(x) for x in b))
        object.__setattr__(self, "velocities", tuple(tuple(float(c) for c in row) for row in v))

    def velocity_at(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(np.asarray(self.breakpoints), t, side="right")
        return np.asarray(self.velocities)[idx]

    def displacement(self, t: ArrayLike, t_r: float) -> np.ndarray:
        """Exact segment-by-segment integral of v from ``t_r`` to ``t``."""
        t = np.asarray(t, dtype=float)
        vel = np.asarray(self.velocities)
        edges = np.concatenate([[-np.inf], self.breakpoints, [np.inf]])
        out = np.zeros(t.shape + (3,))
        for k in range(vel.shape[0]):
            lo = max(edges[k], t_r)
            dur = np.clip(np.minimum(t, edges[k + 1]) - lo, 0.0, None)
            out += dur[..., None] * vel[k]
        return out


FlowProfile = Union[ConstantFlow, PiecewiseConstantFlow]


def _check_times(params: SystemParams, t: np.ndarray) -> None:
    if np.any(t <= params.release_time):
        raise NonPositiveObservationTime(
            f"sampling times must exceed the release time {params.release_time}"
        )


def impulse_response_no_flow(params: SystemParams, r: ArrayLike, t: ArrayLike) -> np.ndarray:
    """Free-space 3-D diffusion Green's function; zero for ``t <= t_r``.

    ``r`` has trailing dimension 3 and broadcasts against ``t``.
    """
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    tau = t - params.release_time
    dist2 = np.sum(r * r, axis=-1)
    D = params.diffusion_coeff
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.exp(-dist2 / (4 * D * tau)) / (4 * math.pi * D * tau) ** 1.5
    return np.where(tau > 0, val, 0.0)


def impulse_response(
    params: SystemParams, flow: FlowProfile, r: ArrayLike, t: ArrayLike
) -> np.ndarray:
    """Green's function with drift: the no-flow response at ``r - m(t)``."""
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    shifted = r - flow.displacement(t, params.release_time)
    return impulse_response_no_flow(params, shifted, t)


def mean_count(params: SystemParams, flow: FlowProfile, t: ArrayLike) -> np.ndarray:
    """Expected receiver count at time(s) ``t`` (centre-concentration approximation)."""
    t = np.asarray(t, dtype=float)
    _check_times(params, t)
    return params.gain * impulse_response(params, flow, params.r0_vec, t)


def _offset(params: SystemParams, flow: FlowProfile, t: np.ndarray) -> np.ndarray:
    return params.r0_vec - flow.displacement(t, params.release_time)


def mean_count_time_derivative(
    params: SystemParams, flow: FlowProfile, t: ArrayLike
) -> np.ndarray:
    """Analytic d(mean count)/dt for a location-invariant flow."""
    t = np.asarray(t, dtype=float)
    _check_times(params, t)
    lam = mean_count(params, flow, t)
    tau = t - params.release_time
    D = params.diffusion_coeff
    off = _offset(params, flow, t)
    vel = flow.velocity_at(t)
    bracket = (
        -1.5 / tau
        + np.sum(vel * off, axis=-1) / (2 * D * tau)
        + np.sum(off * off, axis=-1) / (4 * D * tau**2)
    )
    return lam * bracket


def directional_mean_count(params: SystemParams, speed: ArrayLike, t: ArrayLike) -> np.ndarray:
    """Mean count for a constant flow ``speed * d``; broadcasts speed against t."""
    speed = np.asarray(speed, dtype=float)
    t = np.asarray(t, dtype=float)
    _check_times(params, t)
    tau = t - params.release_time
    D = params.diffusion_coeff
    off = params.tx_rx_distance - speed * tau
    return params.gain * np.exp(-off * off / (4 * D * tau)) / (4 * math.pi * D * tau) ** 1.5


def vector_mean_count(params: SystemParams, velocity: ArrayLike, t: ArrayLike) -> np.ndarray:
    """Mean count for constant velocity vectors (trailing dim 3) at times ``t``."""
    velocity = np.asarray(velocity, dtype=float)
    t = np.asarray(t, dtype=float)
    _check_times(params, t)
    tau = t - params.release_time
    D = params.diffusion_coeff
    off = params.r0_vec - velocity * tau[..., None]
    dist2 = np.sum(off * off, axis=-1)
    return params.gain * np.exp(-dist2 / (4 * D * tau)) / (4 * math.pi * D * tau) ** 1.5


@dataclass(frozen=True)
class SamplingSchedule:
    """Receiver sampling instants, kept sorted; repeated instants are allowed."""

    times: tuple[float, ...]

    def __init__(self, times: ArrayLike):
        arr = np.sort(np.atleast_1d(np.asarray(times, dtype=float)))
        if arr.size < 1:
            raise ConfigError("a schedule needs at least one sampling time")
        object.__setattr__(self, "times", tuple(float(x) for x in arr))

    def __len__(self) -> int:
        return len(self.times)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.times)

    def validate(self, params: SystemParams) -> None:
        _check_times(params, self.array)


def sample_observations(
    params: SystemParams,
    flow: FlowProfile,
    schedule: SamplingSchedule,
    rng_seed: int,
) -> np.ndarray:
    """One independent Poisson count per sampling instant."""
    lam = mean_count(params, flow, schedule.array)
    rng = np.random.default_rng(rng_seed)
    return rng.poisson(lam).astype(np.int64)


@dataclass(frozen=True)
class OracleEstimate:
    mean: float
    stderr: float
    n_particles: int = field(repr=False)


_PARTICLE_CHUNK = 250_000


def particle_oracle_mean_count(
    params: SystemParams,
    flow: FlowProfile,
    t: float,
    n_particles: int,
    dt: float = 1e-4,
    rng_seed: int = 0,
) -> OracleEstimate:
    """Brownian-tracer estimate of the expected receiver count at time ``t``.

    Tracers start at the origin at ``t_r`` and take Euler-Maruyama steps
    ``x += v(tau) dt + sqrt(2 D dt) * N(0, I3)``; the last step is shortened to
    land exactly on ``t``. The returned mean is ``zeta`` times the fraction of
    tracers inside the receiver sphere, with its binomial standard error.
    Chunks use independent child seeds, so the result does not depend on how
    the work is split.
    """
    if n_particles < 1:
        raise ConfigError("n_particles must be >= 1")
    if dt <= 0:
        raise ConfigError("dt must be positive")
    t_r = params.release_time
    if t <= t_r:
        raise NonPositiveObservationTime("oracle time must exceed release time")
    n_steps = max(1, int(math.ceil((t - t_r) / dt - 1e-9)))
    step_starts = t_r + dt * np.arange(n_steps)
    step_lens = np.minimum(dt, t - step_starts)
    drift = flow.velocity_at(step_starts) * step_lens[:, None]
    sigmas = np.sqrt(2 * params.diffusion_coeff * step_lens)
    centre = params.r0_vec
    rr2 = params.receiver_radius**2

    n_chunks = -(-n_particles // _PARTICLE_CHUNK)
    children = np.random.SeedSequence(rng_seed).spawn(n_chunks)
    inside = 0
    for c, seq in enumerate(children):
        size = min(_PARTICLE_CHUNK, n_particles - c * _PARTICLE_CHUNK)
        rng = np.random.default_rng(seq)
        pos = np.zeros((size, 3))
        for k in range(n_steps):
            pos += drift[k] + sigmas[k] * rng.standard_normal((size, 3))
        inside += int(np.count_nonzero(np.sum((pos - centre) ** 2, axis=1) <= rr2))
    p = inside / n_particles
    se = math.sqrt(max(p * (1 - p), 0.0) / n_particles)
    return OracleEstimate(params.burst_size * p, params.burst_size * se, n_particles)


def sphere_mean_count(params: SystemParams, flow: FlowProfile, t: ArrayLike) -> np.ndarray:
    """Expected number of molecules inside the receiver sphere, without the
    uniform-concentration approximation.

    The displacement is Gaussian with per-axis variance ``2 D tau``, so the
    fraction inside the sphere is a noncentral chi-square CDF with three
    degrees of freedom. This is what the particle oracle estimates.
    """
    t = np.asarray(t, dtype=float)
    _check_times(params, t)
    var = 2 * params.diffusion_coeff * (t - params.release_time)
    off = _offset(params, flow, t)
    nc = np.sum(off * off, axis=-1) / var
    return params.burst_size * stats.ncx2.cdf(params.receiver_radius**2 / var, 3, nc)
