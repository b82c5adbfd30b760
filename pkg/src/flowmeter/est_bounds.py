"""Estimation error: Monte Carlo MSE, Cramer-Rao type bounds, schedule design.

Monte Carlo runs use common random numbers: the prior draw and the Poisson
counts come from uniforms that depend only on the seed and the trial count,
with counts produced by inverse-CDF sampling. Two schedules evaluated with
the same seed therefore see the same velocities and the same noise
quantiles, which keeps small MSE differences between nearby sampling times
resolvable.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as sp_integrate
from scipy import stats

from . import estimator as est
from . import numerics
from .channel import SamplingSchedule, SystemParams, directional_mean_count, vector_mean_count
from .errors import ConfigError, SingularityInRange
from .estimator import GroupedSchedule, PerAxisUniform, UniformAlongD, VelocityPrior


class Estimator(enum.Enum):
    MAP = "map"
    MMSE = "mmse"
    LMMSE = "lmmse"

    @classmethod
    def parse(cls, name: "str | Estimator") -> "Estimator":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ConfigError(f"unknown estimator {name!r}") from None


@dataclass(frozen=True)
class MseEstimate:
    mse: float
    stderr: float
    nmse: float
    nmse_stderr: float
    n_trials: int


def _estimate_rows(
    params: SystemParams,
    prior: UniformAlongD,
    g: GroupedSchedule,
    Y: np.ndarray,
    which: Estimator,
) -> tuple[np.ndarray, np.ndarray]:
    """Estimates for unique grouped rows under both tie resolutions.

    Returns ``(upper, lower)``; they differ only for MAP on a single distinct
    instant where the mirror speed is also admissible.
    """
    if which is Estimator.MMSE:
        e = est.batch_mmse(params, prior, g, Y)
        return e, e
    if which is Estimator.LMMSE:
        e = est.batch_lmmse(est.lmmse_moments(params, prior, g), g, Y)
        return e, e
    hi = est.batch_map_numeric(params, prior, g, Y, np.zeros(len(Y)))
    if g.K > 1:
        return hi, hi
    lo = est.batch_map_numeric(params, prior, g, Y, np.ones(len(Y)))
    return hi, lo


def _draw_counts(
    params: SystemParams,
    prior: UniformAlongD,
    g: GroupedSchedule,
    n_trials: int,
    rng_seed: int,
    per_group: bool,
):
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
    v = prior.from_uniform(rng.random(n_trials))
    tie = rng.random(n_trials)
    lam = directional_mean_count(params, v[:, None], g.tau[None, :] + params.release_time)
    if per_group:
        u = rng.random((n_trials, g.K))
        Y = numerics.poisson_quantile(u, g.counts * lam)
    else:
        L = len(g.index)
        u = rng.random((n_trials, L))
        Y = np.zeros((n_trials, g.K))
        y = numerics.poisson_quantile(u, lam[:, g.index])
        for k in range(g.K):
            Y[:, k] = y[:, g.index == k].sum(axis=1)
    return v, tie, np.maximum(Y, 0.0)


def mse_montecarlo(
    params: SystemParams,
    prior: VelocityPrior,
    schedule: SamplingSchedule,
    estimator: Estimator | str,
    n_trials: int,
    rng_seed: int = 0,
    per_group: bool = False,
) -> MseEstimate:
    """Mean squared velocity error of an estimator, with its standard error.

    ``per_group`` draws one Poisson sum per distinct instant instead of one
    count per sample; it is equivalent in distribution and much cheaper for
    long schedules with few distinct instants.
    """
    which = Estimator.parse(estimator)
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    if isinstance(prior, PerAxisUniform):
        return _mse_vector(params, prior, schedule, which, n_trials, rng_seed)
    g = GroupedSchedule.build(params, schedule)
    v, tie, Y = _draw_counts(params, prior, g, n_trials, rng_seed, per_group)
    if g.K == 1:
        flat, inv = np.unique(Y[:, 0], return_inverse=True)
        rows = flat[:, None]
    else:
        rows, inv = np.unique(Y, axis=0, return_inverse=True)
    inv = inv.ravel()
    hi, lo = _estimate_rows(params, prior, g, rows, which)
    vhat = np.where(tie < 0.5, hi[inv], lo[inv])
    err = (v - vhat) ** 2
    return _summarize(err, prior.mean**2)


def _summarize(err: np.ndarray, norm: float) -> MseEstimate:
    n = len(err)
    mse = float(np.mean(err))
    se = float(np.std(err, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if norm > 0:
        return MseEstimate(mse, se, mse / norm, se / norm, n)
    return MseEstimate(mse, se, math.nan, math.nan, n)


def _mse_vector(params, prior: PerAxisUniform, schedule, which, n_trials, rng_seed) -> MseEstimate:
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
    t = schedule.array
    fn = {Estimator.MAP: est.map_estimate, Estimator.MMSE: est.mmse_estimate,
          Estimator.LMMSE: est.lmmse_estimate}[which]
    err = np.empty(n_trials)
    for k in range(n_trials):
        v = prior.from_uniform(rng.random(3))
        lam = vector_mean_count(params, np.broadcast_to(v, (len(t), 3)), t)
        y = numerics.poisson_quantile(rng.random(len(t)), lam)
        err[k] = float(np.sum((v - fn(params, prior, schedule, y)) ** 2))
    return _summarize(err, float(np.sum(prior.mean**2)))


def mse_exact_single_sample(
    params: SystemParams,
    prior: UniformAlongD,
    t: float,
    estimator: Estimator | str,
    n_nodes: int = 512,
) -> float:
    """Deterministic MSE for one sample: sum over counts, quadrature over speed.

    Serves as the noise-free reference for the Monte Carlo estimates. MAP
    ties between mirror speeds are averaged, matching a fair coin.
    """
    which = Estimator.parse(estimator)
    if prior.degenerate:
        return 0.0
    g = GroupedSchedule.build(params, SamplingSchedule([t]))
    v, w = numerics.gauss_legendre(prior.v_min, prior.v_max, n_nodes)
    w = w / prior.v_minus
    lam = directional_mean_count(params, v, t)
    top = int(stats.poisson.isf(1e-15, lam.max())) + 1
    y = np.arange(top + 1, dtype=float)
    pmf = stats.poisson.pmf(y[:, None], lam[None, :])
    hi, lo = _estimate_rows(params, prior, g, y[:, None], which)
    e_hi = (v[None, :] - hi[:, None]) ** 2
    e_lo = (v[None, :] - lo[:, None]) ** 2
    return float(np.sum(pmf * w[None, :] * 0.5 * (e_hi + e_lo)))


# ---------------------------------------------------------------------------
# Fisher information and Cramer-Rao type bounds


def fisher_information(params: SystemParams, speed, schedule: SamplingSchedule) -> np.ndarray:
    """Fisher information about a speed along ``d``; broadcasts over ``speed``."""
    t = schedule.array if isinstance(schedule, SamplingSchedule) else np.asarray(schedule, float)
    tau = t - params.release_time
    D = params.diffusion_coeff
    v = np.asarray(speed, dtype=float)
    lam = directional_mean_count(params, v[..., None], t)
    off = params.tx_rx_distance - v[..., None] * tau
    return np.sum(off * off * lam, axis=-1) / (4 * D * D)


def fisher_matrix(params: SystemParams, velocity, schedule: SamplingSchedule) -> np.ndarray:
    """3x3 Fisher information about a velocity vector."""
    t = schedule.array if isinstance(schedule, SamplingSchedule) else np.asarray(schedule, float)
    tau = t - params.release_time
    v = np.asarray(velocity, dtype=float)
    lam = vector_mean_count(params, np.broadcast_to(v, (len(t), 3)), t)
    u = (params.r0_vec - v[None, :] * tau[:, None]) / (2 * params.diffusion_coeff)
    return np.einsum("l,li,lj->ij", lam, u, u)


@dataclass(frozen=True)
class BcrBound:
    """Bayesian Cramer-Rao value; ``valid`` is False when the prior has bounded support."""

    value: float
    valid: bool
    data_information: np.ndarray
    prior_information: np.ndarray


def bcr_bound(params: SystemParams, prior: VelocityPrior, schedule: SamplingSchedule) -> BcrBound:
    """``Tr (J_D + J_P)^{-1}`` with ``J_D`` the prior-averaged Fisher information.

    For the uniform priors used here ``J_P`` is zero inside the support and
    the regularity conditions fail at its edges, so the value is returned but
    flagged invalid.
    """
    if isinstance(prior, UniformAlongD):
        if prior.degenerate:
            jd = float(fisher_information(params, prior.v_min, schedule))
        else:
            f = lambda v: fisher_information(params, v, schedule)
            val, _ = numerics.integrate(f, prior.v_min, prior.v_max, rtol=1e-12)
            jd = val / prior.v_minus
        jd_m = np.array([[jd]])
    else:
        X, W = est._tensor_nodes(prior, 24)
        jd_m = np.zeros((3, 3))
        for x, w in zip(X, W):
            jd_m += w * fisher_matrix(params, x, schedule)
        # degenerate axes carry no uncertainty and are dropped from the trace
        keep = prior.hi > prior.lo
        jd_m = jd_m[np.ix_(keep, keep)]
    jp = np.zeros_like(jd_m)
    value = float(np.trace(np.linalg.inv(jd_m + jp)))
    return BcrBound(value, False, jd_m, jp)


@dataclass(frozen=True)
class BiasFunction:
    v: np.ndarray
    b: np.ndarray
    db: np.ndarray


@dataclass(frozen=True)
class EcrBound:
    value: float
    bias: BiasFunction = field(repr=False)
    residual: float = 0.0


def ecr_bound(
    params: SystemParams, prior: UniformAlongD, t1: float, n_grid: int = 2001
) -> EcrBound:
    """Expected Cramer-Rao bound for one sample with the optimal bias.

    The bias solves a linear two-point problem with ``b' = -1`` at both
    support ends; the bound is the prior average of ``(1+b')^2/J + b^2``.
    Raises SingularityInRange when the information vanishes inside the
    support (at the peak speed ``r0/tau``).
    """
    if not isinstance(prior, UniformAlongD) or prior.degenerate:
        raise ConfigError("the ECR bound needs a non-degenerate directional prior")
    tau = t1 - params.release_time
    SamplingSchedule([t1]).validate(params)
    r0, D = params.tx_rx_distance, params.diffusion_coeff
    v_sing = r0 / tau
    if prior.v_min <= v_sing <= prior.v_max:
        raise SingularityInRange(f"information vanishes at v={v_sing:.6g} inside the support")

    def J(v):
        return fisher_information(params, v, np.array([t1]))

    def c(v):
        off = r0 - v * tau
        return off / (2 * D) - 2 * tau / off

    sol = numerics.solve_bvp(
        lambda x, y, p: J(x) * y + (1 + p) * c(x),
        lambda x, y, p: J(x),
        lambda x, y, p: c(x),
        prior.v_min,
        prior.v_max,
        -1.0,
        -1.0,
        n=n_grid,
    )
    integrand = (1 + sol.dy) ** 2 / J(sol.x) + sol.y**2
    value = float(sp_integrate.simpson(integrand, x=sol.x)) / prior.v_minus
    return EcrBound(value, BiasFunction(sol.x, sol.y, sol.dy), sol.residual)


# ---------------------------------------------------------------------------
# sampling-time design


@dataclass(frozen=True)
class EstimationSearchSpec:
    t_lo: float = 0.02
    t_hi: float = 0.2
    grid_points: int = 181
    tol: float = 1e-5
    coarse_points: int = 24

    def __post_init__(self) -> None:
        if not (self.t_hi > self.t_lo) or self.grid_points < 3 or self.tol <= 0:
            raise ConfigError("invalid estimation search window")


@dataclass(frozen=True)
class EstimationScheduleResult:
    schedule: SamplingSchedule
    mse: MseEstimate
    grid: np.ndarray = field(repr=False)
    grid_mse: np.ndarray = field(repr=False)


def optimize_estimation_schedule(
    params: SystemParams,
    prior: UniformAlongD,
    L: int,
    estimator: Estimator | str,
    n_trials: int = 200_000,
    spec: EstimationSearchSpec | None = None,
    rng_seed: int = 0,
) -> EstimationScheduleResult:
    """Schedule minimising the Monte Carlo MSE under common random numbers."""
    spec = spec or EstimationSearchSpec()
    if L < 1:
        raise ConfigError("L must be >= 1")
    if spec.t_lo <= params.release_time:
        raise ConfigError("search window must start after the release time")
    which = Estimator.parse(estimator)

    def f_batch(x: np.ndarray) -> np.ndarray:
        return np.array(
            [mse_montecarlo(params, prior, SamplingSchedule(row), which, n_trials, rng_seed).mse for row in x]
        )

    points = spec.grid_points if L == 1 else spec.coarse_points
    grid = numerics.sorted_tuple_grid(spec.t_lo, spec.t_hi, L, points)
    vals = f_batch(grid)
    res = numerics.minimize_sorted_tuples(
        f_batch, spec.t_lo, spec.t_hi, L, points, spec.tol, seeds=grid[np.argsort(vals, kind="stable")[:1]]
    )
    sched = SamplingSchedule(res.x)
    return EstimationScheduleResult(
        sched, mse_montecarlo(params, prior, sched, which, n_trials, rng_seed), grid, vals
    )


@dataclass(frozen=True)
class TwoTimeSchedule:
    times: np.ndarray
    weights: np.ndarray
    mse: MseEstimate
    l_proxy: int

    @property
    def K(self) -> int:
        return len(self.times)


def _two_time_mse(params, prior, t1, t2, n1, L, which, n_trials, seed) -> MseEstimate:
    times = np.r_[np.full(n1, t1), np.full(L - n1, t2)]
    return mse_montecarlo(params, prior, SamplingSchedule(times), which, n_trials, seed, per_group=True)


def asymptotic_two_time_schedule(
    params: SystemParams,
    prior: UniformAlongD,
    spec: EstimationSearchSpec | None = None,
    l_proxy: int = 64,
    n_trials: int = 20_000,
    estimator: Estimator | str = Estimator.MMSE,
    time_points: int = 10,
    weight_steps: int = 8,
    rng_seed: int = 0,
) -> TwoTimeSchedule:
    """Two instants and a split of ``l_proxy`` samples minimising the MSE.

    Searches pairs ``t1 < t2`` from a coarse grid and sample fractions in
    steps of ``1/weight_steps``, plus all single-instant schedules; a second
    weight below 0.01 is reported as a single instant.
    """
    spec = spec or EstimationSearchSpec()
    which = Estimator.parse(estimator)
    ts = np.linspace(spec.t_lo, spec.t_hi, time_points)
    best = None
    for i, t1 in enumerate(ts):
        m = _two_time_mse(params, prior, t1, t1, l_proxy, l_proxy, which, n_trials, rng_seed)
        if best is None or m.mse < best[0].mse:
            best = (m, t1, t1, l_proxy)
        for t2 in ts[i + 1 :]:
            for k in range(1, weight_steps):
                n1 = int(round(k / weight_steps * l_proxy))
                m = _two_time_mse(params, prior, t1, t2, n1, l_proxy, which, n_trials, rng_seed)
                if m.mse < best[0].mse:
                    best = (m, t1, t2, n1)
    m, t1, t2, n1 = best
    w1 = n1 / l_proxy
    if t1 == t2 or 1 - w1 < 0.01:
        return TwoTimeSchedule(np.array([t1]), np.array([1.0]), m, l_proxy)
    if w1 < 0.01:
        return TwoTimeSchedule(np.array([t2]), np.array([1.0]), m, l_proxy)
    return TwoTimeSchedule(np.array([t1, t2]), np.array([w1, 1 - w1]), m, l_proxy)
