"""Bayesian estimation of a random constant flow velocity from counts.

Two prior families are supported: a uniform speed along the
transmitter-receiver axis (:class:`UniformAlongD`, the main case, where the
estimate is a scalar speed) and independent uniform components
(:class:`PerAxisUniform`, estimate is a 3-vector).

For the directional prior the log-likelihood depends on the counts only
through the count sum at each distinct sampling instant, so internally the
schedule is collapsed to ``(tau_k, n_k)`` groups and the observations to
per-group sums. The batch routines prefixed ``batch_`` take those grouped
sums directly and are what the Monte Carlo layer calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import optimize

from . import numerics
from .channel import SamplingSchedule, SystemParams, vector_mean_count
from .errors import ConfigError, DegeneratePosterior, ZeroVariance


@dataclass(frozen=True)
class UniformAlongD:
    """Speed ``v ~ U[v_min, v_max]`` along the axis ``d``; ``v_min == v_max`` is a point mass."""

    v_min: float
    v_max: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.v_min) and np.isfinite(self.v_max)) or self.v_max < self.v_min:
            raise ConfigError("need finite v_min <= v_max")

    @property
    def v_plus(self) -> float:
        return self.v_min + self.v_max

    @property
    def v_minus(self) -> float:
        return self.v_max - self.v_min

    @property
    def degenerate(self) -> bool:
        return self.v_minus == 0.0

    @property
    def mean(self) -> float:
        return 0.5 * self.v_plus

    @property
    def variance(self) -> float:
        return self.v_minus**2 / 12.0

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        return self.v_min + self.v_minus * np.asarray(u)

    def contains(self, v) -> np.ndarray:
        v = np.asarray(v)
        return (v >= self.v_min) & (v <= self.v_max)


@dataclass(frozen=True)
class PerAxisUniform:
    """Independent uniform velocity components ``v_i ~ U[low_i, high_i]``."""

    lows: tuple[float, float, float]
    highs: tuple[float, float, float]

    def __post_init__(self) -> None:
        lo = np.asarray(self.lows, dtype=float)
        hi = np.asarray(self.highs, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi < lo):
            raise ConfigError("per-axis prior needs three ranges with low <= high")
        object.__setattr__(self, "lows", tuple(float(x) for x in lo))
        object.__setattr__(self, "highs", tuple(float(x) for x in hi))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lows)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.highs)

    @property
    def mean(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * np.asarray(u)


VelocityPrior = Union[UniformAlongD, PerAxisUniform]


# ---------------------------------------------------------------------------
# grouped directional likelihood


@dataclass(frozen=True)
class GroupedSchedule:
    """Distinct elapsed times ``tau`` with multiplicities ``counts``."""

    tau: np.ndarray
    counts: np.ndarray
    index: np.ndarray  # group of each original sample

    @classmethod
    def build(cls, params: SystemParams, schedule: SamplingSchedule | np.ndarray) -> "GroupedSchedule":
        t = schedule.array if isinstance(schedule, SamplingSchedule) else np.sort(np.asarray(schedule, float))
        SamplingSchedule(t).validate(params)
        uniq, index, counts = np.unique(t, return_inverse=True, return_counts=True)
        return cls(uniq - params.release_time, counts.astype(float), index)

    @property
    def K(self) -> int:
        return len(self.tau)

    def group(self, obs) -> np.ndarray:
        """Per-group count sums; ``obs`` has trailing axis of length L."""
        obs = np.asarray(obs, dtype=float)
        if obs.shape[-1] != len(self.index):
            raise ConfigError("observation length does not match the schedule")
        out = np.zeros(obs.shape[:-1] + (self.K,))
        for k in range(self.K):
            out[..., k] = obs[..., self.index == k].sum(axis=-1)
        return out


def _log_lam(params: SystemParams, g: GroupedSchedule, v: np.ndarray) -> np.ndarray:
    """``ln lambda_k(v)`` with trailing group axis; never ``-inf``."""
    D = params.diffusion_coeff
    tau = g.tau
    off = params.tx_rx_distance - np.asarray(v)[..., None] * tau
    return (
        math.log(params.gain)
        - 1.5 * np.log(4 * math.pi * D * tau)
        - off * off / (4 * D * tau)
    )


def _loglik_grid(params, g: GroupedSchedule, Y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Log-likelihood (up to a constant) for each row of Y at each speed in v."""
    ll = _log_lam(params, g, v)  # (G, K)
    return Y @ ll.T - np.exp(ll) @ g.counts


def _score(params, g: GroupedSchedule, Y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d/dv of the log-likelihood; Y is (N, K), v is (N,)."""
    ll = _log_lam(params, g, v)
    off = params.tx_rx_distance - v[:, None] * g.tau
    return np.sum(off / (2 * params.diffusion_coeff) * (Y - g.counts * np.exp(ll)), axis=1)


def _loglik_at(params, g: GroupedSchedule, Y: np.ndarray, v: np.ndarray) -> np.ndarray:
    ll = _log_lam(params, g, v)
    return np.sum(Y * ll - g.counts * np.exp(ll), axis=-1)


@dataclass(frozen=True)
class PosteriorKernel:
    """Unnormalised log-posterior of the velocity for one observation."""

    params: SystemParams
    prior: VelocityPrior
    schedule: SamplingSchedule
    obs: np.ndarray

    def log_posterior(self, v) -> np.ndarray:
        """``sum_l y_l ln lambda_l(v) - lambda_l(v) + ln p(v)``; ``-inf`` off the support."""
        p, pr = self.params, self.prior
        t = self.schedule.array
        y = np.asarray(self.obs, dtype=float)
        if isinstance(pr, UniformAlongD):
            v = np.asarray(v, dtype=float)
            g = GroupedSchedule.build(p, self.schedule)
            val = _loglik_at(p, g, g.group(y), v)
            log_prior = -math.log(pr.v_minus) if pr.v_minus > 0 else 0.0
            return np.where(pr.contains(v), val + log_prior, -np.inf)
        v = np.asarray(v, dtype=float)
        val = _loglik_vec(p, t, y, v)
        inside = np.all((v >= pr.lo) & (v <= pr.hi), axis=-1)
        width = np.where(pr.hi > pr.lo, pr.hi - pr.lo, 1.0)
        return np.where(inside, val - np.sum(np.log(width)), -np.inf)


# ---------------------------------------------------------------------------
# MAP


def _tie_uniforms(rng_seed: int, n: int) -> np.ndarray:
    return np.random.default_rng(rng_seed).random(n)


def batch_map_closed_form(
    params: SystemParams, prior: UniformAlongD, tau: float, ybar: np.ndarray, tie_u: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One-instant MAP speed for each (possibly averaged) count in ``ybar``.

    Returns ``(estimate, branch)`` where branch is 0 for the peak speed
    ``r0/tau``, 1 for a level-set solution ``lambda(v) = y`` and 2 for a
    support boundary. When both level-set speeds are admissible the larger
    is taken where ``tie_u < 0.5``.
    """
    y = np.asarray(ybar, dtype=float)
    D, r0 = params.diffusion_coeff, params.tx_rx_distance
    v1 = r0 / tau
    log_peak = math.log(params.gain) - 1.5 * math.log(4 * math.pi * D * tau)
    peak = math.exp(log_peak)
    est = np.full(y.shape, np.nan)
    branch = np.full(y.shape, 2, dtype=int)

    case1 = (y >= peak) & bool(prior.contains(v1))
    est[case1] = v1
    branch[case1] = 0

    mid = (y > 0) & (y < peak)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.sqrt(np.maximum(-4 * D * tau * (np.log(y) - log_peak), 0.0))
    v_hi = (r0 + root) / tau
    v_lo = (r0 - root) / tau
    in_hi = mid & prior.contains(v_hi)
    in_lo = mid & prior.contains(v_lo)
    both = in_hi & in_lo
    pick_hi = np.where(both, np.asarray(tie_u) < 0.5, in_hi)
    level = in_hi | in_lo
    est = np.where(level, np.where(pick_hi, v_hi, v_lo), est)
    branch = np.where(level, 1, branch)

    rest = ~(case1 | level)
    if np.any(rest):
        ends = np.array([prior.v_min, prior.v_max])
        ll = log_peak - (r0 - ends * tau) ** 2 / (4 * D * tau)
        lam_ends = np.exp(ll)
        yr = y[rest]
        r_ends = np.where(yr[:, None] > 0, yr[:, None] * ll, 0.0) - lam_ends
        est[rest] = np.where(r_ends[:, 0] >= r_ends[:, 1], prior.v_min, prior.v_max)
    return est, branch


def map_estimate_closed_form(
    params: SystemParams,
    prior: UniformAlongD,
    t: float,
    y: float,
    rng_seed: int = 0,
    return_branch: bool = False,
):
    """MAP speed from one count (or an average count) at one instant."""
    if not isinstance(prior, UniformAlongD):
        raise ConfigError("closed-form MAP needs a directional prior")
    tau = t - params.release_time
    if tau <= 0:
        SamplingSchedule([t]).validate(params)
    if prior.degenerate:
        return (prior.v_min, 2) if return_branch else prior.v_min
    est, br = batch_map_closed_form(params, prior, tau, np.atleast_1d(y), _tie_uniforms(rng_seed, 1))
    return (float(est[0]), int(br[0])) if return_branch else float(est[0])


def batch_map_numeric(
    params: SystemParams,
    prior: UniformAlongD,
    g: GroupedSchedule,
    Y: np.ndarray,
    tie_u: np.ndarray,
    n_grid: int = 2049,
    n_refine: int = 3,
    chunk: int = 2000,
) -> np.ndarray:
    """Global posterior maximisation on the support for rows of grouped sums.

    A dense grid locates the best local maxima; each is polished by
    bisection on the score, and the support ends are kept as candidates. For
    a single distinct instant the likelihood is symmetric about ``r0/tau``,
    so when the mirror image of an interior maximiser is also admissible the
    two are chosen between with ``tie_u`` exactly as the closed form does.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if prior.degenerate:
        return np.full(len(Y), prior.v_min)
    grid = np.linspace(prior.v_min, prior.v_max, n_grid)
    out = np.empty(len(Y))
    for s0 in range(0, len(Y), chunk):
        Yc = Y[s0 : s0 + chunk]
        R = _loglik_grid(params, g, Yc, grid)
        n = len(Yc)
        inner = np.full((n, n_grid), -np.inf)
        is_max = (R[:, 1:-1] >= R[:, :-2]) & (R[:, 1:-1] >= R[:, 2:])
        inner[:, 1:-1] = np.where(is_max, R[:, 1:-1], -np.inf)
        top = np.argsort(-inner, axis=1, kind="stable")[:, :n_refine]
        cands = [np.full(n, prior.v_min), np.full(n, prior.v_max)]
        rows = np.arange(n)
        for j in range(top.shape[1]):
            idx = top[:, j]
            valid = np.isfinite(inner[rows, idx])
            idx = np.clip(idx, 1, n_grid - 2)
            cands.append(np.where(valid, _polish(params, g, Yc, grid, idx), np.nan))
        C = np.stack(cands, axis=1)
        vals = np.stack(
            [np.where(np.isnan(C[:, j]), -np.inf, _loglik_at(params, g, Yc, np.nan_to_num(C[:, j])))
             for j in range(C.shape[1])],
            axis=1,
        )
        best = C[rows, np.argmax(vals, axis=1)]
        if g.K == 1:
            best = _mirror_choice(params, prior, g.tau[0], best, tie_u[s0 : s0 + chunk])
        out[s0 : s0 + chunk] = best
    return out


def _polish(params, g, Y, grid, idx, iters: int = 64) -> np.ndarray:
    lo, mid, hi = grid[idx - 1], grid[idx], grid[idx + 1]
    d_lo, d_mid, d_hi = (_score(params, g, Y, x) for x in (lo, mid, hi))
    left = (d_lo > 0) & (d_mid < 0)
    right = ~left & (d_mid > 0) & (d_hi < 0)
    a = np.where(left, lo, mid)
    b = np.where(left, mid, hi)
    active = left | right
    for _ in range(iters):
        m = 0.5 * (a + b)
        pos = _score(params, g, Y, m) > 0
        a = np.where(pos, m, a)
        b = np.where(pos, b, m)
    return np.where(active, 0.5 * (a + b), mid)


def _mirror_choice(params, prior, tau, est, tie_u) -> np.ndarray:
    v1 = params.tx_rx_distance / tau
    mirror = 2 * v1 - est
    interior = (est > prior.v_min) & (est < prior.v_max)
    dist = np.abs(est - v1)
    amb = interior & prior.contains(mirror) & (dist > 1e-9 * max(abs(v1), prior.v_minus))
    hi = np.maximum(est, mirror)
    lo = np.minimum(est, mirror)
    return np.where(amb, np.where(np.asarray(tie_u) < 0.5, hi, lo), est)


def map_estimate(
    params: SystemParams,
    prior: VelocityPrior,
    schedule: SamplingSchedule,
    obs,
    rng_seed: int = 0,
    n_grid: int = 2049,
):
    """Posterior mode over the prior support (global, boundaries allowed)."""
    if isinstance(prior, PerAxisUniform):
        return _map_vector(params, prior, schedule, np.asarray(obs, dtype=float))
    g = GroupedSchedule.build(params, schedule)
    Y = g.group(obs)[None, :]
    return float(batch_map_numeric(params, prior, g, Y, _tie_uniforms(rng_seed, 1), n_grid)[0])


def map_estimate_equal_times(
    params: SystemParams, prior: UniformAlongD, schedule: SamplingSchedule, obs, rng_seed: int = 0
) -> float:
    """Closed-form MAP when every sample is taken at the same instant, using the mean count."""
    t = schedule.array
    if np.any(t != t[0]):
        raise ConfigError("all sampling times must be equal")
    ybar = float(np.mean(np.asarray(obs, dtype=float)))
    return map_estimate_closed_form(params, prior, float(t[0]), ybar, rng_seed)


# ---------------------------------------------------------------------------
# MMSE


def batch_mmse(
    params: SystemParams,
    prior: UniformAlongD,
    g: GroupedSchedule,
    Y: np.ndarray,
    n_nodes: int = 256,
    rtol: float = 1e-8,
    max_nodes: int = 1 << 15,
    chunk: int = 2000,
) -> np.ndarray:
    """Posterior means by log-stabilised Gauss-Legendre quadrature with doubling."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if prior.degenerate:
        return np.full(len(Y), prior.v_min)

    def at(n: int) -> np.ndarray:
        x, w = numerics.gauss_legendre(prior.v_min, prior.v_max, n)
        out = np.empty(len(Y))
        for s0 in range(0, len(Y), chunk):
            R = _loglik_grid(params, g, Y[s0 : s0 + chunk], x)
            e = np.exp(R - R.max(axis=1, keepdims=True)) * w
            den = e.sum(axis=1)
            if not np.all(np.isfinite(den)) or np.any(den <= 0):
                raise DegeneratePosterior("posterior mass vanished on the support")
            out[s0 : s0 + chunk] = (e @ x) / den
        return out

    n = n_nodes
    prev = at(n)
    scale = np.maximum(np.abs(prev), 1e-6 * max(prior.v_minus, abs(prior.v_max)))
    while n < max_nodes:
        n *= 2
        cur = at(n)
        if np.all(np.abs(cur - prev) <= rtol * scale):
            return cur
        prev = cur
    return prev


def mmse_estimate(params: SystemParams, prior: VelocityPrior, schedule: SamplingSchedule, obs):
    """Posterior mean of the velocity."""
    if isinstance(prior, PerAxisUniform):
        return _mmse_vector(params, prior, schedule, np.asarray(obs, dtype=float))
    g = GroupedSchedule.build(params, schedule)
    return float(batch_mmse(params, prior, g, g.group(obs)[None, :])[0])


# ---------------------------------------------------------------------------
# LMMSE


@dataclass(frozen=True)
class LmmseMoments:
    """Per-group prior moments: E[Y], Var(Y) and Cov(Y, v) of one sample."""

    mean_v: float | np.ndarray
    mean_y: np.ndarray
    var_y: np.ndarray
    cov_yv: np.ndarray


def lmmse_moments(
    params: SystemParams, prior: UniformAlongD, g: GroupedSchedule, rtol: float = 1e-12
) -> LmmseMoments:
    if prior.degenerate:
        lam = np.exp(_log_lam(params, g, np.asarray(prior.v_min)))
        return LmmseMoments(prior.v_min, lam, lam, np.zeros_like(lam))

    def moment(fn):
        val, _ = numerics.integrate(fn, prior.v_min, prior.v_max, n_nodes=256, rtol=rtol)
        return val / prior.v_minus

    out = []
    for k in range(g.K):
        gk = GroupedSchedule(g.tau[k : k + 1], g.counts[k : k + 1], np.zeros(1, int))
        lam = lambda v, gk=gk: np.exp(_log_lam(params, gk, v))[..., 0]
        e1 = moment(lam)
        e2 = moment(lambda v: lam(v) ** 2)
        ev = moment(lambda v: v * lam(v))
        out.append((e1, e1 + e2 - e1 * e1, ev - prior.mean * e1))
    m = np.array(out)
    if np.any(m[:, 1] <= 0):
        raise ZeroVariance("a sample has zero variance under the prior")
    return LmmseMoments(prior.mean, m[:, 0], m[:, 1], m[:, 2])


def batch_lmmse(moments: LmmseMoments, g: GroupedSchedule, Y: np.ndarray) -> np.ndarray:
    """Per-sample affine rule ``E[v] + sum_l Cov_l/Var_l (y_l - E[Y_l])`` on grouped sums."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    gain = moments.cov_yv / moments.var_y
    return moments.mean_v + (Y - g.counts * moments.mean_y) @ gain


def lmmse_estimate(params: SystemParams, prior: VelocityPrior, schedule: SamplingSchedule, obs):
    """Affine estimate built from each sample's covariance with the velocity.

    Each sample is weighted by its own ``Cov(Y_l, v)/Var(Y_l)``; for equal
    times this is ``L Cov/Var (ybar - E[Y])``.
    """
    if isinstance(prior, PerAxisUniform):
        return _lmmse_vector(params, prior, schedule, np.asarray(obs, dtype=float))
    g = GroupedSchedule.build(params, schedule)
    mom = lmmse_moments(params, prior, g)
    return float(batch_lmmse(mom, g, g.group(obs)[None, :])[0])


# ---------------------------------------------------------------------------
# per-axis (3-D) prior


def _loglik_vec(params: SystemParams, t: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    tau = t - params.release_time
    D = params.diffusion_coeff
    off = params.r0_vec - v[..., None, :] * tau[:, None]
    ll = (
        math.log(params.gain)
        - 1.5 * np.log(4 * math.pi * D * tau)
        - np.sum(off * off, axis=-1) / (4 * D * tau)
    )
    return np.sum(y * ll - np.exp(ll), axis=-1)


def _grad_vec(params: SystemParams, t: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    tau = t - params.release_time
    lam = vector_mean_count(params, np.broadcast_to(v, (len(t), 3)), t)
    off = params.r0_vec - v[None, :] * tau[:, None]
    return np.sum(((y - lam) / (2 * params.diffusion_coeff))[:, None] * off, axis=0)


def _tensor_nodes(prior: PerAxisUniform, n: int):
    axes, weights = [], []
    for lo, hi in zip(prior.lo, prior.hi):
        if hi > lo:
            x, w = numerics.gauss_legendre(lo, hi, n)
            axes.append(x)
            weights.append(w / (hi - lo))
        else:
            axes.append(np.array([lo]))
            weights.append(np.array([1.0]))
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    W = np.einsum("i,j,k->ijk", *weights).ravel()
    return X, W


def _map_vector(params, prior: PerAxisUniform, schedule, y, n_grid: int = 33) -> np.ndarray:
    t = schedule.array
    axes = [np.linspace(lo, hi, n_grid) if hi > lo else np.array([lo]) for lo, hi in zip(prior.lo, prior.hi)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    R = _loglik_vec(params, t, y, X)
    starts = X[np.argsort(-R, kind="stable")[:5]]
    width = np.where(prior.hi > prior.lo, prior.hi - prior.lo, 1.0)
    scale = max(1.0, float(np.max(np.abs(R))))

    def f(x):
        v = prior.lo + x * width
        return -_loglik_vec(params, t, y, v) / scale, -_grad_vec(params, t, y, v) * width / scale

    bounds = [(0.0, 1.0) if hi > lo else (0.0, 0.0) for lo, hi in zip(prior.lo, prior.hi)]
    best_v, best_r = starts[0], float(np.max(R))
    for s in starts:
        res = optimize.minimize(f, (s - prior.lo) / width, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 500})
        v = prior.lo + np.clip(res.x, 0, 1) * width
        r = float(_loglik_vec(params, t, y, v))
        if r > best_r:
            best_v, best_r = v, r
    return np.asarray(best_v, dtype=float)


def _mmse_vector(params, prior: PerAxisUniform, schedule, y, n: int = 24, rtol: float = 1e-8) -> np.ndarray:
    t = schedule.array

    def at(n: int) -> np.ndarray:
        X, W = _tensor_nodes(prior, n)
        R = _loglik_vec(params, t, y, X)
        e = np.exp(R - R.max()) * W
        if not np.isfinite(e.sum()) or e.sum() <= 0:
            raise DegeneratePosterior("posterior mass vanished on the support")
        return (e @ X) / e.sum()

    prev = at(n)
    scale = max(float(np.max(np.abs(prev))), 1e-6 * float(np.max(prior.hi - prior.lo)))
    while n < 192:
        n *= 2
        cur = at(n)
        if np.max(np.abs(cur - prev)) <= rtol * scale:
            return cur
        prev = cur
    return prev


def _lmmse_vector(params, prior: PerAxisUniform, schedule, y, n: int = 48) -> np.ndarray:
    t = schedule.array
    X, W = _tensor_nodes(prior, n)
    mean_v = W @ X
    est = mean_v.copy()
    for l, tl in enumerate(t):
        lam = vector_mean_count(params, X, np.full(len(X), tl))
        ey = W @ lam
        var = ey + W @ lam**2 - ey**2
        if var <= 0:
            raise ZeroVariance("a sample has zero variance under the prior")
        cov = (W * lam) @ X - ey * mean_v
        est += cov / var * (y[l] - ey)
    return est
