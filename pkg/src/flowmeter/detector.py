"""M-ary MAP detection of the flow velocity from Poisson counts.

The core routines work on a mean matrix ``lam`` of shape ``(M, L)``:
``lam[i, l]`` is the expected count at sampling instant ``l`` under
hypothesis ``i``. :class:`HypothesisSet` binds flow profiles to a channel and
produces these matrices for a given schedule.

Priors are uniform over hypotheses. Log-likelihood ties are broken toward
the smallest hypothesis index, both in :func:`map_decide` and in the exact
error-probability enumeration, so the two agree event by event.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special, stats

from . import numerics
from .channel import ConstantFlow, FlowProfile, SamplingSchedule, SystemParams, mean_count
from .errors import (
    ConfigError,
    DegenerateHypotheses,
    EnumerationTooLarge,
    EqualRowSums,
    ZeroMeanCount,
)

MAX_ENUMERATION_L = 4
MAX_ENUMERATION_CELLS = 20_000_000
_S_LO, _S_HI = 1e-9, 1.0 - 1e-9


def _as_means(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 1:
        lam = lam[:, None]
    if lam.ndim != 2 or lam.shape[0] < 2:
        raise ConfigError("mean matrix must have shape (M>=2, L)")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ConfigError("mean counts must be finite and non-negative")
    return lam


def qfunc(x):
    """Standard normal upper tail, via erfc."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def log_likelihoods(lam: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``sum_l y_l ln(lam_il) - lam_il`` for each hypothesis (last axis M).

    ``y`` may carry leading batch dimensions. A zero mean with a positive
    count yields ``-inf``; a zero mean with a zero count contributes zero.
    """
    lam = _as_means(lam)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        log_lam = np.log(lam)
    # y * log(0) with y == 0 must be 0, not nan
    with np.errstate(invalid="ignore"):
        terms = np.where(y[..., None, :] > 0, y[..., None, :] * log_lam, 0.0)
    return terms.sum(axis=-1) - lam.sum(axis=-1)


def map_decide(lam, y) -> int | np.ndarray:
    """MAP hypothesis index for one observation vector or a batch of them."""
    lam = _as_means(lam)
    y = np.asarray(y)
    if y.shape[-1] != lam.shape[1]:
        raise ConfigError("observation length does not match the schedule")
    ll = log_likelihoods(lam, y)
    if np.any(np.all(np.isneginf(ll), axis=-1)):
        raise ZeroMeanCount("observation impossible under every hypothesis")
    dec = np.argmax(ll, axis=-1)
    return int(dec) if dec.ndim == 0 else dec


@dataclass(frozen=True)
class BinaryDecisionRule:
    """Decide H0 when ``weights @ y >= offset``, H1 otherwise."""

    weights: np.ndarray
    offset: float

    @property
    def threshold(self) -> float | None:
        """Scalar count threshold for one-sample rules."""
        if self.weights.size != 1:
            return None
        return float(self.offset / self.weights[0])

    def decide(self, y) -> int | np.ndarray:
        stat = np.asarray(y, dtype=float) @ self.weights
        dec = np.where(stat >= self.offset, 0, 1)
        return int(dec) if dec.ndim == 0 else dec


def binary_rule(lam) -> BinaryDecisionRule:
    lam = _as_means(lam)
    if lam.shape[0] != 2:
        raise ConfigError("binary rule needs exactly two hypotheses")
    if np.any(lam <= 0):
        raise ZeroMeanCount("binary rule needs strictly positive means")
    if np.array_equal(lam[0], lam[1]):
        raise DegenerateHypotheses("identical mean rows")
    w = np.log(lam[0] / lam[1])
    beta = float(np.sum(lam[0] - lam[1]))
    return BinaryDecisionRule(w, beta)


# ---------------------------------------------------------------------------
# exact error probability


def _support_limits(lam: np.ndarray, tail: float) -> np.ndarray:
    """Per-sample count cut-offs leaving less than ``tail`` mass per hypothesis."""
    M, L = lam.shape
    per = tail / L
    top = np.max(lam, axis=0)
    lim = stats.poisson.isf(per, top)
    return np.maximum(lim, 0).astype(int) + 1


def error_probability_exact(lam, tail: float = 1e-12) -> float:
    """MAP error probability by enumerating the truncated count lattice.

    The error mass is summed directly; the neglected tail contributes at most
    ``tail`` per hypothesis, so the result is accurate to ``tail``.
    """
    lam = _as_means(lam)
    M, L = lam.shape
    if L > MAX_ENUMERATION_L:
        raise EnumerationTooLarge(f"L={L} exceeds the exact enumeration limit {MAX_ENUMERATION_L}")
    limits = _support_limits(lam, tail)
    cells = int(np.prod(limits.astype(float)))
    if cells * M > MAX_ENUMERATION_CELLS:
        raise EnumerationTooLarge(f"{cells} lattice cells exceed the enumeration budget")

    shape = tuple(int(n) for n in limits)
    ll = np.zeros((M,) + shape)
    lp = np.zeros((M,) + shape)
    with np.errstate(divide="ignore"):
        log_lam = np.log(lam)
    for l, n in enumerate(shape):
        y = np.arange(n, dtype=float)
        bshape = [1] * L
        bshape[l] = n
        term = np.where(y[None, :] > 0, y[None, :] * log_lam[:, l : l + 1], 0.0) - lam[:, l : l + 1]
        ll += term.reshape((M,) + tuple(bshape))
        lp += (term - special.gammaln(y + 1)[None, :]).reshape((M,) + tuple(bshape))
    dec = np.argmax(ll, axis=0)
    err = 0.0
    for i in range(M):
        mask = dec != i
        err += float(np.exp(lp[i][mask]).sum())
    return err / M


# ---------------------------------------------------------------------------
# Gaussian approximation


def error_probability_gaussian(lam) -> float:
    """Gaussian approximation of the MAP error probability.

    For two hypotheses this is the closed form built from the weighted count
    statistic; for more hypotheses each count is replaced by a normal variate
    with matching mean and variance and the probability of the MAP region is
    evaluated (exactly for one sample, by a multivariate normal CDF otherwise).
    """
    lam = _as_means(lam)
    M, L = lam.shape
    if np.any(lam <= 0):
        raise ZeroMeanCount("Gaussian approximation needs positive means")
    for i, j in itertools.combinations(range(M), 2):
        if np.array_equal(lam[i], lam[j]):
            raise DegenerateHypotheses(f"hypotheses {i} and {j} are identical")
    if M == 2:
        return float(_gaussian_binary(lam[None])[0])
    pc = 0.0
    for i in range(M):
        pc += _gaussian_correct(lam, i)
    return float(1.0 - pc / M)


def _gaussian_binary(lam: np.ndarray) -> np.ndarray:
    """Vectorised binary Gaussian error over a batch of (2, L) mean matrices."""
    l0, l1 = lam[..., 0, :], lam[..., 1, :]
    w = np.log(l0 / l1)
    beta = np.sum(l0 - l1, axis=-1)
    mu0, mu1 = np.sum(w * l0, axis=-1), np.sum(w * l1, axis=-1)
    s0, s1 = np.sqrt(np.sum(w * w * l0, axis=-1)), np.sqrt(np.sum(w * w * l1, axis=-1))
    return 0.5 * (1.0 - qfunc((beta - mu0) / s0) + qfunc((beta - mu1) / s1))


def _gaussian_correct(lam: np.ndarray, i: int) -> float:
    M, L = lam.shape
    others = [j for j in range(M) if j != i]
    W = np.log(lam[i][None, :] / lam[others])  # (M-1, L)
    beta = np.sum(lam[i][None, :] - lam[others], axis=1)
    if L == 1:
        w, b = W[:, 0], beta
        lo = np.max(b[w > 0] / w[w > 0], initial=-np.inf)
        hi = np.min(b[w < 0] / w[w < 0], initial=np.inf)
        if hi <= lo:
            return 0.0
        sd = math.sqrt(lam[i, 0])
        return float(stats.norm.cdf(hi, lam[i, 0], sd) - stats.norm.cdf(lo, lam[i, 0], sd))
    mean = W @ lam[i] - beta
    cov = (W * lam[i][None, :]) @ W.T
    if np.linalg.matrix_rank(cov) < cov.shape[0]:
        raise ConfigError("singular statistic covariance; use Monte Carlo for this (M, L)")
    return float(
        stats.multivariate_normal.cdf(
            np.zeros(M - 1), mean=-mean, cov=cov, abseps=1e-12, releps=1e-10
        )
    )


# ---------------------------------------------------------------------------
# Chernoff information


def chernoff_exponent(lam, i1: int, i2: int, s: float) -> float:
    lam = _as_means(lam)
    a, b = lam[i1], lam[i2]
    return float(np.sum(a * s + b * (1 - s) - a**s * b ** (1 - s)))


def _dexp_ds(a: np.ndarray, b: np.ndarray, s) -> np.ndarray:
    # derivative of the Chernoff exponent in s; last axis is the sample index
    s = np.asarray(s)[..., None]
    return np.sum(a - b - a**s * b ** (1 - s) * np.log(a / b), axis=-1)


def optimal_chernoff_s(lam, i1: int = 0, i2: int = 1) -> float:
    """Maximiser of the Chernoff exponent in ``s``, by bracketed root finding."""
    lam = _as_means(lam)
    a, b = lam[i1], lam[i2]
    if np.array_equal(a, b):
        raise DegenerateHypotheses("identical mean rows")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ZeroMeanCount("Chernoff optimisation needs positive means")
    return numerics.find_root(lambda s: float(_dexp_ds(a, b, s)), _S_LO, _S_HI, tol=1e-12)


def closed_form_chernoff_s(ratio):
    """One-sample optimal ``s`` for mean ratio ``lam0/lam1`` (also the Holder form)."""
    x = np.log(np.asarray(ratio, dtype=float))
    small = np.abs(x) < 1e-6
    xs = np.where(small, 1.0, x)
    val = np.log(np.expm1(xs) / xs) / xs
    return np.where(small, 0.5 + x / 24.0, val)


def max_exponent_batch(a: np.ndarray, b: np.ndarray, iters: int = 80) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``max_s`` of the Chernoff exponent; rows along leading axes.

    Bisection on the derivative, which is decreasing in ``s`` (the exponent is
    concave). Returns ``(s_star, exponent)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo = np.zeros(a.shape[:-1])
    hi = np.ones(a.shape[:-1])
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pos = _dexp_ds(a, b, mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    s = 0.5 * (lo + hi)
    same = np.all(a == b, axis=-1)
    s = np.where(same, 0.5, s)
    sv = s[..., None]
    d = np.sum(a * sv + b * (1 - sv) - a**sv * b ** (1 - sv), axis=-1)
    return s, np.where(same, 0.0, d)


@dataclass(frozen=True)
class ChernoffExponent:
    """Per-pair optimised exponents with their ``s`` values and Holder surrogates."""

    pairs: tuple[tuple[int, int], ...]
    s: np.ndarray
    exponents: np.ndarray
    holder_s: np.ndarray
    holder_exponents: np.ndarray


def chernoff_pairs(lam) -> ChernoffExponent:
    lam = _as_means(lam)
    M = lam.shape[0]
    pairs = tuple(itertools.combinations(range(M), 2))
    a = np.array([lam[i] for i, _ in pairs])
    b = np.array([lam[j] for _, j in pairs])
    s, d = max_exponent_batch(a, b)
    sa, sb = a.sum(axis=1), b.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        hs = closed_form_chernoff_s(sa / sb)
        hk = sa * hs + sb * (1 - hs) - sa**hs * sb ** (1 - hs)
    return ChernoffExponent(pairs, s, d, hs, hk)


def error_bound_ci(lam) -> float:
    """Chernoff-information bound ``(M-1)/2 * max_pairs exp(-max_s D)``."""
    lam = _as_means(lam)
    M = lam.shape[0]
    ce = chernoff_pairs(lam)
    return float((M - 1) / 2 * np.exp(-np.min(ce.exponents)))


def ci_objective_batch(lam: np.ndarray) -> np.ndarray:
    """Chernoff bound for a batch of mean matrices, shape (..., M, L)."""
    lam = np.asarray(lam, dtype=float)
    M = lam.shape[-2]
    worst = None
    for i, j in itertools.combinations(range(M), 2):
        _, d = max_exponent_batch(lam[..., i, :], lam[..., j, :])
        worst = d if worst is None else np.minimum(worst, d)
    return (M - 1) / 2 * np.exp(-worst)


def error_bound_holder_ci(lam) -> float:
    """Looser closed-form Chernoff bound using row sums of the means."""
    lam = _as_means(lam)
    M = lam.shape[0]
    worst = np.inf
    for i, j in itertools.combinations(range(M), 2):
        sa, sb = lam[i].sum(), lam[j].sum()
        if sa == sb:
            raise EqualRowSums(f"hypotheses {i} and {j} have equal row sums")
        s = float(closed_form_chernoff_s(sa / sb))
        k = sa * s + sb * (1 - s) - sa**s * sb ** (1 - s)
        worst = min(worst, k)
    return float((M - 1) / 2 * math.exp(-worst))


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    n_trials: int


_MC_CHUNK = 200_000


def error_probability_montecarlo(lam, n_trials: int, rng_seed: int = 0) -> MonteCarloEstimate:
    """Simulated MAP error frequency with its binomial standard error."""
    lam = _as_means(lam)
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    M, L = lam.shape
    n_chunks = -(-n_trials // _MC_CHUNK)
    errors = 0
    for c, seq in enumerate(np.random.SeedSequence(rng_seed).spawn(n_chunks)):
        size = min(_MC_CHUNK, n_trials - c * _MC_CHUNK)
        rng = np.random.default_rng(seq)
        h = rng.integers(0, M, size=size)
        y = rng.poisson(lam[h])
        errors += int(np.count_nonzero(map_decide(lam, y) != h))
    p = errors / n_trials
    return MonteCarloEstimate(p, math.sqrt(p * (1 - p) / n_trials), n_trials)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HypothesisSet:
    """Equiprobable flow hypotheses observed through one channel."""

    params: SystemParams
    hypotheses: tuple[FlowProfile, ...]

    def __post_init__(self) -> None:
        hyps = tuple(self.hypotheses)
        if len(hyps) < 2:
            raise ConfigError("need at least two hypotheses")
        if len(set(hyps)) != len(hyps):
            raise ConfigError("hypotheses must be distinct")
        object.__setattr__(self, "hypotheses", hyps)

    @classmethod
    def along(cls, params: SystemParams, speeds: Sequence[float]) -> "HypothesisSet":
        """Constant flows ``speed * d`` along the transmitter-receiver axis."""
        return cls(params, tuple(ConstantFlow.along(params, s) for s in speeds))

    @property
    def M(self) -> int:
        return len(self.hypotheses)

    def means(self, schedule: SamplingSchedule | Sequence[float] | np.ndarray) -> np.ndarray:
        t = schedule.array if isinstance(schedule, SamplingSchedule) else np.asarray(schedule, float)
        return np.stack([mean_count(self.params, h, t) for h in self.hypotheses])

    def subset(self, indices: Sequence[int]) -> "HypothesisSet":
        return HypothesisSet(self.params, tuple(self.hypotheses[i] for i in indices))

    # thin wrappers mirroring the array-level API

    def map_decide(self, schedule, obs):
        return map_decide(self.means(schedule), obs)

    def binary_rule(self, schedule) -> BinaryDecisionRule:
        return binary_rule(self.means(schedule))

    def error_probability_exact(self, schedule, tail: float = 1e-12) -> float:
        return error_probability_exact(self.means(schedule), tail)

    def error_probability_gaussian(self, schedule) -> float:
        return error_probability_gaussian(self.means(schedule))

    def error_bound_ci(self, schedule) -> float:
        return error_bound_ci(self.means(schedule))

    def error_bound_holder_ci(self, schedule) -> float:
        return error_bound_holder_ci(self.means(schedule))

    def error_probability_montecarlo(self, schedule, n_trials: int, rng_seed: int = 0):
        return error_probability_montecarlo(self.means(schedule), n_trials, rng_seed)
