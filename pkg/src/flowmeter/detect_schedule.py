"""Choosing sampling instants that minimise detection error.

Three objectives are supported: the exact MAP error probability, its
Gaussian approximation and the Chernoff-information bound. For the binary
Chernoff objective the optimum is a single repeated instant, found by root
finding on the time derivative of the optimised exponent. For many samples
the Chernoff program reduces to a weighted set of at most C(M, 2) distinct
instants.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import detector, numerics
from .channel import SamplingSchedule, mean_count, mean_count_time_derivative
from .detector import HypothesisSet
from .errors import ConfigError, DegenerateHypotheses, EmptyWindow, NoRootInWindow


class Objective(enum.Enum):
    EXACT = "exact"
    GAUSSIAN = "gaussian"
    CHERNOFF = "chernoff"

    @classmethod
    def parse(cls, name: "str | Objective") -> "Objective":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        aliases = {"ci": "chernoff", "chernoffci": "chernoff", "pe": "exact", "g": "gaussian"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ConfigError(f"unknown objective {name!r}") from None


# exhaustive sorted-tuple grids get expensive fast; beyond this L the search
# is seeded from the replicated one-sample optimum instead
MAX_GRID_L = 3
_COARSE_POINTS = {2: 80, 3: 30}


@dataclass(frozen=True)
class ScheduleSearchSpec:
    t_lo: float = 1e-3
    t_hi: float = 1.0
    grid_points: int = 2000
    tol: float = 1e-9
    objective: Objective = Objective.EXACT
    coarse_points: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "objective", Objective.parse(self.objective))
        if not (self.t_hi > self.t_lo):
            raise EmptyWindow(f"empty search window [{self.t_lo}, {self.t_hi}]")
        if self.grid_points < 3 or self.tol <= 0:
            raise ConfigError("grid_points must be >= 3 and tol positive")

    def check(self, release_time: float) -> None:
        if self.t_lo <= release_time:
            raise EmptyWindow("search window must start after the release time")

    def points_for(self, L: int) -> int:
        if L == 1:
            return self.grid_points
        if self.coarse_points is not None:
            return self.coarse_points
        return _COARSE_POINTS.get(L, 12)


@dataclass(frozen=True)
class ScheduleResult:
    schedule: SamplingSchedule
    objective_value: float
    objective: Objective
    grid_ties: np.ndarray = field(repr=False)


def _batch_means(hyps: HypothesisSet, times: np.ndarray) -> np.ndarray:
    """Means for a batch of schedules: (N, L) -> (N, M, L)."""
    return np.stack([mean_count(hyps.params, h, times) for h in hyps.hypotheses], axis=-2)


def objective_batch(hyps: HypothesisSet, times: np.ndarray, objective: Objective) -> np.ndarray:
    """Objective values for each row of ``times`` (shape (N, L))."""
    objective = Objective.parse(objective)
    times = np.atleast_2d(np.asarray(times, dtype=float))
    lam = _batch_means(hyps, times)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if objective is Objective.CHERNOFF:
            return detector.ci_objective_batch(lam)
        if objective is Objective.GAUSSIAN and hyps.M == 2:
            out = detector._gaussian_binary(lam)
            return np.where(np.isfinite(out), out, 0.5)
    fn = (
        detector.error_probability_exact
        if objective is Objective.EXACT
        else detector.error_probability_gaussian
    )
    out = np.empty(len(times))
    for k, lk in enumerate(lam):
        try:
            out[k] = fn(lk)
        except (DegenerateHypotheses, detector.ZeroMeanCount):
            out[k] = 1.0 - 1.0 / hyps.M
    return out


def evaluate_objective(hyps: HypothesisSet, schedule, objective: Objective) -> float:
    t = schedule.array if isinstance(schedule, SamplingSchedule) else np.asarray(schedule, float)
    return float(objective_batch(hyps, t[None, :], objective)[0])


def optimize_schedule(
    hyps: HypothesisSet, spec: ScheduleSearchSpec, L: int, seed_times=None
) -> ScheduleResult:
    """Best sorted schedule of ``L`` instants for the chosen objective.

    Dense grid plus golden-section refinement for ``L <= 3``; for larger ``L``
    the refinement starts from the one-sample optimum replicated ``L`` times
    (or from ``seed_times`` when given).
    """
    if L < 1:
        raise ConfigError("L must be >= 1")
    spec.check(hyps.params.release_time)
    obj = spec.objective
    if obj is Objective.EXACT and L > detector.MAX_ENUMERATION_L:
        raise detector.EnumerationTooLarge(f"exact objective limited to L <= {detector.MAX_ENUMERATION_L}")

    def f_batch(x: np.ndarray) -> np.ndarray:
        return objective_batch(hyps, x, obj)

    seeds = None
    if seed_times is not None:
        seeds = np.sort(np.asarray(seed_times, dtype=float))[None, :]
    elif L > MAX_GRID_L:
        one = optimize_schedule(hyps, spec, 1)
        seeds = np.full((1, L), one.schedule.times[0])
    res = numerics.minimize_sorted_tuples(
        f_batch, spec.t_lo, spec.t_hi, L, spec.points_for(L), spec.tol, seeds=seeds
    )
    sched = SamplingSchedule(res.x)
    return ScheduleResult(sched, evaluate_objective(hyps, sched, obj), obj, res.grid_ties)


# ---------------------------------------------------------------------------
# stationarity of the Gaussian objective


def gaussian_stationarity_residual(hyps: HypothesisSet, schedule) -> np.ndarray:
    """Time derivative of the binary Gaussian error, scaled by ``2 sqrt(2 pi)``.

    Entry ``l`` vanishes when the Gaussian objective is stationary in ``t_l``.
    The expression is symmetric in the two hypotheses.
    """
    if hyps.M != 2:
        raise ConfigError("the Gaussian stationarity residual is defined for two hypotheses")
    t = schedule.array if isinstance(schedule, SamplingSchedule) else np.asarray(schedule, float)
    p = hyps.params
    lam = np.stack([mean_count(p, h, t) for h in hyps.hypotheses])
    g = np.stack([mean_count_time_derivative(p, h, t) for h in hyps.hypotheses])
    if np.array_equal(lam[0], lam[1]):
        raise DegenerateHypotheses("identical mean rows")
    w = np.log(lam[0] / lam[1])
    dw = g[0] / lam[0] - g[1] / lam[1]
    beta = np.sum(lam[0] - lam[1])
    dbeta = g[0] - g[1]
    out = np.zeros(len(t))
    for i, sign in ((0, 1.0), (1, -1.0)):
        mu = np.sum(w * lam[i])
        sd = math.sqrt(np.sum(w * w * lam[i]))
        dmu = dw * lam[i] + w * g[i]
        dsd = w * (2 * dw * lam[i] + w * g[i]) / (2 * sd)
        a = (beta - mu) / sd
        bracket = (dbeta - dmu) - dsd * (beta - mu) / sd
        out += sign * math.exp(-0.5 * a * a) * bracket / sd
    return out


# ---------------------------------------------------------------------------
# binary Chernoff schedule


def chernoff_time_residual(hyps: HypothesisSet, t: float) -> float:
    """Time derivative of the binary exponent at the closed-form optimal ``s``."""
    p = hyps.params
    l0, l1 = (float(mean_count(p, h, t)) for h in hyps.hypotheses)
    g0, g1 = (float(mean_count_time_derivative(p, h, t)) for h in hyps.hypotheses)
    s = float(detector.closed_form_chernoff_s(l0 / l1))
    return (
        g0 * s
        + g1 * (1 - s)
        - s * g0 * (l1 / l0) ** (1 - s)
        - (1 - s) * g1 * (l0 / l1) ** s
    )


@dataclass(frozen=True)
class BinaryChernoffTime:
    time: float
    s: float
    exponent: float
    residual: float

    def schedule(self, L: int) -> SamplingSchedule:
        return SamplingSchedule(np.full(L, self.time))


def _one_sample_exponent(lam0: float, lam1: float) -> tuple[float, float]:
    s = float(detector.closed_form_chernoff_s(lam0 / lam1))
    return s, lam0 * s + lam1 * (1 - s) - lam0**s * lam1 ** (1 - s)


def chernoff_schedule_binary(hyps: HypothesisSet, spec: ScheduleSearchSpec) -> BinaryChernoffTime:
    """Sampling instant maximising the binary Chernoff exponent.

    The optimal ``s`` is substituted in closed form, leaving a scalar equation
    in ``t``; every sign change on the search grid is polished by Brent's
    method and the root with the largest exponent is returned. The same
    instant is optimal for any number of samples.
    """
    if hyps.M != 2:
        raise ConfigError("binary Chernoff schedule needs two hypotheses")
    spec.check(hyps.params.release_time)
    p = hyps.params
    probe = np.linspace(spec.t_lo, spec.t_hi, 7)
    lam_probe = np.stack([mean_count(p, h, probe) for h in hyps.hypotheses])
    if np.array_equal(lam_probe[0], lam_probe[1]):
        raise DegenerateHypotheses("hypotheses produce identical means")

    grid = np.linspace(spec.t_lo, spec.t_hi, spec.grid_points)
    with np.errstate(all="ignore"):
        F = np.array([chernoff_time_residual(hyps, t) for t in grid])
    ok = np.isfinite(F)
    roots = []
    for k in range(len(grid) - 1):
        if not (ok[k] and ok[k + 1]):
            continue
        if F[k] == 0.0:
            roots.append(grid[k])
        elif F[k] * F[k + 1] < 0:
            roots.append(
                numerics.find_root(
                    lambda t: chernoff_time_residual(hyps, t), grid[k], grid[k + 1], tol=1e-15, rtol=1e-15
                )
            )
    if not roots:
        raise NoRootInWindow("exponent has no stationary point inside the window")
    best = None
    for t in roots:
        l0, l1 = (float(mean_count(p, h, t)) for h in hyps.hypotheses)
        s, d = _one_sample_exponent(l0, l1)
        if best is None or d > best.exponent:
            best = BinaryChernoffTime(float(t), s, d, chernoff_time_residual(hyps, t))
    return best


# ---------------------------------------------------------------------------
# weighted (many-sample) Chernoff schedule


@dataclass(frozen=True)
class WeightedSchedule:
    """Distinct instants with sample fractions; ``exponent`` is per sample.

    ``candidate_*`` hold the answer before joint time refinement; ``pairs``
    names the hypothesis pair whose binary optimum seeded each instant.
    """

    times: np.ndarray
    weights: np.ndarray
    exponent: float
    candidate_times: np.ndarray = field(repr=False)
    candidate_weights: np.ndarray = field(repr=False)
    candidate_exponent: float = field(repr=False)
    pairs: tuple[tuple[int, int], ...] = field(default=(), repr=False)

    def support(self, min_weight: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
        keep = self.weights > min_weight
        return self.times[keep], self.weights[keep]

    def realize(self, L: int) -> SamplingSchedule:
        """Round the weights to integer sample counts summing to ``L``."""
        counts = np.floor(self.weights * L).astype(int)
        order = np.argsort(-(self.weights * L - counts), kind="stable")
        counts[order[: L - counts.sum()]] += 1
        return SamplingSchedule(np.repeat(self.times, counts))


def _weighted_pair_exponent(a: np.ndarray, b: np.ndarray, w: np.ndarray, iters: int = 70) -> float:
    """``max_s sum_k w_k f(a_k, b_k, s)``, by bisection on the concave derivative."""
    lo, hi = 0.0, 1.0
    ratio = np.log(a / b)
    for _ in range(iters):
        s = 0.5 * (lo + hi)
        d = np.sum(w * (a - b - a**s * b ** (1 - s) * ratio))
        if d > 0:
            lo = s
        else:
            hi = s
    s = 0.5 * (lo + hi)
    return float(np.sum(w * (a * s + b * (1 - s) - a**s * b ** (1 - s))))


def weighted_exponent(hyps: HypothesisSet, times: np.ndarray, weights: np.ndarray) -> float:
    """Worst pairwise exponent of a weighted set of instants."""
    lam = hyps.means(np.asarray(times, dtype=float))
    w = np.asarray(weights, dtype=float)
    return min(
        _weighted_pair_exponent(lam[i], lam[j], w)
        for i, j in itertools.combinations(range(hyps.M), 2)
    )


def caratheodory_schedule(
    hyps: HypothesisSet,
    spec: ScheduleSearchSpec,
    resolution: int = 40,
    refine_rounds: int = 2,
) -> WeightedSchedule:
    """Weighted instants maximising the worst pairwise Chernoff exponent.

    Candidate instants are the binary Chernoff optima of each hypothesis
    pair; their weights are optimised over the simplex. The instants are
    then refined jointly with the weights and the better answer is kept;
    both are reported.
    """
    spec.check(hyps.params.release_time)
    pairs = list(itertools.combinations(range(hyps.M), 2))
    cand = np.array([chernoff_schedule_binary(hyps.subset(pr), spec).time for pr in pairs])

    def fw(times: np.ndarray):
        return lambda w: weighted_exponent(hyps, times, w)

    w0, e0 = numerics.optimize_simplex_grid(fw(cand), len(cand), resolution)

    times, w, e = cand.copy(), w0.copy(), e0
    step = (spec.t_hi - spec.t_lo) / spec.grid_points * 4
    for _ in range(refine_rounds):
        for k in range(len(times)):
            if w[k] <= 0:
                continue

            def neg(t: float, k: int = k) -> float:
                trial = times.copy()
                trial[k] = t
                return -weighted_exponent(hyps, trial, w)

            a, b = max(spec.t_lo, times[k] - step), min(spec.t_hi, times[k] + step)
            t_new, val = numerics.golden_section(neg, a, b, spec.tol)
            if -val > e:
                times[k], e = t_new, -val
        w_new, e_new = numerics.optimize_simplex_grid(fw(times), len(times), resolution)
        if e_new >= e:
            w, e = w_new, e_new
    if e < e0:
        times, w, e = cand, w0, e0
    return WeightedSchedule(times, w, e, cand, w0, e0, tuple(pairs))
