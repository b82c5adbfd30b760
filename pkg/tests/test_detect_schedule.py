import math

import numpy as np
import pytest

from flowmeter.channel import SamplingSchedule
from flowmeter.detect_schedule import (
    Objective,
    ScheduleSearchSpec,
    caratheodory_schedule,
    chernoff_schedule_binary,
    chernoff_time_residual,
    evaluate_objective,
    gaussian_stationarity_residual,
    optimize_schedule,
    weighted_exponent,
)
from flowmeter.detector import HypothesisSet
from flowmeter.errors import EmptyWindow


def _pg(hyps, t):
    return hyps.error_probability_gaussian(SamplingSchedule(t))


@pytest.mark.parametrize("times", [[0.08], [0.06, 0.14], [0.05, 0.1, 0.2]])
def test_gaussian_residual_is_scaled_derivative(binary_hyps, times):
    r = gaussian_stationarity_residual(binary_hyps, times)
    for l in range(len(times)):
        # Richardson-extrapolated central difference
        def cd(h):
            up, dn = np.array(times, float), np.array(times, float)
            up[l] += h
            dn[l] -= h
            return (_pg(binary_hyps, up) - _pg(binary_hyps, dn)) / (2 * h)

        h = 1e-5
        fd = (4 * cd(h / 2) - cd(h)) / 3
        assert r[l] / (2 * math.sqrt(2 * math.pi)) == pytest.approx(fd, rel=1e-6)


def test_gaussian_residual_symmetric_in_hypotheses(binary_hyps):
    swapped = binary_hyps.subset([1, 0])
    t = [0.07, 0.12]
    np.testing.assert_allclose(
        gaussian_stationarity_residual(binary_hyps, t),
        gaussian_stationarity_residual(swapped, t),
        rtol=1e-12,
    )


def test_gaussian_residual_vanishes_at_gaussian_optimum(binary_hyps):
    spec = ScheduleSearchSpec(objective=Objective.GAUSSIAN, tol=1e-12)
    res = optimize_schedule(binary_hyps, spec, 1)
    r = gaussian_stationarity_residual(binary_hyps, res.schedule.times)
    lam = binary_hyps.means(res.schedule)
    assert abs(r[0]) < 1e-6 * float(np.max(lam)) / res.schedule.times[0]


@pytest.mark.parametrize("obj", list(Objective))
def test_two_sample_optimum_uses_equal_times(binary_hyps, obj):
    spec = ScheduleSearchSpec(objective=obj)
    res = optimize_schedule(binary_hyps, spec, 2)
    t = res.schedule.times
    assert t[1] - t[0] < 1e-6
    # no equal-times point on a fine scan beats the returned optimum
    scan = np.linspace(0.09, 0.12, 301)
    best = min(evaluate_objective(binary_hyps, [x, x], obj) for x in scan)
    assert res.objective_value <= best


@pytest.mark.parametrize("obj", list(Objective))
def test_reported_objective_matches_direct_evaluation(binary_hyps, obj):
    spec = ScheduleSearchSpec(objective=obj, grid_points=400)
    res = optimize_schedule(binary_hyps, spec, 1)
    assert res.objective_value == evaluate_objective(binary_hyps, res.schedule, obj)
    # the optimum is no worse than every grid point
    grid = np.linspace(spec.t_lo, spec.t_hi, 400)
    vals = [evaluate_objective(binary_hyps, [t], obj) for t in grid]
    assert res.objective_value <= min(vals) + 1e-15


def test_chernoff_time_is_stationary_and_l_invariant(binary_hyps):
    spec = ScheduleSearchSpec()
    bt = chernoff_schedule_binary(binary_hyps, spec)
    assert bt.time == pytest.approx(0.1083661, abs=1e-6)
    assert abs(chernoff_time_residual(binary_hyps, bt.time)) < 1e-10
    for L in (1, 3):
        spec_ci = ScheduleSearchSpec(objective=Objective.CHERNOFF)
        res = optimize_schedule(binary_hyps, spec_ci, L)
        np.testing.assert_allclose(res.schedule.times, bt.time, atol=1e-5)


def test_larger_l_uses_seeded_search(binary_hyps):
    spec = ScheduleSearchSpec(objective=Objective.CHERNOFF)
    res = optimize_schedule(binary_hyps, spec, 6)
    np.testing.assert_allclose(res.schedule.times, 0.1083661, atol=1e-5)


def test_search_spec_validation():
    with pytest.raises(EmptyWindow):
        ScheduleSearchSpec(t_lo=0.5, t_hi=0.1)
    assert Objective.parse("ci") is Objective.CHERNOFF
    assert Objective.parse("pe") is Objective.EXACT


def test_caratheodory_binary_reduces_to_one_instant(binary_hyps):
    ws = caratheodory_schedule(binary_hyps, ScheduleSearchSpec())
    t, w = ws.support()
    assert len(t) == 1
    bt = chernoff_schedule_binary(binary_hyps, ScheduleSearchSpec())
    assert t[0] == pytest.approx(bt.time, abs=1e-6)
    assert ws.exponent == pytest.approx(bt.exponent, rel=1e-9)


def test_caratheodory_dominates_each_candidate(params):
    hyps = HypothesisSet.along(params, (0.0, 1e-4, 2e-4))
    ws = caratheodory_schedule(hyps, ScheduleSearchSpec())
    for t in ws.candidate_times:
        assert ws.exponent >= weighted_exponent(hyps, np.array([t]), np.array([1.0])) - 1e-12
    assert ws.exponent >= ws.candidate_exponent
    assert len(ws.support()[0]) <= hyps.M * (hyps.M - 1) // 2
    sched = ws.realize(50)
    assert len(sched.times) == 50


def test_realize_rounding(params):
    hyps = HypothesisSet.along(params, (0.0, 1e-4, 2e-4))
    ws = caratheodory_schedule(hyps, ScheduleSearchSpec())
    from dataclasses import replace

    ws2 = replace(ws, weights=np.array([0.5, 0.3, 0.2]))
    t = np.array(ws2.realize(7).times)
    counts = [int(np.sum(t == x)) for x in np.sort(ws2.times)]
    assert sum(counts) == 7
