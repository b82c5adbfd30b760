import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from flowmeter import detector
from flowmeter.channel import SamplingSchedule
from flowmeter.detector import (
    HypothesisSet,
    binary_rule,
    chernoff_exponent,
    closed_form_chernoff_s,
    error_bound_ci,
    error_bound_holder_ci,
    error_probability_exact,
    error_probability_gaussian,
    error_probability_montecarlo,
    map_decide,
    optimal_chernoff_s,
)
from flowmeter.errors import (
    DegenerateHypotheses,
    EnumerationTooLarge,
    EqualRowSums,
    ZeroMeanCount,
)

# one-sample micro-oracle with means (2, 1), evaluated at high precision
MICRO = np.array([[2.0], [1.0]])
MICRO_THRESHOLD = 1.44269504088896340735992468100
MICRO_PE = 0.335123483683476584898929658398
MICRO_S = 0.528766372944898
MICRO_D = 0.0860713320559342
MICRO_CI = 0.458764389835775
MICRO_PG = 0.337878162626818

means_st = st.floats(0.05, 60.0)


def test_micro_oracle_values():
    rule = binary_rule(MICRO)
    assert rule.threshold == pytest.approx(MICRO_THRESHOLD, rel=1e-14)
    assert error_probability_exact(MICRO) == pytest.approx(MICRO_PE, abs=1e-12)
    assert optimal_chernoff_s(MICRO) == pytest.approx(MICRO_S, abs=1e-10)
    assert chernoff_exponent(MICRO, 0, 1, MICRO_S) == pytest.approx(MICRO_D, rel=1e-12)
    assert error_bound_ci(MICRO) == pytest.approx(MICRO_CI, rel=1e-10)
    assert error_probability_gaussian(MICRO) == pytest.approx(MICRO_PG, rel=1e-12)


def test_micro_threshold_channel_means():
    rule = binary_rule([[40.8021038347066], [8.23780269108365]])
    assert rule.threshold == pytest.approx(20.3526882147644, rel=1e-12)


def test_map_tie_goes_to_lowest_index():
    lam = np.array([[1.0], [1.0], [3.0]])
    assert map_decide(lam, [1]) == 0
    assert map_decide(lam, [5]) == 2


def test_map_zero_mean_policy():
    lam = np.array([[0.0], [2.0]])
    assert map_decide(lam, [0]) == 0
    assert map_decide(lam, [3]) == 1
    with pytest.raises(ZeroMeanCount):
        map_decide(np.array([[0.0], [0.0]]), [1])


@settings(max_examples=40, deadline=None)
@given(st.lists(means_st, min_size=2, max_size=2), st.lists(means_st, min_size=2, max_size=2))
def test_binary_rule_equals_map(a, b):
    lam = np.array([a, b])
    if np.array_equal(lam[0], lam[1]):
        return
    rule = binary_rule(lam)
    y = np.array(list(itertools.product(range(25), repeat=2)))
    llr = y @ rule.weights - rule.offset
    clear = np.abs(llr) > 1e-9
    assert np.array_equal(rule.decide(y)[clear], map_decide(lam, y)[clear])


def test_binary_rule_degenerate():
    with pytest.raises(DegenerateHypotheses):
        binary_rule([[3.0, 1.0], [3.0, 1.0]])


def test_identical_rows_give_half():
    lam = np.array([[4.0, 2.0], [4.0, 2.0]])
    assert error_probability_exact(lam) == pytest.approx(0.5, abs=1e-11)


def test_three_identical_rows_give_two_thirds():
    lam = np.full((3, 1), 5.0)
    assert error_probability_exact(lam) == pytest.approx(2 / 3, abs=1e-11)


def test_separated_hypotheses_vanish():
    lam = np.array([[1.0], [400.0]])
    assert error_probability_exact(lam) < 1e-12


def test_exact_error_brute_force_small():
    lam = np.array([[1.5, 0.7], [0.4, 2.2], [1.0, 1.0]])
    ys = np.array(list(itertools.product(range(60), repeat=2)))
    dec = map_decide(lam, ys)
    ref = 0.0
    for i in range(3):
        p = stats.poisson.pmf(ys[:, 0], lam[i, 0]) * stats.poisson.pmf(ys[:, 1], lam[i, 1])
        ref += p[dec != i].sum()
    assert error_probability_exact(lam) == pytest.approx(ref / 3, abs=1e-12)


def test_truncation_stability():
    lam = np.array([[12.0, 30.0], [15.0, 22.0]])
    a = error_probability_exact(lam, tail=1e-10)
    b = error_probability_exact(lam, tail=1e-14)
    assert abs(a - b) < 2e-10


def test_enumeration_limits():
    with pytest.raises(EnumerationTooLarge):
        error_probability_exact(np.ones((2, 5)))
    with pytest.raises(EnumerationTooLarge):
        error_probability_exact(np.array([[1e4] * 3, [2e4] * 3]))


@settings(max_examples=60, deadline=None)
@given(means_st, means_st)
def test_chernoff_properties_one_sample(a, b):
    if abs(a - b) < 1e-9 * max(a, b):
        return
    lam = np.array([[a], [b]])
    s = optimal_chernoff_s(lam)
    assert s == pytest.approx(float(closed_form_chernoff_s(a / b)), abs=1e-8)
    d01 = chernoff_exponent(lam, 0, 1, s)
    d10 = chernoff_exponent(lam, 1, 0, 1 - s)
    assert d01 == pytest.approx(d10, rel=1e-12, abs=1e-15)
    assert d01 >= 0
    assert error_bound_ci(lam) >= error_probability_exact(lam) - 1e-12


def test_closed_form_s_tends_to_half():
    r = 1 + np.array([1e-3, 1e-5, 1e-7, 1e-9])
    np.testing.assert_allclose(closed_form_chernoff_s(r), 0.5, atol=1e-4)
    assert float(closed_form_chernoff_s(1.0)) == 0.5


def test_ci_dominates_exact_on_channel_grid(params, binary_hyps):
    for t in np.linspace(0.02, 0.4, 20):
        for L in (1, 2):
            sched = SamplingSchedule(np.full(L, t))
            assert binary_hyps.error_bound_ci(sched) >= binary_hyps.error_probability_exact(sched) - 1e-12


def test_holder_bound():
    lam = np.array([[3.0], [1.0]])
    assert error_bound_holder_ci(lam) == pytest.approx(error_bound_ci(lam), rel=1e-9)
    lam = np.array([[3.0, 1.0, 5.0], [1.0, 2.0, 4.0]])
    assert error_bound_holder_ci(lam) >= error_bound_ci(lam) - 1e-15
    with pytest.raises(EqualRowSums):
        error_bound_holder_ci([[1.0, 2.0], [2.0, 1.0]])


@settings(max_examples=30, deadline=None)
@given(st.lists(means_st, min_size=3, max_size=3), st.permutations([0, 1, 2]))
def test_relabel_invariance(row_means, perm):
    lam = np.array([[m, 0.5 * m + 1] for m in row_means])
    if len({tuple(r) for r in lam}) < 3:
        return
    ref = error_probability_exact(lam)
    assert error_probability_exact(lam[list(perm)]) == pytest.approx(ref, abs=1e-11)
    assert error_bound_ci(lam[list(perm)]) == pytest.approx(error_bound_ci(lam), rel=1e-9)


def test_gaussian_mary_one_sample_vs_binary():
    # with two rows the M-ary construction reduces to the binary closed form
    lam = np.array([[7.0], [3.0]])
    pc = detector._gaussian_correct(lam, 0) + detector._gaussian_correct(lam, 1)
    assert 1 - pc / 2 == pytest.approx(error_probability_gaussian(lam), rel=1e-10)


def test_gaussian_mary_multi_sample_vs_binary():
    lam = np.array([[7.0, 2.0], [3.0, 5.0]])
    pc = detector._gaussian_correct(lam, 0) + detector._gaussian_correct(lam, 1)
    assert 1 - pc / 2 == pytest.approx(error_probability_gaussian(lam), rel=1e-7)


def test_gaussian_close_to_exact_for_large_counts():
    lam = np.array([[400.0], [440.0], [490.0]])
    assert error_probability_gaussian(lam) == pytest.approx(error_probability_exact(lam), abs=0.01)


def test_montecarlo_agrees_with_exact(binary_hyps):
    sched = SamplingSchedule([0.1, 0.15])
    mc = binary_hyps.error_probability_montecarlo(sched, 400_000, rng_seed=3)
    ex = binary_hyps.error_probability_exact(sched)
    assert abs(mc.value - ex) <= 4 * mc.stderr
    again = binary_hyps.error_probability_montecarlo(sched, 400_000, rng_seed=3)
    assert again == mc


def test_montecarlo_micro():
    mc = error_probability_montecarlo(MICRO, 1_000_000, rng_seed=1)
    assert abs(mc.value - MICRO_PE) <= 4 * mc.stderr


def test_hypothesis_set_means_shape(params):
    hyps = HypothesisSet.along(params, (0.0, 4e-4, 1e-3))
    lam = hyps.means(SamplingSchedule([0.1, 0.2]))
    assert lam.shape == (3, 2)
    assert lam[0, 0] == pytest.approx(8.23780269108365, rel=1e-12)
    assert lam[1, 0] == pytest.approx(40.8021038347066, rel=1e-12)
    assert hyps.subset([0, 2]).M == 2
