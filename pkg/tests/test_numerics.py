import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from flowmeter import numerics
from flowmeter.detector import closed_form_chernoff_s
from flowmeter.errors import BracketError, BvpNoConvergence


def test_find_root_linear():
    assert numerics.find_root(lambda x: x - 0.5, 0.0, 1.0) == pytest.approx(0.5, abs=1e-12)


def test_find_root_no_sign_change():
    with pytest.raises(BracketError):
        numerics.find_root(lambda x: x * x + 1, -1.0, 1.0)


def test_find_root_matches_closed_form_chernoff_s():
    a, b = 2.0, 1.0
    f = lambda s: a - b - a**s * b ** (1 - s) * math.log(a / b)
    s = numerics.find_root(f, 1e-9, 1 - 1e-9)
    assert s == pytest.approx(float(closed_form_chernoff_s(2.0)), abs=1e-10)
    assert s == pytest.approx(0.528766372944898, abs=1e-10)


def test_integrate_constant_and_empty():
    val, err = numerics.integrate(lambda x: np.ones_like(x), 0.0, 1.0)
    assert val == pytest.approx(1.0, abs=1e-14)
    assert numerics.integrate(lambda x: x, 2.0, 2.0) == (0.0, 0.0)


def test_integrate_diffusion_gaussian():
    # one axis of the free-space kernel: normal with variance 2 D tau
    sd = math.sqrt(2 * 1e-8 * 0.1)
    f = lambda x: np.exp(-x * x / (4e-8 * 0.1)) / math.sqrt(4 * math.pi * 1e-8 * 0.1)
    a, b = -3e-4, 5e-4
    val, _ = numerics.integrate(f, a, b, rtol=1e-13)
    ref = stats.norm.cdf(b, 0, sd) - stats.norm.cdf(a, 0, sd)
    assert val == pytest.approx(ref, abs=1e-10)


def test_gauss_legendre_rounds_up_panels():
    x, w = numerics.gauss_legendre(0.0, 2.0, 20)
    assert len(x) == 32
    assert w.sum() == pytest.approx(2.0, abs=1e-14)


def test_golden_section_quadratic():
    x, fx = numerics.golden_section(lambda x: (x - 0.3) ** 2, 0.0, 1.0, tol=1e-10)
    assert x == pytest.approx(0.3, abs=1e-8)


def test_golden_section_monotone_returns_endpoint():
    x, _ = numerics.golden_section(lambda x: x, 0.0, 1.0)
    assert x == 0.0


def test_simplex_linear_picks_vertex():
    c = np.array([0.2, 0.9, 0.4])
    w, val = numerics.optimize_simplex_grid(lambda w: float(c @ w), 3, 10)
    np.testing.assert_allclose(w, [0, 1, 0], atol=1e-12)
    assert val == pytest.approx(0.9)


def test_simplex_symmetric_concave_picks_barycenter():
    w, _ = numerics.optimize_simplex_grid(lambda w: -float(np.sum(w * w)), 3, 12)
    np.testing.assert_allclose(w, np.full(3, 1 / 3), atol=1e-6)


def test_simplex_lattice_size_and_sums():
    pts = numerics.simplex_lattice(3, 6)
    assert len(pts) == math.comb(6 + 2, 2)
    np.testing.assert_allclose(pts.sum(axis=1), 1.0, atol=1e-12)


def test_logsumexp_normalize():
    np.testing.assert_allclose(numerics.logsumexp_normalize(np.zeros(4)), 0.25)
    x = np.array([0.3, -1.0, 2.5])
    np.testing.assert_allclose(
        numerics.logsumexp_normalize(x), numerics.logsumexp_normalize(x + 123.0), atol=1e-15
    )
    p = numerics.logsumexp_normalize(np.array([-1e4, 0.0]))
    assert p[0] <= 1e-300 and p[1] == 1.0


def test_bvp_exponential_oracle():
    # b'' = c b with b'(-1) = b'(1) = -1 has b = -sinh(kx)/(k cosh k)
    c = 9.0
    k = math.sqrt(c)
    sol = numerics.solve_bvp(
        lambda x, y, p: c * y,
        lambda x, y, p: np.full_like(x, c),
        lambda x, y, p: np.zeros_like(x),
        -1.0,
        1.0,
        -1.0,
        -1.0,
        n=4001,
    )
    exact = -np.sinh(k * sol.x) / (k * math.cosh(k))
    np.testing.assert_allclose(sol.y, exact, atol=1e-6)
    assert sol.dy[0] == pytest.approx(-1.0, abs=1e-9)
    assert sol.dy[-1] == pytest.approx(-1.0, abs=1e-9)
    assert sol.residual < 1e-8


def test_bvp_no_convergence():
    with pytest.raises(BvpNoConvergence):
        numerics.solve_bvp(
            lambda x, y, p: np.exp(y) + 5.0,
            lambda x, y, p: np.exp(y),
            lambda x, y, p: np.zeros_like(x),
            0.0,
            1.0,
            3.0,
            -2.0,
            max_newton=1,
        )


def test_sorted_tuple_grid_counts():
    g = numerics.sorted_tuple_grid(0.0, 1.0, 3, 5)
    assert len(g) == math.comb(5 + 2, 3)
    assert np.all(np.diff(g, axis=1) >= 0)


def test_minimize_sorted_tuples_separable():
    f = lambda x: np.sum((x - 0.3) ** 2, axis=1)
    res = numerics.minimize_sorted_tuples(f, 0.0, 1.0, 2, 21, tol=1e-10)
    np.testing.assert_allclose(res.x, [0.3, 0.3], atol=1e-7)
    assert res.value == pytest.approx(float(f(res.x[None])[0]))


def test_minimize_sorted_tuples_deterministic():
    f = lambda x: np.sum(np.cos(7 * x) + x, axis=1)
    a = numerics.minimize_sorted_tuples(f, 0.0, 2.0, 2, 15)
    b = numerics.minimize_sorted_tuples(f, 0.0, 2.0, 2, 15)
    assert np.array_equal(a.x, b.x) and a.value == b.value


@settings(max_examples=60, deadline=None)
@given(
    st.floats(min_value=0.0, max_value=1.0, exclude_max=True),
    st.floats(min_value=0.0, max_value=500.0),
)
def test_poisson_quantile_matches_definition(u, lam):
    y = float(numerics.poisson_quantile(np.array([u]), np.array([lam]))[0])
    assert special.pdtr(y, lam) >= u
    if y > 0:
        assert special.pdtr(y - 1, lam) < u


def test_poisson_quantile_matches_scipy():
    rng = np.random.default_rng(3)
    u = rng.random(5000)
    lam = np.exp(rng.uniform(-5, 6, 5000))
    np.testing.assert_array_equal(numerics.poisson_quantile(u, lam), stats.poisson.ppf(u, lam))
