"""Shared numeric kernels: root bracketing, quadrature, simplex search, BVPs.

Every routine here is deterministic: identical inputs give bit-identical
outputs, so figure regressions built on top of them are reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, sparse, special
from scipy.sparse import linalg as splinalg

from .errors import BracketError, BvpNoConvergence

_GL_ORDER = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)


def find_root(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-10,
    rtol: float = 4 * np.finfo(float).eps,
    maxiter: int = 200,
) -> float:
    """Root of ``f`` inside ``[a, b]`` by Brent's bisection/secant hybrid.

    Raises BracketError when ``f(a)`` and ``f(b)`` share a strict sign.
    """
    fa, fb = f(a), f(b)
    if fa == 0.0:
        return float(a)
    if fb == 0.0:
        return float(b)
    if np.sign(fa) == np.sign(fb):
        raise BracketError(f"no sign change on [{a}, {b}]: f(a)={fa}, f(b)={fb}")
    return float(optimize.brentq(f, a, b, xtol=tol, rtol=rtol, maxiter=maxiter))


def gauss_legendre(a: float, b: float, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on ``[a, b]``.

    ``n_nodes`` is rounded up to a multiple of the per-panel order (16).
    """
    panels = max(1, -(-n_nodes // _GL_ORDER))
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return x, w


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    n_nodes: int = 256,
    rtol: float = 1e-8,
    max_nodes: int = 1 << 16,
) -> tuple[float, float]:
    """Integrate a vectorised ``f`` over ``[a, b]``, doubling panels until stable.

    Returns ``(value, error_estimate)`` where the error estimate is the change
    between the last two refinements.
    """
    if a == b:
        return 0.0, 0.0
    x, w = gauss_legendre(a, b, n_nodes)
    prev = float(np.dot(w, f(x)))
    n = len(x)
    while True:
        n *= 2
        x, w = gauss_legendre(a, b, n)
        val = float(np.dot(w, f(x)))
        err = abs(val - prev)
        if err <= rtol * abs(val) or n >= max_nodes:
            return val, err
        prev = val


_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def golden_section(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-9,
    maxiter: int = 200,
) -> tuple[float, float]:
    """Minimise a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``.

    The returned point is the best one evaluated, endpoints included, so a
    monotone ``f`` yields the better endpoint.
    """
    if b < a:
        a, b = b, a
    best_x, best_f = a, f(a)
    fb = f(b)
    if fb < best_f:
        best_x, best_f = b, fb
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    for x, fx in ((c, fc), (d, fd)):
        if fx < best_f:
            best_x, best_f = x, fx
    return float(best_x), float(best_f)


def sorted_tuple_grid(lo: float, hi: float, L: int, points: int) -> np.ndarray:
    """All non-decreasing L-tuples drawn from a uniform grid of ``points`` nodes."""
    nodes = np.linspace(lo, hi, points)
    idx = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations_with_replacement(range(points), L)),
        dtype=np.int64,
    ).reshape(-1, L)
    return nodes[idx]


@dataclass(frozen=True)
class TupleSearchResult:
    x: np.ndarray
    value: float
    grid_ties: np.ndarray
    evaluations: int


def _box_span(x: np.ndarray, e: np.ndarray, lo: float, hi: float) -> tuple[float, float]:
    """Largest backward and forward steps along ``e`` keeping ``x`` in the box."""
    pos, neg = e > 0, e < 0
    up = np.concatenate([(hi - x[pos]) / e[pos], (x[neg] - lo) / -e[neg]])
    dn = np.concatenate([(x[pos] - lo) / e[pos], (hi - x[neg]) / -e[neg]])
    return float(dn.min(initial=np.inf)), float(up.min(initial=np.inf))


def minimize_sorted_tuples(
    f_batch: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    L: int,
    points: int,
    tol: float = 1e-9,
    seeds: np.ndarray | None = None,
    top_k: int = 3,
    max_sweeps: int = 60,
    chunk: int = 20000,
) -> TupleSearchResult:
    """Minimise a permutation-invariant objective over ``[lo, hi]^L``.

    ``f_batch`` maps an ``(N, L)`` array of tuples to ``N`` values. Without
    ``seeds`` a sorted-tuple grid is scanned and the ``top_k`` best grid
    points seed the refinement; each seed is then polished by cyclic
    coordinate-wise golden-section search in a bracket of one grid step.
    Each sweep also searches along the common shift of all instants and
    along the contraction of every adjacent pair, since kinks of lattice
    objectives can trap a purely coordinate-wise search off the diagonal.
    """
    step = (hi - lo) / max(points - 1, 1)
    evals = 0
    ties = np.empty((0, L))
    if seeds is None:
        grid = sorted_tuple_grid(lo, hi, L, points)
        vals = np.concatenate([f_batch(grid[i : i + chunk]) for i in range(0, len(grid), chunk)])
        evals += len(grid)
        finite = np.where(np.isfinite(vals), vals, np.inf)
        best = float(np.min(finite))
        ties = grid[finite <= best + 1e-12 * abs(best)]
        if L == 1:
            # keep local minima only so distinct basins are explored
            v = finite
            left = np.r_[np.inf, v[:-1]]
            right = np.r_[v[1:], np.inf]
            cand = np.flatnonzero((v <= left) & (v <= right))
            order = cand[np.argsort(v[cand], kind="stable")]
        else:
            order = np.argsort(finite, kind="stable")
        seeds = grid[order[:top_k]]
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))

    def f1(x: np.ndarray) -> float:
        return float(f_batch(x[None, :])[0])

    directions = []
    if L > 1:
        directions.append(np.ones(L))
        for l in range(L - 1):
            e = np.zeros(L)
            e[l], e[l + 1] = 1.0, -1.0
            directions.append(e)

    best_x, best_f = None, np.inf
    for seed in seeds:
        x = np.sort(seed.copy())
        fx = f1(x)
        evals += 1
        for _ in range(max_sweeps):
            x_old = x.copy()
            for l in range(L):
                def g(s: float, l: int = l) -> float:
                    y = x.copy()
                    y[l] = s
                    return f1(y)

                a, b = max(lo, x[l] - step), min(hi, x[l] + step)
                s, fs = golden_section(g, a, b, tol)
                evals += 40
                if fs < fx:
                    x[l], fx = s, fs
            for e in directions:
                dn, up = _box_span(x, e, lo, hi)
                a, b = -min(step, dn), min(step, up)
                if b - a <= tol:
                    continue
                s, fs = golden_section(lambda s, e=e: f1(x + s * e), a, b, tol)
                evals += 40
                if fs < fx:
                    x, fx = np.clip(x + s * e, lo, hi), fs
            x = np.sort(x)
            if np.max(np.abs(x - x_old)) <= tol:
                break
        x = np.sort(x)
        fx = f1(x)
        if fx < best_f:
            best_x, best_f = x, fx
    return TupleSearchResult(best_x, best_f, ties, evals)


def poisson_quantile(u: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Smallest integer ``y`` with ``P(Y <= y) >= u`` for ``Y ~ Poisson(lam)``.

    Starts from a skew-corrected normal quantile and walks to the exact
    answer with the regularised incomplete gamma CDF, which is far cheaper
    than inverting the CDF from scratch for every draw.
    """
    u, lam = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(lam, dtype=float))
    with np.errstate(invalid="ignore", divide="ignore"):
        z = special.ndtri(u)
        y = np.floor(lam + np.sqrt(lam) * z + (z * z - 1) / 6)
    y = np.clip(np.nan_to_num(y, nan=0.0, posinf=0.0, neginf=0.0), 0, None).ravel()
    uf, lf = u.ravel(), lam.ravel()
    idx = np.flatnonzero(special.pdtr(y, lf) < uf)
    while idx.size:
        y[idx] += 1
        idx = idx[special.pdtr(y[idx], lf[idx]) < uf[idx]]
    idx = np.flatnonzero(y > 0)
    idx = idx[special.pdtr(y[idx] - 1, lf[idx]) >= uf[idx]]
    while idx.size:
        y[idx] -= 1
        idx = idx[y[idx] > 0]
        idx = idx[special.pdtr(y[idx] - 1, lf[idx]) >= uf[idx]]
    y = y.reshape(u.shape)
    return y


def logsumexp_normalize(values: np.ndarray) -> np.ndarray:
    """Exponentiate after shifting by the maximum and normalise to sum one."""
    values = np.asarray(values, dtype=float)
    z = np.exp(values - np.max(values))
    return z / z.sum()


def simplex_lattice(k: int, resolution: int) -> np.ndarray:
    """All points of the simplex with coordinates in multiples of 1/resolution."""
    pts = []
    for bars in itertools.combinations(range(resolution + k - 1), k - 1):
        parts = np.diff((-1,) + bars + (resolution + k - 1,)) - 1
        pts.append(parts)
    return np.asarray(pts, dtype=float) / resolution


def optimize_simplex_grid(
    g: Callable[[np.ndarray], float],
    k: int,
    resolution: int = 40,
    polish_tol: float = 1e-9,
) -> tuple[np.ndarray, float]:
    """Maximise ``g`` over the probability simplex of dimension ``k``.

    Exhaustive lattice search followed by a pairwise mass-transfer polish with
    geometrically shrinking steps.
    """
    if k == 1:
        w = np.ones(1)
        return w, float(g(w))
    lattice = simplex_lattice(k, resolution)
    vals = np.array([g(p) for p in lattice])
    best = int(np.argmax(vals))
    w, val = lattice[best].copy(), float(vals[best])

    step = 1.0 / resolution
    while step > polish_tol:
        improved = False
        for i, j in itertools.permutations(range(k), 2):
            delta = min(step, w[j])
            if delta <= 0:
                continue
            trial = w.copy()
            trial[i] += delta
            trial[j] -= delta
            tv = float(g(trial))
            if tv > val:
                w, val, improved = trial, tv, True
        if not improved:
            step *= 0.5
    w = np.clip(w, 0.0, None)
    return w / w.sum(), val


@dataclass(frozen=True)
class BvpSolution:
    x: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    residual: float
    iterations: int


def solve_bvp(
    rhs: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    d_rhs_dy: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    d_rhs_ddy: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    a: float,
    b: float,
    slope_a: float,
    slope_b: float,
    n: int = 2001,
    tol: float = 1e-8,
    max_newton: int = 25,
) -> BvpSolution:
    """Solve ``y'' = rhs(x, y, y')`` with Neumann data ``y'(a)``, ``y'(b)``.

    Second-order finite-difference collocation on a uniform grid; the
    boundary slopes use one-sided second-order stencils. The unknowns are
    solved on the unit interval, so the residual tolerance is scale-free.
    """
    if n < 5:
        raise ValueError("need at least 5 grid points")
    span = b - a
    u = np.linspace(0.0, 1.0, n)
    x = a + span * u
    h = u[1] - u[0]
    y = np.zeros(n)
    s2 = span * span

    def residual(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dy = np.empty(n)
        dy[1:-1] = (y[2:] - y[:-2]) / (2 * h)
        dy[0] = (-3 * y[0] + 4 * y[1] - y[2]) / (2 * h)
        dy[-1] = (3 * y[-1] - 4 * y[-2] + y[-3]) / (2 * h)
        res = np.empty(n)
        d2 = (y[2:] - 2 * y[1:-1] + y[:-2]) / (h * h)
        res[1:-1] = d2 - s2 * rhs(x[1:-1], y[1:-1], dy[1:-1] / span)
        res[0] = dy[0] - span * slope_a
        res[-1] = dy[-1] - span * slope_b
        return res, dy

    for it in range(1, max_newton + 1):
        res, dy = residual(y)
        xi, yi, pi = x[1:-1], y[1:-1], dy[1:-1] / span
        fy = s2 * d_rhs_dy(xi, yi, pi)
        fp = span * d_rhs_ddy(xi, yi, pi)
        rows = np.arange(1, n - 1)
        lower = 1 / (h * h) + fp / (2 * h)
        diag = -2 / (h * h) - fy
        upper = 1 / (h * h) - fp / (2 * h)
        r_idx = np.concatenate([rows, rows, rows, [0, 0, 0, n - 1, n - 1, n - 1]])
        c_idx = np.concatenate([rows - 1, rows, rows + 1, [0, 1, 2, n - 1, n - 2, n - 3]])
        vals = np.concatenate(
            [
                lower,
                diag,
                upper,
                np.array([-3, 4, -1]) / (2 * h),
                np.array([3, -4, 1]) / (2 * h),
            ]
        )
        jac = sparse.csc_matrix((vals, (r_idx, c_idx)), shape=(n, n))
        step = splinalg.spsolve(jac, -res)
        y = y + step
        res, dy = residual(y)
        scale = 1.0 + np.max(np.abs(s2 * rhs(xi, y[1:-1], dy[1:-1] / span)))
        rnorm = float(np.max(np.abs(res)) / scale)
        if rnorm < tol and np.max(np.abs(step)) <= tol * (1.0 + np.max(np.abs(y))):
            return BvpSolution(x, y, dy / span, rnorm, it)
    raise BvpNoConvergence(f"Newton did not converge in {max_newton} steps (residual {rnorm:.3e})")
