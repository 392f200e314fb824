import math

import numpy as np
import pytest

from adahaar.dyadic import CountsPyramid, build_pyramid
from adahaar.errors import ValidationError
from adahaar.selector import (
    SelectionMap,
    adaptive_estimate,
    estimate_at,
    lepski_select,
    select_all,
    select_and_estimate,
)

from oracles import SortedSampleCounter, brute_force_select

BIG = 1e300  # larger than any test statistic that can arise here


def random_pyramid(rng, j_max=None):
    j_max = int(rng.integers(0, 6)) if j_max is None else j_max
    finest = rng.integers(0, 12, size=2**j_max)
    n = max(int(finest.sum() + rng.integers(0, 5)), 2)
    return CountsPyramid.from_finest(n, finest, n_dropped=n - int(finest.sum()), d=1e-12)


def test_case_from_independent_scan():
    # 8-point sample scanned exhaustively with an independent script; the
    # selected levels below were frozen from that scan.
    sample = [0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.6, 0.9]
    p = build_pyramid(sample, 3, d=1e-6)
    sel = select_all(p, 0, 1.0)
    assert list(sel.jhat) == [1, 1, 0, 0, 0, 0, 0, 0]
    F = p.chain_matrix()
    for m in range(8):
        assert sel.jhat[m] == brute_force_select(F[m], 8, 0, 3, 1.0)


def test_huge_threshold_returns_start_level():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = random_pyramid(rng)
        for J in range(p.j_max + 1):
            assert np.all(select_all(p, J, BIG).jhat == J)


def test_zero_threshold_rejects_any_difference():
    # unequal children at level 1; all chain estimates distinct -> finest level
    p = CountsPyramid.from_finest(8, np.array([5, 1, 1, 1]), d=1e-12)
    assert lepski_select(p, 0, 0, 0.0) == p.j_max


def test_zero_threshold_accepts_exact_halving():
    p = CountsPyramid.from_finest(8, np.array([2, 2, 2, 2]), d=1e-12)
    assert np.all(select_all(p, 0, 0.0).jhat == 0)


def test_zero_count_chain_selects_immediately():
    # bins with no data anywhere above level 1: statistic is 0 along the chain,
    # so even a zero threshold stops at the first all-zero level
    finest = np.array([0, 0, 3, 5])
    p = CountsPyramid.from_finest(8, finest, d=1e-12)
    assert lepski_select(p, 1, 0, 0.0) == 1
    assert lepski_select(p, 0, 0, 0.0) == 1  # level 0 fails, the zero chain passes


def test_matches_brute_force_on_random_pyramids():
    rng = np.random.default_rng(42)
    for _ in range(300):
        p = random_pyramid(rng)
        F = p.chain_matrix()
        J = int(rng.integers(0, p.j_max + 1))
        zeta = float(rng.choice([0.0, 0.05, 0.3, 1.0, 2.5, 8.0]))
        sel = select_all(p, J, zeta)
        for m in range(2**p.j_max):
            assert sel.jhat[m] == brute_force_select(F[m], p.n, J, p.j_max, zeta)


def test_uniform_counts_select_start_level():
    p = CountsPyramid.from_finest(64, np.full(8, 8), d=1e-12)
    for zeta in (0.01, 1.0, 5.0):
        sel, fhat = select_and_estimate(p, 0, zeta)
        assert np.all(sel.jhat == 0)
        assert np.all(fhat == 1.0)


def test_point_mass_with_zero_threshold_hits_finest():
    finest = np.zeros(8, dtype=np.int64)
    finest[3] = 9
    p = CountsPyramid.from_finest(9, finest, d=1e-12)
    assert lepski_select(p, 0, 3, 0.0) == 3


def test_adaptive_estimate_huge_threshold_is_linear():
    rng = np.random.default_rng(5)
    p = random_pyramid(rng, j_max=4)
    F = p.chain_matrix()
    for J in (0, 2):
        assert np.array_equal(adaptive_estimate(p, J, BIG), F[:, J])


def test_adaptive_estimate_matches_naive_pointwise_recomputation():
    rng = np.random.default_rng(7)
    n, j_max = 4096, 5
    # cusp-shaped sample: inverse CDF of a sqrt-cusp pushforward
    u = rng.random(n)
    sample = np.clip(0.5 + np.sign(u - 0.5) * np.abs(u - 0.5) ** (2 / 3), 1e-6, 1.0)
    p = build_pyramid(sample, j_max)
    zeta = 1.5
    fhat = adaptive_estimate(p, 0, zeta)
    grid = (np.arange(10**4) + 0.5) / 10**4
    vals = estimate_at(p, fhat, grid)
    counter = SortedSampleCounter(sample.tolist())
    naive = np.array([counter.adaptive_estimate(j_max, 0, zeta, float(x)) for x in grid])
    assert np.array_equal(vals, naive)


def test_step_function_property():
    rng = np.random.default_rng(8)
    p = random_pyramid(rng, j_max=3)
    fhat = adaptive_estimate(p, 0, 0.7)
    for m in range(8):
        lo, hi = math.ldexp(m, -3), math.ldexp(m + 1, -3)
        pts = np.linspace(lo + 1e-9, hi, 7)
        assert np.all(estimate_at(p, fhat, pts) == fhat[m])


def test_monotone_in_zeta():
    rng = np.random.default_rng(12)
    for _ in range(60):
        p = random_pyramid(rng)
        prev = None
        for z in np.sort(rng.random(5) * 6):
            jh = select_all(p, 0, float(z)).jhat
            if prev is not None:
                assert np.all(jh <= prev)
            prev = jh


def test_start_level_contract():
    rng = np.random.default_rng(9)
    for _ in range(60):
        p = random_pyramid(rng)
        zeta = float(rng.random() * 3)
        F = p.chain_matrix()
        for J in range(p.j_max + 1):
            jh = select_all(p, J, zeta).jhat
            assert np.all(jh >= J)
            for m in range(2**p.j_max):
                assert jh[m] == brute_force_select(F[m], p.n, J, p.j_max, zeta)


def test_permutation_invariance():
    rng = np.random.default_rng(21)
    xs = rng.random(200)
    p1 = build_pyramid(xs, 3, d=1e-9)
    p2 = build_pyramid(xs[::-1], 3, d=1e-9)
    s1, f1 = select_and_estimate(p1, 0, 1.2)
    s2, f2 = select_and_estimate(p2, 0, 1.2)
    assert np.array_equal(s1.jhat, s2.jhat)
    assert np.array_equal(f1, f2)


def test_argument_validation():
    p = CountsPyramid.from_finest(8, np.array([2, 2, 2, 2]), d=1e-12)
    with pytest.raises(ValidationError):
        select_all(p, 5, 1.0)
    with pytest.raises(ValidationError):
        select_all(p, 0, -0.5)
    with pytest.raises(ValidationError):
        lepski_select(p, 0, 4, 1.0)
    with pytest.raises(ValidationError):
        SelectionMap(2, 3, np.array([1, 1, 2, 3, 3, 3, 3, 3]))
