import math

import numpy as np
import pytest

from btest.bench import BlobConfig, TestSetup, estimate_error_rates, sample_blobs
from btest.data import PairedSample, split_half
from btest.errors import ConfigError, SelectionError
from btest.kernels import KernelSpec
from btest.nulls import BTestConfig
from btest.selection import (
    SelectionStrategy,
    candidate_ratios,
    choose_kernel,
    select_kernel,
)


def shifted(rng, n, shift=1.0, d=2):
    return PairedSample.from_arrays(rng.normal(size=(n, d)), rng.normal(size=(n, d)) + shift)


def straight_line_ratio(sigma, s, b):
    k = lambda u, v: math.exp(-sum((ui - vi) ** 2 for ui, vi in zip(u, v)) / (2 * sigma * sigma))  # noqa: E731
    x, y = s.x.points.tolist(), s.y.points.tolist()
    values = []
    for start in range(0, (len(x) // b) * b, b):
        total = 0.0
        for i in range(start, start + b):
            for j in range(start, start + b):
                if i != j:
                    total += k(x[i], x[j]) + k(y[i], y[j]) - k(x[i], y[j]) - k(x[j], y[i])
        values.append(total / (b * (b - 1)))
    m = len(values)
    mean = sum(values) / m
    var = sum((v - mean) ** 2 for v in values) / (m - 1) / m
    return mean / (math.sqrt(var) + 1e-8)


def test_fixed_ignores_data():
    s = shifted(np.random.default_rng(0), 10)
    assert select_kernel(SelectionStrategy.fixed(1), s, 2) == KernelSpec(((1.0, 1.0),))


def test_median_forwards_pooled_bandwidth():
    s = PairedSample.from_arrays([[0.0]], [[2.0]])
    assert select_kernel(SelectionStrategy.median(), s, 2).sigmas == (2.0,)


@pytest.mark.parametrize("kwargs", [{"kind": "fixed", "sigma": 0.0}, {"kind": "fixed"}, {"kind": "other"}])
def test_strategy_validation(kwargs):
    with pytest.raises(ConfigError):
        SelectionStrategy(**kwargs)


@pytest.mark.parametrize("grid", [(), (1.0, -1.0)])
def test_maxratio_grid_validation(grid):
    with pytest.raises(ConfigError):
        SelectionStrategy.max_ratio(grid)


def test_single_candidate_grid():
    s = shifted(np.random.default_rng(1), 40)
    assert len(candidate_ratios([0.7], s, 4)) == 1
    assert select_kernel(SelectionStrategy.max_ratio([0.7]), s, 4).sigmas == (0.7,)


def test_duplicate_candidates_identical():
    s = shifted(np.random.default_rng(2), 40)
    a, b, c = candidate_ratios([0.5, 2.0, 0.5], s, 4)
    assert a == c and a != b


def test_ratios_match_straight_line_reimplementation():
    s = shifted(np.random.default_rng(3), 48, shift=0.5)
    grid = [0.25, 1.0, 4.0]
    for cand, sigma in zip(candidate_ratios(grid, s, 6), grid):
        assert cand.sigma == sigma
        assert cand.ratio == pytest.approx(straight_line_ratio(sigma, s, 6), rel=1e-10)


def test_argmax_invariant_to_common_kernel_scale():
    rng = np.random.default_rng(4)
    grid = [2.0**k for k in range(-4, 5)]
    for _ in range(5):
        s = shifted(rng, 64, shift=0.4)
        base = candidate_ratios(grid, s, 8)
        scaled = candidate_ratios(grid, s, 8, weight=7.5)
        for u, v in zip(base, scaled):
            assert v.statistic == pytest.approx(7.5 * u.statistic, rel=1e-12, abs=1e-300)
            assert v.stddev == pytest.approx(7.5 * u.stddev, rel=1e-12, abs=1e-300)
        best = lambda cs: max(cs, key=lambda c: (c.ratio, -c.sigma)).sigma  # noqa: E731
        assert best(base) == best(scaled)


def test_degenerate_candidates_flagged():
    # At tiny bandwidths every off-diagonal kernel value underflows to 0.
    s = shifted(np.random.default_rng(5), 20)
    cand = candidate_ratios([1e-4, 1.0], s, 4)
    assert cand[0].degenerate and cand[0].ratio == 0.0
    assert not cand[1].degenerate
    with pytest.raises(SelectionError):
        select_kernel(SelectionStrategy.max_ratio([1e-4, 1e-5]), s, 4)


def test_ties_break_to_smaller_sigma():
    s = shifted(np.random.default_rng(6), 20)
    assert select_kernel(SelectionStrategy.max_ratio([1e-5, 1e-4, 1.0, 1.0]), s, 4).sigmas == (1.0,)
    pts = np.random.default_rng(7).normal(size=(20, 2))
    same = PairedSample.from_arrays(pts, pts + 1e-3)
    cands = candidate_ratios([3.0, 3.0], same, 4)
    assert cands[0].ratio == cands[1].ratio


def test_selection_never_reads_test_split():
    rng = np.random.default_rng(8)
    n = 60
    x = np.column_stack([np.arange(n, dtype=float), rng.normal(size=n)])
    y = x + rng.normal(0.5, 1.0, size=(n, 2))
    s = PairedSample.from_arrays(x, y)
    strategy = SelectionStrategy.max_ratio([0.25, 1.0, 4.0, 16.0])
    kernel, test_sample = choose_kernel(strategy, s, lambda m: 5, seed=3)
    train, held_out = split_half(s, 3)
    assert kernel == select_kernel(strategy, train, 5)
    np.testing.assert_array_equal(test_sample.x.points, held_out.x.points)

    test_rows = np.isin(x[:, 0], held_out.x.points[:, 0])
    y2 = y.copy()
    y2[test_rows] += rng.normal(0, 50, size=(test_rows.sum(), 2))
    kernel2, test2 = choose_kernel(strategy, PairedSample.from_arrays(x, y2), lambda m: 5, seed=3)
    assert kernel2 == kernel
    assert not np.array_equal(test2.y.points, test_sample.y.points)


def test_maxratio_picks_best_and_is_no_worse_on_fresh_data():
    cfg = BlobConfig(seed=21)
    grid = [0.01, 1.0, 100.0]
    n = 1200
    train = PairedSample(sample_blobs(cfg, n, "P", 1), sample_blobs(cfg, n, "Q", 2))
    b = 35
    cands = candidate_ratios(grid, train, b)
    chosen = select_kernel(SelectionStrategy.max_ratio(grid), train, b).sigmas[0]
    assert chosen == 1.0
    assert all(c.ratio < cands[1].ratio for c in cands if c.sigma != chosen)
    rates = {
        sigma: estimate_error_rates(
            cfg, TestSetup(BTestConfig(block_size=b), SelectionStrategy.fixed(sigma)), n, 100, which=("type2",)
        )
        for sigma in grid
    }
    for sigma in grid:
        assert rates[chosen].type2 <= rates[sigma].type2 + 2 * max(rates[sigma].type2_stderr, 0.01)



def test_median_kernel_loses_power_on_blobs():
    cfg = BlobConfig()
    setups = {
        "median": TestSetup(BTestConfig(gamma=0.5), SelectionStrategy.median(max_pairs=20_000)),
        "fixed": TestSetup(BTestConfig(gamma=0.5), SelectionStrategy.fixed(1.0)),
    }
    rates = {k: estimate_error_rates(cfg, v, 2000, 500, which=("type2",)) for k, v in setups.items()}
    gap = rates["median"].type2 - rates["fixed"].type2
    assert gap > 2 * math.hypot(rates["median"].type2_stderr, rates["fixed"].type2_stderr)
