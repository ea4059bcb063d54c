#!/usr/bin/env python3
"""
Tests de Metric: identidad entre la distancia exhaustiva y la rápida, afinidad auto-ajustada
"""
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from src.core.errors import AffinityError, DimensionError
from src.modules.dataio import category_stats
from src.modules.metric import build_affinity, distance_fast, distance_naive, pairwise_distances


def stats_of(*blocks):
    return [category_stats(np.asarray(b, dtype=np.float64)) for b in blocks]


class TestDistances:
    def test_singletons(self):
        assert distance_naive([[0.0, 0.0]], [[3.0, 4.0]]) == pytest.approx(5.0)
        a, b = stats_of([[0.0, 0.0]], [[3.0, 4.0]])
        assert distance_fast(a, b) == pytest.approx(5.0)

    def test_hand_enumeration(self):
        block = [[0.0], [2.0]]
        assert distance_naive(block, block) == pytest.approx(math.sqrt(2.0))
        s, = stats_of(block)
        assert distance_fast(s, s) == pytest.approx(math.sqrt(2.0))

    def test_identity_on_random_pairs(self):
        rng = np.random.default_rng(42)
        for trial in range(200):
            dim = [2, 16, 128][trial % 3]
            a = rng.normal(size=(rng.integers(5, 201), dim)) * rng.uniform(0.1, 3.0)
            b = rng.normal(loc=rng.uniform(-2, 2), size=(rng.integers(5, 201), dim))
            naive = distance_naive(a, b)
            fast = distance_fast(*stats_of(a, b))
            assert abs(fast - naive) / naive <= 1e-9

    def test_monotone_in_mean_gap(self):
        base = np.array([[0.0, 0.0], [0.0, 1.0]])
        values = [distance_fast(*stats_of(base, base + [gap, 0.0])) for gap in (0.0, 0.5, 1.0, 2.0)]
        assert all(x < y for x, y in zip(values, values[1:]))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            distance_naive([[0.0, 1.0]], [[0.0, 1.0, 2.0]])
        a, b = stats_of([[0.0, 1.0]], [[0.0, 1.0, 2.0]])
        with pytest.raises(DimensionError):
            distance_fast(a, b)

    def test_fast_is_much_faster(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(1000, 64)), rng.normal(size=(1000, 64))
        sa, sb = stats_of(a, b)
        naive_times, fast_times = [], []
        for _ in range(5):
            start = time.perf_counter()
            distance_naive(a, b)
            naive_times.append(time.perf_counter() - start)
            start = time.perf_counter()
            distance_fast(sa, sb)
            fast_times.append(time.perf_counter() - start)
        assert np.median(naive_times) >= 20 * np.median(fast_times)


class TestAffinity:
    def test_zero_distance_pair(self):
        aff = build_affinity(stats_of([[1.0]], [[1.0]]), tuning_k=1)
        np.testing.assert_array_equal(aff.values, np.ones((2, 2)))

    def test_three_points_hand_values(self):
        aff = build_affinity(stats_of([[0.0]], [[1.0]], [[3.0]]), tuning_k=1)
        np.testing.assert_allclose(aff.scales, [1.0, 1.0, 2.0])
        expected = np.array([
            [1.0, math.exp(-1.0), math.exp(-3.0 / math.sqrt(2.0))],
            [math.exp(-1.0), 1.0, math.exp(-2.0 / math.sqrt(2.0))],
            [math.exp(-3.0 / math.sqrt(2.0)), math.exp(-2.0 / math.sqrt(2.0)), 1.0],
        ])
        np.testing.assert_allclose(aff.values, expected, rtol=1e-12)

    def test_diagonal_distance_is_scaled_deviation(self):
        blocks = [[[0.0], [2.0]], [[5.0], [5.0], [8.0]]]
        aff = build_affinity(stats_of(*blocks), tuning_k=1)
        sigma = np.sqrt([s.variance_sq for s in stats_of(*blocks)])
        np.testing.assert_allclose(np.diag(aff.distances), math.sqrt(2.0) * sigma)

    def test_well_formed_on_random_sets(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(2, 20))
            blocks = [rng.normal(loc=rng.normal(size=3) * 4, size=(int(rng.integers(1, 8)), 3)) for _ in range(n)]
            stats = stats_of(*blocks)
            k = int(rng.integers(1, 9))
            aff = build_affinity(stats, tuning_k=k)
            A = aff.values
            np.testing.assert_array_equal(A, A.T)
            np.testing.assert_array_equal(np.diag(A), np.ones(n))
            off = A[~np.eye(n, dtype=bool)]
            assert np.all(off > 0) and np.all(off <= 1)
            assert np.all(aff.bandwidths > 0)

            perm = rng.permutation(n)
            permuted = build_affinity([stats[i] for i in perm], tuning_k=k)
            np.testing.assert_allclose(permuted.values, A[np.ix_(perm, perm)], rtol=1e-12)

    def test_tuning_k_too_large_uses_median(self):
        aff = build_affinity(stats_of([[0.0]], [[1.0]], [[3.0]]), tuning_k=5)
        np.testing.assert_allclose(aff.scales, [2.0, 2.0, 2.0])

    def test_all_identical_categories(self):
        aff = build_affinity(stats_of([[1.0, 1.0]], [[1.0, 1.0]], [[1.0, 1.0]]), tuning_k=1)
        np.testing.assert_array_equal(aff.values, np.ones((3, 3)))

    def test_needs_two_categories(self):
        with pytest.raises(AffinityError):
            build_affinity(stats_of([[0.0]]))

    def test_mean_metric_and_cost(self):
        stats = stats_of([[0.0], [2.0]], [[4.0], [6.0]])
        np.testing.assert_allclose(pairwise_distances(stats, "mean"), [[0.0, 4.0], [4.0, 0.0]])
        aff = build_affinity(stats, tuning_k=1, metric="mean")
        assert aff.metric == "mean"
        assert aff.construction_cost == {"stats": 2 * 4 * 1, "pairwise": 2 * 2 * 1}


if __name__ == "__main__":
    print("=" * 60)
    print("Testing Metric")
    print("=" * 60)
    sys.exit(pytest.main([__file__, "-q"]))
