from __future__ import annotations

import numpy as np
import pytest

from conftest import dataset_from_arrays
from oracles import bf_ball, bf_kth_nn_distance

from marginforge.data import SparseVector
from marginforge.errors import ConfigError
from marginforge.neighbors import NeighborIndex, kth_nn_distance, median_radius, points_in_ball


def line_points(*values):
    return [SparseVector.from_dense([v]) for v in values]


class TestKthNN:
    def test_line_examples(self):
        index = NeighborIndex(line_points(0.0, 1.0, 2.0, 3.0))
        assert kth_nn_distance(index, 0, 1) == 1.0
        assert kth_nn_distance(index, 0, 2) == 2.0

    def test_k_out_of_range(self):
        index = NeighborIndex(line_points(0.0, 1.0))
        with pytest.raises(ConfigError):
            kth_nn_distance(index, 0, 2)
        with pytest.raises(ConfigError):
            kth_nn_distance(index, 0, 0)

    def test_monotone_in_k(self, rng):
        X = rng.normal(size=(30, 4))
        index = NeighborIndex([SparseVector.from_dense(r) for r in X])
        for j in (0, 7, 29):
            distances = [index.kth_nn_distance(j, k) for k in range(1, 30)]
            assert all(a <= b for a, b in zip(distances, distances[1:]))

    def test_matches_bruteforce(self, rng):
        for _ in range(15):
            n = int(rng.integers(5, 60))
            d = int(rng.integers(1, 8))
            X = rng.normal(size=(n, d))
            index = NeighborIndex([SparseVector.from_dense(r) for r in X])
            for j in rng.integers(0, n, size=3):
                for k in (1, max(1, n // 3), n - 1):
                    assert index.kth_nn_distance(int(j), k) == bf_kth_nn_distance(X, int(j), k)

    def test_duplicate_points_tie_by_id(self):
        index = NeighborIndex(line_points(0.0, 0.0, 0.0, 5.0))
        assert index.kth_nn_distance(0, 1) == 0.0
        assert index.kth_nn_distance(0, 2) == 0.0
        assert index.kth_nn_distance(0, 3) == 5.0
        assert index.k_nearest(3, 2) == [0, 1]


class TestMedian:
    def test_odd(self):
        assert median_radius([1.0, 2.0, 3.0]) == 2.0

    def test_even(self):
        assert median_radius([1.0, 2.0, 3.0, 4.0]) == 2.5

    def test_singleton(self):
        assert median_radius([5.0]) == 5.0

    def test_empty_errors(self):
        with pytest.raises(ConfigError):
            median_radius([])


class TestBall:
    DS = dataset_from_arrays([[0.0], [1.0], [2.0], [5.0]], [1, 1, -1, -1])

    def test_inclusive_radius(self):
        assert points_in_ball(self.DS, set(), SparseVector(()), 2.0) == [0, 1, 2]

    def test_exclusion(self):
        assert points_in_ball(self.DS, {0}, SparseVector(()), 2.0) == [1, 2]

    def test_empty_result(self):
        assert points_in_ball(self.DS, set(), SparseVector(((1, 100.0),)), 1.0) == []

    def test_radius_must_be_positive(self):
        with pytest.raises(ConfigError):
            points_in_ball(self.DS, set(), SparseVector(()), 0.0)

    def test_matches_bruteforce(self, rng):
        for _ in range(15):
            n = int(rng.integers(5, 80))
            d = int(rng.integers(1, 8))
            X = rng.normal(size=(n, d))
            ds = dataset_from_arrays(X, [1] * n)
            j = int(rng.integers(0, n))
            r = float(rng.uniform(0.1, 3.0))
            exclude = {int(t) for t in rng.integers(0, n, size=3)}
            ours = points_in_ball(ds, exclude, ds.samples[j], r)
            assert ours == bf_ball(X, exclude, X[j], r)

    def test_kth_ball_contains_k_points(self, rng):
        X = rng.normal(size=(40, 3))
        ds = dataset_from_arrays(X, [1] * 40)
        index = NeighborIndex(list(ds.samples))
        for j in (0, 10, 39):
            for k in (1, 5, 20):
                rho = index.kth_nn_distance(j, k)
                if rho == 0.0:
                    continue
                inside = points_in_ball(ds, set(), ds.samples[j], rho)
                assert len([i for i in inside if i != j]) >= k
