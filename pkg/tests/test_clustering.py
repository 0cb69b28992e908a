import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uavcov.clustering import inertia_of, kmeans, lloyd_step


def brute_force_2means(points):
    """Optimal 2-means inertia by enumerating every non-trivial bipartition."""
    n = len(points)
    best = np.inf
    for bits in itertools.product([0, 1], repeat=n - 1):
        labels = np.array((0,) + bits)  # first point pinned to cluster 0
        if labels.min() == labels.max():
            continue
        total = 0.0
        for j in (0, 1):
            grp = points[labels == j]
            total += float(np.sum((grp - grp.mean(axis=0)) ** 2))
        best = min(best, total)
    return best


def test_four_point_example():
    pts = np.array([(0, 0), (0, 2), (10, 0), (10, 2)], dtype=float)
    assert brute_force_2means(pts) == 4.0
    res = kmeans(pts, 2, np.random.default_rng(0))
    assert sorted(map(tuple, res.centroids)) == [(0.0, 1.0), (10.0, 1.0)]
    assert res.inertia == 4.0


def test_single_cluster_is_mean():
    pts = np.random.default_rng(1).uniform(0, 100, (17, 2))
    res = kmeans(pts, 1, np.random.default_rng(0))
    np.testing.assert_allclose(res.centroids[0], pts.mean(axis=0))
    assert np.all(res.labels == 0)
    assert res.sizes.tolist() == [17]


def test_k_equals_n_gives_zero_inertia():
    pts = np.random.default_rng(2).uniform(0, 100, (9, 2))
    res = kmeans(pts, 9, np.random.default_rng(0))
    assert res.inertia == 0.0
    np.testing.assert_allclose(np.sort(res.centroids, axis=0), np.sort(pts, axis=0))


def test_k_larger_than_n_rejected():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 4, np.random.default_rng(0))


def test_duplicate_points_still_fill_every_cluster():
    pts = np.ones((6, 2))
    res = kmeans(pts, 3, np.random.default_rng(0))
    assert res.sizes.min() >= 1 and res.sizes.sum() == 6
    assert res.inertia == 0.0


def test_assignment_invariants():
    pts = np.random.default_rng(3).uniform(0, 1e4, (60, 2))
    res = kmeans(pts, 7, np.random.default_rng(4))
    assert np.all((res.labels >= 0) & (res.labels < 7))
    assert res.sizes.tolist() == np.bincount(res.labels, minlength=7).tolist()
    assert res.sizes.sum() == 60 and res.sizes.min() >= 1
    assert res.inertia == pytest.approx(inertia_of(pts, res.labels, res.centroids), rel=1e-6)
    a = res.indicator()
    assert np.all(a.sum(axis=1) == 1)


def test_deterministic_given_seed():
    pts = np.random.default_rng(5).uniform(0, 1e4, (40, 2))
    a = kmeans(pts, 5, np.random.default_rng(9))
    b = kmeans(pts, 5, np.random.default_rng(9))
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.centroids, b.centroids)


def test_lloyd_fixed_point():
    pts = np.array([(0, 0), (0, 2), (10, 0), (10, 2)], dtype=float)
    cents = np.array([(0, 1), (10, 1)], dtype=float)
    labels, new, inertia = lloyd_step(pts, cents)
    np.testing.assert_array_equal(new, cents)
    assert inertia == 4.0
    assert lloyd_step(pts, new)[2] == inertia


def test_lloyd_tie_goes_to_lower_index():
    labels, _, _ = lloyd_step([(5.0, 0.0)], [(0.0, 0.0), (10.0, 0.0)])
    assert labels[0] == 0


def test_lloyd_step_decreases_inertia():
    rng = np.random.default_rng(6)
    pts = rng.uniform(0, 10, (20, 2))
    cents = rng.uniform(0, 10, (3, 2))
    labels, new, before = lloyd_step(pts, cents)
    assert before == pytest.approx(inertia_of(pts, labels, cents))
    after = lloyd_step(pts, new)[2]
    assert after <= before + 1e-12


def test_kmeans_beats_random_assignments():
    rng = np.random.default_rng(7)
    pts = rng.uniform(0, 1e4, (30, 2))
    res = kmeans(pts, 5, np.random.default_rng(8))
    for _ in range(1000):
        labels = rng.integers(0, 5, 30)
        cents = np.array([pts[labels == j].mean(axis=0) if np.any(labels == j) else pts[0]
                          for j in range(5)])
        assert res.inertia <= inertia_of(pts, labels, cents) + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_small_instances_reach_global_optimum(n, seed):
    pts = np.random.default_rng(seed).uniform(0, 100, (n, 2))
    res = kmeans(pts, 2, np.random.default_rng(seed + 1), restarts=10, tol=0.0)
    assert res.inertia == pytest.approx(brute_force_2means(pts), rel=1e-9)
