import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from graphcondense.data import make_dataset
from graphcondense.initfeat import (
    ClassBudget,
    derive_budget,
    init_features_kmeans,
    init_features_random,
    kmeans,
)


def brute_force_sse(points, m):
    """Minimum SSE over every partition of the points into m non-empty
    clusters (feasible for the tiny cases used here)."""
    n = len(points)
    best = np.inf
    for assign in itertools.product(range(m), repeat=n):
        if len(set(assign)) != m:
            continue
        assign = np.asarray(assign)
        sse = 0.0
        for k in range(m):
            grp = points[assign == k]
            sse += np.sum((grp - grp.mean(axis=0)) ** 2)
        best = min(best, sse)
    return best


def sse_of(points, assign, centroids):
    return float(np.sum((points - centroids[assign]) ** 2))


def dataset_with_features(features, labels, num_classes):
    n = len(labels)
    adj = sp.csr_matrix((n, n))
    return make_dataset(adj, features, labels, np.ones(n, bool), np.zeros(n, bool),
                        np.zeros(n, bool), num_classes)


def test_single_cluster_is_mean():
    pts = np.array([[0.0], [1.0], [5.0]])
    assign, centroids = kmeans(pts, 1, seed=0)
    assert set(assign) == {0}
    np.testing.assert_allclose(centroids, [[2.0]])


def test_separated_blobs_split_exactly():
    pts = np.array([[0.0], [0.1], [0.2], [10.0], [10.1]])
    assign, centroids = kmeans(pts, 2, seed=1)
    assert len(set(assign[:3])) == 1
    assert len(set(assign[3:])) == 1
    assert assign[0] != assign[3]
    assert abs(sse_of(pts, assign, centroids) - brute_force_sse(pts, 2)) < 1e-12


def test_m_equals_n_zero_sse():
    pts = np.random.default_rng(2).standard_normal((4, 3))
    assign, centroids = kmeans(pts, 4, seed=0)
    assert sorted(assign) == [0, 1, 2, 3]
    assert sse_of(pts, assign, centroids) < 1e-20


def test_m_larger_than_n_rejected():
    with pytest.raises(ValueError):
        kmeans(np.zeros((2, 1)), 3, seed=0)


@pytest.mark.parametrize("n,m,seed", [(6, 2, 0), (7, 3, 1), (8, 3, 2), (8, 2, 3),
                                      (5, 3, 4), (8, 3, 5)])
def test_kmeans_near_optimal_on_small_instances(n, m, seed):
    pts = np.random.default_rng(seed).standard_normal((n, 2))
    assign, centroids = kmeans(pts, m, seed=seed)
    got = sse_of(pts, assign, centroids)
    best = brute_force_sse(pts, m)
    assert got <= 1.05 * best + 1e-12


def test_budget_largest_remainder_with_floor():
    rng = np.random.default_rng(3)
    labels = np.array([0] * 70 + [1] * 25 + [2] * 5)
    ds = dataset_with_features(rng.standard_normal((100, 2)), labels, 3)
    budget = derive_budget(ds, 0.1)
    assert budget.counts == {0: 7, 1: 2, 2: 1}
    assert budget.total == 10

    # a tiny class still gets one node even when its quota rounds to zero
    budget_small = derive_budget(ds, 0.04)
    assert budget_small.counts[2] == 1


def test_budget_infeasible_ratio_rejected():
    labels = np.array([0] * 4 + [1] * 4)
    ds = dataset_with_features(np.zeros((8, 2)), labels, 2)
    with pytest.raises(ValueError):
        derive_budget(ds, 2.0)


def test_kmeans_init_rows_are_verbatim_members():
    rng = np.random.default_rng(4)
    labels = np.array([0] * 12 + [1] * 8)
    feats = rng.standard_normal((20, 3))
    ds = dataset_with_features(feats, labels, 2)
    budget = ClassBudget({0: 3, 1: 2}, 0.25)
    x0, y0 = init_features_kmeans(ds, budget, seed=0)
    assert np.array_equal(y0, [0, 0, 0, 1, 1])
    for row, cls in zip(x0, y0):
        members = feats[labels == cls]
        assert any(np.array_equal(row, m) for m in members)


def test_kmeans_init_full_class_budget_is_permutation():
    rng = np.random.default_rng(5)
    labels = np.array([0] * 4 + [1] * 3)
    feats = rng.standard_normal((7, 2))
    ds = dataset_with_features(feats, labels, 2)
    x0, y0 = init_features_kmeans(ds, ClassBudget({0: 4, 1: 3}, 1.0), seed=1)
    zero_rows = {tuple(r) for r in x0[y0 == 0]}
    assert zero_rows == {tuple(r) for r in feats[:4]}


def test_kmeans_init_separated_blobs_covers_both():
    feats = np.array([[0.0], [0.1], [0.2], [10.0], [10.1]])
    labels = np.zeros(5, dtype=np.int64)
    ds = dataset_with_features(feats, labels, 1)
    x0, _ = init_features_kmeans(ds, ClassBudget({0: 2}, 0.4), seed=2)
    lows = np.sum(x0 < 5.0)
    assert lows == 1  # one row from each blob


def test_kmeans_init_histogram_matches_budget():
    rng = np.random.default_rng(6)
    labels = np.repeat([0, 1, 2], [30, 20, 10])
    ds = dataset_with_features(rng.standard_normal((60, 4)), labels, 3)
    budget = derive_budget(ds, 0.2)
    _, y0 = init_features_kmeans(ds, budget, seed=3)
    hist = {c: int((y0 == c).sum()) for c in np.unique(y0)}
    assert hist == budget.counts


def test_random_init_membership_and_determinism():
    rng = np.random.default_rng(7)
    labels = np.array([0] * 10 + [1] * 10)
    feats = rng.standard_normal((20, 2))
    ds = dataset_with_features(feats, labels, 2)
    budget = ClassBudget({0: 10, 1: 2}, 0.6)
    x_a, y_a = init_features_random(ds, budget, seed=0)
    x_b, _ = init_features_random(ds, budget, seed=0)
    assert np.array_equal(x_a, x_b)
    # full-budget class comes back as the exact class set
    assert {tuple(r) for r in x_a[y_a == 0]} == {tuple(r) for r in feats[:10]}
    for row in x_a[y_a == 1]:
        assert any(np.array_equal(row, m) for m in feats[10:])


def test_class_smaller_than_budget_rejected():
    labels = np.array([0, 0, 1])
    ds = dataset_with_features(np.zeros((3, 2)), labels, 2)
    with pytest.raises(ValueError):
        init_features_kmeans(ds, ClassBudget({0: 2, 1: 2}, 1.0), seed=0)
    with pytest.raises(ValueError):
        init_features_random(ds, ClassBudget({0: 2, 1: 2}, 1.0), seed=0)
