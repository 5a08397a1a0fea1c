"""Synthetic feature initialization.

Per class, the training features are split into as many sub-clusters as
that class has synthetic nodes, and one member row is sampled uniformly
from each sub-cluster; every synthetic row is therefore a verbatim copy of
an original row of the same class.  A plain random-sampling initializer is
the baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GraphDataset


@dataclass(frozen=True)
class ClassBudget:
    """Per-class synthetic node counts."""
    counts: dict          # class id -> M_c, every training class present
    ratio: float

    @property
    def total(self) -> int:
        return int(np.sum(list(self.counts.values())))


def derive_budget(dataset: GraphDataset, ratio: float) -> ClassBudget:
    """Class counts proportional to the training-label distribution.

    Largest-remainder rounding of ratio * n_labeled, then a >=1 floor per
    class (the floor may push the total above the rounded target).
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    train_labels = dataset.labels[dataset.train_mask]
    n_labeled = train_labels.shape[0]
    target = max(1, int(round(ratio * n_labeled)))
    classes = np.unique(train_labels)
    sizes = {int(c): int((train_labels == c).sum()) for c in classes}

    quotas = {c: target * sizes[c] / n_labeled for c in sizes}
    counts = {c: int(np.floor(q)) for c, q in quotas.items()}
    leftover = target - int(np.sum(list(counts.values())))
    # ties go to the smaller class, which minimizes overshoot from the floor
    by_remainder = sorted(sizes, key=lambda c: (-(quotas[c] - counts[c]), sizes[c], c))
    for c in by_remainder[:leftover]:
        counts[c] += 1
    for c in counts:
        counts[c] = max(1, counts[c])
        if counts[c] > sizes[c]:
            raise ValueError(
                f"class {c} budget {counts[c]} exceeds its {sizes[c]} training nodes")
    return ClassBudget(counts, float(ratio))


def _lloyd(points, m, rng, max_iter, tol):
    n = points.shape[0]
    # k-means++: distance-squared-biased seeding
    centroids = np.empty((m, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, m):
        total = d2.sum()
        if total == 0:
            centroids[i] = points[rng.integers(n)]
        else:
            centroids[i] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centroids[i]) ** 2, axis=1))

    prev_sse = np.inf
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dists = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        assign = dists.argmin(axis=1)

        for k in range(m):
            if not np.any(assign == k):
                own = dists[np.arange(n), assign]
                sizes = np.bincount(assign, minlength=m)
                donors = np.where(sizes[assign] > 1)[0]
                steal = donors[np.argmax(own[donors])]
                assign[steal] = k

        new_centroids = np.empty_like(centroids)
        for k in range(m):
            new_centroids[k] = points[assign == k].mean(axis=0)

        sse = float(np.sum((points - new_centroids[assign]) ** 2))
        assert sse <= prev_sse * (1 + 1e-12) + 1e-12, "Lloyd iteration increased the SSE"
        prev_sse = sse

        shift = np.max(np.linalg.norm(new_centroids - centroids, axis=1))
        centroids = new_centroids
        if shift < tol:
            break
    return prev_sse, assign, centroids


def kmeans(points: np.ndarray, m: int, seed: int, max_iter: int = 300,
           tol: float = 1e-6, n_init: int = 10):
    """Best of ``n_init`` runs of k-means++ seeding followed by Lloyd.

    Each run iterates until the largest centroid shift falls below ``tol``
    or after ``max_iter`` rounds; clusters are kept non-empty by stealing
    the point farthest from its current centroid.  Returns
    (assignments, centroids) of the lowest-SSE run.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= clusters <= {n}, got {m}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        sse, assign, centroids = _lloyd(points, m, rng, max_iter, tol)
        if best is None or sse < best[0]:
            best = (sse, assign, centroids)
    return best[1], best[2]


def init_features_kmeans(dataset: GraphDataset, budget: ClassBudget, seed: int):
    """Sub-cluster each class and copy one member feature row per cluster.

    Returns (features N' x d, labels N') in class order; the label histogram
    equals the budget exactly.
    """
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for cls in sorted(budget.counts):
        m_c = budget.counts[cls]
        idx = dataset.class_train_indices(cls)
        if idx.size < m_c:
            raise ValueError(f"class {cls} has {idx.size} training nodes < budget {m_c}")
        feats = dataset.features[idx]
        assign, _ = kmeans(feats, m_c, seed=int(rng.integers(2 ** 31)))
        for k in range(m_c):
            members = np.where(assign == k)[0]
            pick = members[rng.integers(members.size)]
            rows.append(feats[pick])
            labels.append(cls)
    return np.asarray(rows, dtype=np.float64), np.asarray(labels, dtype=np.int64)


def init_features_random(dataset: GraphDataset, budget: ClassBudget, seed: int):
    """Uniform sampling without replacement of M_c training rows per class."""
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for cls in sorted(budget.counts):
        m_c = budget.counts[cls]
        idx = dataset.class_train_indices(cls)
        if idx.size < m_c:
            raise ValueError(f"class {cls} has {idx.size} training nodes < budget {m_c}")
        pick = rng.choice(idx, size=m_c, replace=False)
        rows.append(dataset.features[pick])
        labels += [cls] * m_c
    return np.vstack(rows), np.asarray(labels, dtype=np.int64)
