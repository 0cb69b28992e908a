"""K-means placement of UAVs over UE positions (Lloyd iterations, k-means++ seeding)."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClusterAssignment:
    centroids: np.ndarray  # (K, 2)
    labels: np.ndarray  # (N,) int
    sizes: np.ndarray  # (K,) int
    inertia: float

    @property
    def k(self) -> int:
        return len(self.centroids)

    def members(self, j: int) -> np.ndarray:
        """UE indices of cluster ``j`` in ascending order (the cluster-internal order)."""
        return np.flatnonzero(self.labels == j)

    def indicator(self) -> np.ndarray:
        """Dense association matrix a[i, j]."""
        a = np.zeros((len(self.labels), self.k), dtype=int)
        a[np.arange(len(self.labels)), self.labels] = 1
        return a


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def inertia_of(points, labels, centroids) -> float:
    points = np.asarray(points, dtype=float)
    diff = points - np.asarray(centroids)[labels]
    return float(np.sum(diff * diff))


def lloyd_step(positions, centroids):
    """One assignment + update sweep.

    Returns ``(labels, new_centroids, inertia)``; the inertia is measured
    against the incoming centroids. Empty clusters keep their old centroid.
    """
    points = np.asarray(positions, dtype=float)
    centroids = np.asarray(centroids, dtype=float)
    if len(centroids) == 0:
        raise ValueError("need at least one centroid")
    d2 = _sq_dists(points, centroids)
    labels = np.argmin(d2, axis=1)  # first minimum -> lowest index wins ties
    inertia = float(d2[np.arange(len(points)), labels].sum())
    new = centroids.copy()
    for j in range(len(centroids)):
        mask = labels == j
        if mask.any():
            new[j] = points[mask].mean(axis=0)
    return labels, new, inertia


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def _repair_empty(points, labels, centroids):
    """Give every empty cluster a singleton: the point farthest from its own centroid."""
    k = len(centroids)
    labels = labels.copy()
    centroids = centroids.copy()
    for j in range(k):
        sizes = np.bincount(labels, minlength=k)
        if sizes[j] > 0:
            continue
        dist = np.sum((points - centroids[labels]) ** 2, axis=1)
        dist[sizes[labels] <= 1] = -1.0  # never empty a donor cluster
        i = int(np.argmax(dist))
        labels[i] = j
        centroids[j] = points[i]
    return labels, centroids


def hartigan_refine(points, labels, max_sweeps: int = 100):
    """Single-point transfers that strictly lower the inertia (Hartigan's rule).

    Moving x from A to B pays off when
    |B|/(|B|+1) |x - c_B|^2 < |A|/(|A|-1) |x - c_A|^2. Clusters never empty.
    Returns refined labels; a Lloyd fixed point is not always a Hartigan one.
    """
    labels = labels.copy()
    k = int(labels.max()) + 1
    sizes = np.bincount(labels, minlength=k).astype(float)
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    for _ in range(max_sweeps):
        moved = False
        for i, x in enumerate(points):
            a = labels[i]
            if sizes[a] <= 1:
                continue
            cents = sums / sizes[:, None]
            d2 = np.sum((cents - x) ** 2, axis=1)
            cost_out = sizes[a] / (sizes[a] - 1) * d2[a]
            gain_in = sizes / (sizes + 1) * d2
            gain_in[a] = np.inf
            b = int(np.argmin(gain_in))
            if gain_in[b] < cost_out * (1 - 1e-12):
                labels[i] = b
                sizes[a] -= 1
                sizes[b] += 1
                sums[a] -= x
                sums[b] += x
                moved = True
        if not moved:
            break
    return labels


def _single_run(points, k, rng, max_iter, tol, seeds=None):
    centroids = _kmeans_pp(points, k, rng) if seeds is None else points[list(seeds)].copy()
    labels = None
    prev_inertia = np.inf
    for _ in range(max_iter):
        new_labels, new_centroids, inertia = lloyd_step(points, centroids)
        assert inertia <= prev_inertia * (1 + 1e-12) + 1e-12, "Lloyd inertia increased"
        prev_inertia = inertia
        if np.bincount(new_labels, minlength=k).min() == 0:
            new_labels, new_centroids = _repair_empty(points, new_labels, new_centroids)
            prev_inertia = np.inf  # repair moves centroids off the monotone path
        shift = np.max(np.linalg.norm(new_centroids - centroids, axis=1))
        stable = labels is not None and np.array_equal(new_labels, labels)
        labels, centroids = new_labels, new_centroids
        if stable or shift <= tol:
            break
    # final consistent assignment: nearest centroid, repaired, refined, centroids = means
    labels = np.argmin(_sq_dists(points, centroids), axis=1)
    labels, centroids = _repair_empty(points, labels, centroids)
    if k > 1:
        labels = hartigan_refine(points, labels)
    for j in range(k):
        centroids[j] = points[labels == j].mean(axis=0)
    return labels, centroids, inertia_of(points, labels, centroids)


EXHAUSTIVE_SEED_LIMIT = 64


def kmeans(ue_positions, k: int, rng: np.random.Generator, restarts: int = 10,
           max_iter: int = 300, tol: float | None = None) -> ClusterAssignment:
    """Best-of-``restarts`` k-means; every cluster is guaranteed non-empty.

    ``tol`` bounds the largest centroid move (meters) for early stopping; by
    default it is 1e-4 of the larger side of the points' bounding box. When
    there are at most ``EXHAUSTIVE_SEED_LIMIT`` ways to pick k seed points,
    every such pick is tried as well.
    """
    points = np.asarray(ue_positions, dtype=float)
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if tol is None:
        tol = 1e-4 * float(np.ptp(points, axis=0).max())
    seeds = rng.integers(0, 2**63 - 1, size=restarts)
    best = None
    for seed in seeds:
        result = _single_run(points, k, np.random.default_rng(int(seed)), max_iter, tol)
        if best is None or result[2] < best[2]:
            best = result
    if 1 < k < n and math.comb(n, k) <= EXHAUSTIVE_SEED_LIMIT:
        for combo in itertools.combinations(range(n), k):
            result = _single_run(points, k, None, max_iter, tol, seeds=combo)
            if result[2] < best[2]:
                best = result
    labels, centroids, inertia = best
    return ClusterAssignment(centroids=centroids, labels=labels,
                             sizes=np.bincount(labels, minlength=k), inertia=inertia)
