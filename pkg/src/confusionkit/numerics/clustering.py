"""Lloyd k-means with deterministic k-means++ seeding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError
from .tensor import Tensor


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia_history: list[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1] if self.inertia_history else 0.0


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    dist2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = dist2.sum()
        if total > 0:
            probs = dist2 / total
            idx = int(rng.choice(n, p=probs))
        else:
            # all remaining mass at chosen points; take the first unchosen index
            mask = np.ones(n, dtype=bool)
            mask[chosen] = False
            candidates = np.flatnonzero(mask)
            idx = int(candidates[0]) if candidates.size else chosen[0]
        chosen.append(idx)
        dist2 = np.minimum(dist2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def kmeans(points, k: int, max_iter: int = 100, seed: int = 0) -> KMeansResult:
    """Cluster row vectors into k groups.

    Assignment breaks ties toward the lower centroid index; an emptied
    cluster is re-seeded to the point farthest from its assigned centroid.
    The recorded inertia sequence is non-increasing.
    """
    data = points.data if isinstance(points, Tensor) else np.asarray(points, dtype=np.float64)
    if data.ndim != 2:
        raise ParameterError(f"kmeans expects an n x D matrix, got shape {data.shape}")
    n = data.shape[0]
    if k < 1 or k > n:
        raise ParameterError(f"cluster count {k} outside [1, {n}]")
    if max_iter < 1:
        raise ParameterError(f"max_iter must be positive, got {max_iter}")

    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = _plus_plus_init(data, k, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    iterations = 0

    for _ in range(max_iter):
        dist2 = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist2.argmin(axis=1)  # argmin ties resolve to lower index
        point_cost = dist2[np.arange(n), new_assign]
        history.append(float(point_cost.sum()))
        iterations += 1
        if np.array_equal(new_assign, assignments):
            assignments = new_assign
            break
        assignments = new_assign
        for c in range(k):
            members = assignments == c
            if members.any():
                centroids[c] = data[members].mean(axis=0)
        # re-seed empties after the means so the farthest point is current
        for c in range(k):
            if not (assignments == c).any():
                farthest = int(point_cost.argmax())
                centroids[c] = data[farthest]
                point_cost = point_cost.copy()
                point_cost[farthest] = 0.0

    return KMeansResult(centroids=centroids, assignments=assignments,
                        inertia_history=history, iterations=iterations)
