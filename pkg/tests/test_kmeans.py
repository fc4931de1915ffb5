import numpy as np
import pytest

from confusionkit.errors import ParameterError
from confusionkit.numerics import kmeans


def _oracle_lloyd(points, init_centroids, max_iter=100):
    """Independent Lloyd loop for comparison: same seeding, plain re-derivation."""
    centroids = init_centroids.copy()
    assignments = np.full(len(points), -1)
    for _ in range(max_iter):
        dist = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.array([int(np.argmin(row)) for row in dist])
        cost = np.array([dist[i, new_assign[i]] for i in range(len(points))])
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for c in range(len(centroids)):
            members = assignments == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
        for c in range(len(centroids)):
            if not (assignments == c).any():
                far = int(np.argmax(cost))
                centroids[c] = points[far]
                cost = cost.copy()
                cost[far] = 0.0
    return assignments


def _plus_plus_oracle(points, k, seed):
    """Re-derivation of the k-means++ seeding with the same generator."""
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = [int(rng.integers(len(points)))]
    dist2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = dist2.sum()
        if total > 0:
            idx = int(rng.choice(len(points), p=dist2 / total))
        else:
            mask = np.ones(len(points), dtype=bool)
            mask[chosen] = False
            rest = np.flatnonzero(mask)
            idx = int(rest[0]) if rest.size else chosen[0]
        chosen.append(idx)
        dist2 = np.minimum(dist2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def test_k_equals_n_gives_zero_inertia():
    rng = np.random.default_rng(0)
    points = rng.standard_normal((6, 3))
    result = kmeans(points, 6, seed=1)
    assert result.inertia == pytest.approx(0.0, abs=1e-24)
    assert sorted(result.assignments) == list(range(6))


def test_k1_centroid_is_the_mean():
    rng = np.random.default_rng(1)
    points = rng.standard_normal((20, 4))
    result = kmeans(points, 1, seed=0)
    np.testing.assert_allclose(result.centroids[0], points.mean(axis=0), atol=1e-12)
    assert np.all(result.assignments == 0)


@pytest.mark.parametrize("seed", range(30))
def test_assignments_match_oracle_lloyd(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 40))
    k = int(rng.integers(1, 6))
    points = rng.standard_normal((n, 3))
    result = kmeans(points, k, seed=seed)
    oracle = _oracle_lloyd(points, _plus_plus_oracle(points, k, seed))
    assert np.array_equal(result.assignments, oracle)


@pytest.mark.parametrize("seed", range(30))
def test_inertia_never_increases(seed):
    rng = np.random.default_rng(100 + seed)
    points = rng.standard_normal((30, 4)) * rng.uniform(0.5, 3.0)
    result = kmeans(points, 5, seed=seed)
    history = result.inertia_history
    assert all(a >= b - 1e-9 for a, b in zip(history, history[1:])), history


def test_deterministic_under_seed():
    rng = np.random.default_rng(9)
    points = rng.standard_normal((25, 3))
    a = kmeans(points, 4, seed=7)
    b = kmeans(points, 4, seed=7)
    assert np.array_equal(a.centroids, b.centroids)
    assert np.array_equal(a.assignments, b.assignments)


def test_assignment_ties_go_to_lower_centroid():
    points = np.array([[0.0, 0.0]])
    # single point, two identical candidate centroids is impossible via ++ here,
    # so check the rule on an explicit equidistant layout instead
    pts = np.array([[0.0], [2.0], [1.0]])
    result = kmeans(pts, 2, max_iter=1, seed=0)
    dist = ((pts[:, None, :] - result.centroids[None, :, :]) ** 2).sum(axis=2)
    for i, c in enumerate(result.assignments):
        best = np.flatnonzero(dist[i] == dist[i].min())[0]
        assert c == best


def test_rejects_bad_k():
    points = np.zeros((3, 2))
    with pytest.raises(ParameterError):
        kmeans(points, 4)
    with pytest.raises(ParameterError):
        kmeans(points, 0)
