from __future__ import annotations

import numpy as np
import pytest

from aide.cluster import assign, kmeans


def blobs(rng, centers, per_center, spread=0.3):
    points = []
    for c in centers:
        points.append(rng.normal(0, spread, size=(per_center, len(c))) + np.asarray(c))
    return np.vstack(points)


def test_kmeans_recovers_separated_blobs():
    rng = np.random.Generator(np.random.PCG64(3))
    centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)]
    points = blobs(rng, centers, 40)
    got_centers, labels = kmeans(points, 3, np.random.Generator(np.random.PCG64(5)))
    # Every blob maps to exactly one cluster.
    for b in range(3):
        blob_labels = labels[b * 40 : (b + 1) * 40]
        assert len(set(blob_labels.tolist())) == 1
    assert len(set(labels.tolist())) == 3
    assert got_centers.shape == (3, 2)


def test_kmeans_deterministic_under_seed():
    rng = np.random.Generator(np.random.PCG64(3))
    points = blobs(rng, [(0, 0), (8, 8)], 30)
    c1, l1 = kmeans(points, 2, np.random.Generator(np.random.PCG64(11)))
    c2, l2 = kmeans(points, 2, np.random.Generator(np.random.PCG64(11)))
    assert np.array_equal(l1, l2)
    assert np.array_equal(c1, c2)


def test_kmeans_is_assignment_fixed_point():
    rng = np.random.Generator(np.random.PCG64(9))
    points = rng.uniform(0, 10, size=(200, 5))
    centers, labels = kmeans(points, 6, np.random.Generator(np.random.PCG64(1)))
    assert np.array_equal(assign(points, centers), labels)


def test_kmeans_identical_points_collapse():
    points = np.tile(np.array([[2.0, 3.0]]), (24, 1))
    centers, labels = kmeans(points, 4, np.random.Generator(np.random.PCG64(2)))
    assert set(labels.tolist()) == {0}  # ties resolve to the lowest index
    assert np.allclose(centers[0], [2.0, 3.0])


def test_kmeans_rejects_k_above_n():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 4, np.random.Generator(np.random.PCG64(0)))
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 0, np.random.Generator(np.random.PCG64(0)))
