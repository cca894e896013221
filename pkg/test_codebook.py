#!/usr/bin/env python3
"""
Tests for the k-means visual tokenizer.
"""

import numpy as np
import pytest

from core.errors import ConfigurationError, DimensionError
from pipeline.images import RawImage, patchify
from tokenizer.codebook import Codebook, fingerprint, nearest, quantize, quantize_patches, train_codebook


def two_clusters(seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 0.01, size=(20, 4))
    b = rng.normal(5.0, 0.01, size=(20, 4))
    return np.concatenate([a, b])


def test_two_well_separated_clusters():
    points = two_clusters()
    codebook = train_codebook(points, 2, iters=10, seed=0)
    labels = quantize_patches(points, codebook)
    assert len(set(labels[:20])) == 1 and len(set(labels[20:])) == 1
    assert labels[0] != labels[20]
    means = sorted(codebook.centroids.mean(axis=1))
    assert means[0] == pytest.approx(0.0, abs=0.05) and means[1] == pytest.approx(5.0, abs=0.05)


def test_one_centroid_per_patch_has_zero_error():
    points = np.random.default_rng(1).random((6, 3))
    codebook = train_codebook(points, 6, iters=3, seed=0)
    assert codebook.errors[-1] == pytest.approx(0.0, abs=1e-10)
    assert sorted(quantize_patches(points, codebook).tolist()) == list(range(6))


def test_training_is_deterministic():
    points = np.random.default_rng(2).random((50, 5))
    a = train_codebook(points, 4, iters=5, seed=9)
    b = train_codebook(points, 4, iters=5, seed=9)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    assert a.fingerprint == b.fingerprint == fingerprint(points)


def test_quantization_error_never_increases():
    points = np.random.default_rng(3).random((80, 6))
    errors = train_codebook(points, 5, iters=8, seed=1).errors
    assert len(errors) == 9
    assert all(later <= earlier + 1e-12 for earlier, later in zip(errors, errors[1:]))


def test_ties_go_to_lowest_index():
    centroids = np.array([[0.0], [2.0]])
    labels, dists = nearest(np.array([[1.0]]), centroids)
    assert labels.tolist() == [0] and dists.tolist() == [1.0]


def test_nearest_matches_brute_force():
    rng = np.random.default_rng(4)
    points, centroids = rng.random((300, 7)), rng.random((9, 7))
    labels, _ = nearest(points, centroids)
    brute = [int(np.argmin([np.sum((p - c) ** 2) for c in centroids])) for p in points]
    assert labels.tolist() == brute


def test_quantize_is_idempotent_on_grids():
    rng = np.random.default_rng(5)
    grid = patchify(RawImage(pixels=rng.random((32, 32, 3))), 8)
    codebook = train_codebook(rng.random((40, grid.dim)), 4, iters=3, seed=0)
    tokens = quantize(grid, codebook)
    assert tokens.shape == (16,) and tokens.min() >= 0 and tokens.max() < 4
    np.testing.assert_array_equal(quantize(grid, codebook), tokens)
    # A centroid quantizes to itself.
    assert quantize_patches(codebook.centroids, codebook).tolist() == [0, 1, 2, 3]


def test_training_rejects_bad_inputs():
    with pytest.raises(ConfigurationError):
        train_codebook(np.random.default_rng(0).random((3, 2)), 4)
    with pytest.raises(ConfigurationError):
        train_codebook(np.zeros((10, 2)), 2)
    with pytest.raises(ConfigurationError):
        train_codebook(np.random.default_rng(0).random((10, 2)), 1)
    with pytest.raises(DimensionError):
        train_codebook(np.zeros(10), 2)


def test_codebook_validation():
    with pytest.raises(ValueError):
        Codebook(centroids=np.zeros((2, 3)))
    with pytest.raises(ValueError):
        Codebook(centroids=np.array([[np.nan, 0.0], [1.0, 1.0]]))
    codebook = Codebook(centroids=np.eye(3))
    assert codebook.K == 3 and codebook.dim == 3
    with pytest.raises(DimensionError):
        quantize_patches(np.zeros((2, 4)), codebook)
