"""Toy visual tokenizer: a k-means codebook over flattened image patches.

The codebook is trained once, frozen, and stored inside checkpoints. Token
``i`` of a patch grid is the index of the nearest centroid in squared
Euclidean distance, with ties going to the lowest index.
"""

import hashlib
from typing import List, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator
from sklearn.cluster import kmeans_plusplus

from core.errors import ConfigurationError, DimensionError
from pipeline.images import PatchGrid

_CHUNK = 256


class Codebook(BaseModel):
    """K x D centroid matrix plus the fingerprint of the patches it was fit on."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    centroids: np.ndarray
    fingerprint: str = ""
    errors: Tuple[float, ...] = Field(default_factory=tuple)

    @field_validator("centroids")
    @classmethod
    def _check_centroids(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float32)
        if value.ndim != 2 or value.shape[0] < 2:
            raise ValueError(f"a codebook needs at least 2 centroids in a [K, D] matrix, got {value.shape}")
        if not np.isfinite(value).all():
            raise ValueError("codebook centroids must be finite")
        if np.unique(value, axis=0).shape[0] != value.shape[0]:
            raise ValueError("codebook centroids must be distinct")
        return value

    @property
    def K(self) -> int:  # noqa: N802
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])

    def fingerprint_bytes(self) -> bytes:
        return bytes.fromhex(self.fingerprint) if self.fingerprint else b""


def fingerprint(patches: np.ndarray) -> str:
    data = np.ascontiguousarray(patches, dtype=np.float32)
    digest = hashlib.sha256()
    digest.update(np.array(data.shape, dtype="<u8").tobytes())
    digest.update(data.astype("<f4").tobytes())
    return digest.hexdigest()


def nearest(points: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Index of and squared distance to the nearest centroid for every row."""
    points = np.asarray(points, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    labels = np.empty(points.shape[0], dtype=np.int64)
    dists = np.empty(points.shape[0], dtype=np.float64)
    for start in range(0, points.shape[0], _CHUNK):
        block = points[start : start + _CHUNK]
        d = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d, axis=1)
        labels[start : start + _CHUNK] = idx
        dists[start : start + _CHUNK] = d[np.arange(block.shape[0]), idx]
    return labels, dists


def train_codebook(patches: np.ndarray, k: int, iters: int = 20, seed: int = 0) -> Codebook:
    """k-means++ seeding followed by exactly ``iters`` Lloyd iterations.

    Empty clusters keep their previous centroid, so the mean quantization
    error never increases from one iteration to the next.
    """
    points = np.asarray(patches, dtype=np.float64)
    if points.ndim != 2:
        raise DimensionError(f"codebook training needs a [n, D] patch matrix, got {points.shape}")
    if k < 2:
        raise ConfigurationError(f"codebook size must be at least 2, got {k}")
    if points.shape[0] < k:
        raise ConfigurationError(f"{points.shape[0]} patches cannot train a codebook of {k} centroids")
    distinct = np.unique(points, axis=0).shape[0]
    if distinct < k:
        raise ConfigurationError(f"only {distinct} distinct patches for a codebook of {k} centroids")

    centroids, _ = kmeans_plusplus(points, n_clusters=k, random_state=seed)
    centroids = np.array(centroids, dtype=np.float64)
    errors: List[float] = []
    for _ in range(iters):
        labels, dists = nearest(points, centroids)
        errors.append(float(dists.mean()))
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]
    _, dists = nearest(points, centroids)
    errors.append(float(dists.mean()))

    codebook = Codebook(centroids=centroids, fingerprint=fingerprint(patches), errors=tuple(errors))
    logger.bind(component="codebook").info(
        f"Trained codebook K={k} D={points.shape[1]} on {points.shape[0]} patches: "
        f"quantization error {errors[0]:.5f} -> {errors[-1]:.5f}"
    )
    return codebook


def quantize_patches(patches: np.ndarray, codebook: Codebook) -> np.ndarray:
    patches = np.asarray(patches)
    if patches.ndim != 2 or patches.shape[1] != codebook.dim:
        raise DimensionError(f"patch matrix {patches.shape} does not match codebook dimension {codebook.dim}")
    labels, _ = nearest(patches, codebook.centroids)
    return labels


def quantize(grid: PatchGrid, codebook: Codebook) -> np.ndarray:
    """Visual token of every patch, length N."""
    return quantize_patches(grid.patches, codebook)
