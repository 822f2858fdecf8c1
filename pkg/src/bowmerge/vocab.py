"""Vocabulary training (k-means) and descriptor-to-word quantization.

Distances are squared Euclidean, accumulated in float64; argmin ties break to
the lowest centroid index. Training is exact Lloyd's k-means with k-means++
seeding driven by an explicit seed, so results are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import Corpus, FeatureRef, Vocabulary

# Rows per chunk when computing full distance matrices; bounds peak memory.
_ASSIGN_CHUNK = 65536


@dataclass(frozen=True)
class QuantizedFeature:
    """One corpus feature and its visual word in each of the K vocabularies."""

    feature: FeatureRef
    words: tuple[int, ...]


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray  # (size, dim) float32
    labels: np.ndarray  # (n,) int32 assignment of each training point
    wcss_per_iter: list[float]  # within-cluster sum of squares, one per iteration


def nearest_centroids(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid (squared Euclidean) for each row of x.

    Ties resolve to the lowest index. Chunked so the distance matrix never
    exceeds ~128 MB regardless of input size.
    """
    x = np.atleast_2d(x)
    if x.shape[1] != centroids.shape[1]:
        raise ValueError(f"dim mismatch: descriptors {x.shape[1]}, centroids {centroids.shape[1]}")
    out = np.empty(x.shape[0], dtype=np.int32)
    for lo in range(0, x.shape[0], _ASSIGN_CHUNK):
        hi = min(lo + _ASSIGN_CHUNK, x.shape[0])
        d = cdist(x[lo:hi], centroids, "sqeuclidean")
        out[lo:hi] = np.argmin(d, axis=1)
    return out


def _min_sq_dist(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared distance from each row of x to its nearest centroid."""
    out = np.empty(x.shape[0], dtype=np.float64)
    for lo in range(0, x.shape[0], _ASSIGN_CHUNK):
        hi = min(lo + _ASSIGN_CHUNK, x.shape[0])
        d = cdist(x[lo:hi], centroids, "sqeuclidean")
        out[lo:hi] = d.min(axis=1)
    return out


def _kmeans_plusplus(x: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: D^2-weighted sampling of `size` distinct points."""
    n = x.shape[0]
    chosen = np.empty(size, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = cdist(x, x[chosen[0]][None, :], "sqeuclidean")[:, 0]
    for j in range(1, size):
        total = d2.sum()
        # total > 0 is guaranteed while j < number of distinct points
        probs = d2 / total
        chosen[j] = rng.choice(n, p=probs)
        new_d2 = cdist(x, x[chosen[j]][None, :], "sqeuclidean")[:, 0]
        np.minimum(d2, new_d2, out=d2)
    return x[chosen].astype(np.float64)


def kmeans(x: np.ndarray, size: int, seed: int, max_iters: int) -> KMeansResult:
    """Exact Lloyd's k-means, deterministic in (x, size, seed, max_iters).

    Empty clusters are repaired by reassigning the point currently farthest
    from its centroid, so exactly `size` clusters always survive.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    x = np.ascontiguousarray(x, dtype=np.float32)
    n, dim = x.shape
    if n < size:
        raise ValueError(f"need at least {size} training points, got {n}")
    if len(np.unique(x, axis=0)) < size:
        raise ValueError(f"need at least {size} distinct training points")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_plusplus(x, size, rng)
    labels = np.zeros(n, dtype=np.int32)
    wcss_history: list[float] = []

    for _ in range(max_iters):
        # assignment step
        dmin = np.empty(n, dtype=np.float64)
        for lo in range(0, n, _ASSIGN_CHUNK):
            hi = min(lo + _ASSIGN_CHUNK, n)
            d = cdist(x[lo:hi], centroids, "sqeuclidean")
            labels[lo:hi] = np.argmin(d, axis=1)
            dmin[lo:hi] = d[np.arange(hi - lo), labels[lo:hi]]

        # empty-cluster repair: hand the farthest point to each empty cluster
        counts = np.bincount(labels, minlength=size)
        for empty in np.flatnonzero(counts == 0):
            far = int(np.argmax(dmin))
            counts[labels[far]] -= 1
            labels[far] = empty
            counts[empty] += 1
            dmin[far] = -1.0

        wcss_history.append(float(dmin[dmin >= 0].sum()))

        # update step: per-dimension bincount keeps this exact and fast
        sums = np.empty((size, dim), dtype=np.float64)
        for d_idx in range(dim):
            sums[:, d_idx] = np.bincount(labels, weights=x[:, d_idx], minlength=size)
        new_centroids = sums / counts[:, None]
        if np.array_equal(new_centroids, centroids):
            break
        centroids = new_centroids

    return KMeansResult(centroids.astype(np.float32), labels, wcss_history)


def train_vocabulary(training: Corpus, size: int, seed: int, max_iters: int) -> Vocabulary:
    """Train one vocabulary of exactly `size` words on a training corpus."""
    x, _, _ = training.stacked()
    if x.shape[0] == 0:
        raise ValueError("training corpus has no descriptors")
    result = kmeans(x, size, seed, max_iters)
    return Vocabulary(result.centroids, seed)


def quantize(x: np.ndarray, vocabularies: list[Vocabulary]) -> tuple[int, ...]:
    """Map one descriptor to its visual-word tuple across K vocabularies."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 1:
        raise ValueError("quantize expects a single descriptor vector")
    return tuple(int(nearest_centroids(x[None, :], v.centroids)[0]) for v in vocabularies)


def assign_words(x: np.ndarray, vocabularies: list[Vocabulary]) -> np.ndarray:
    """Quantize a batch of descriptors: (n, dim) -> (n, K) int32 word indices."""
    if x.shape[0] == 0:
        return np.empty((0, len(vocabularies)), dtype=np.int32)
    cols = [nearest_centroids(x, v.centroids) for v in vocabularies]
    return np.stack(cols, axis=1)


def quantize_corpus(corpus: Corpus, vocabularies: list[Vocabulary]) -> list[QuantizedFeature]:
    """Quantize every corpus feature, preserving (image_id, feature_id) order."""
    x, image_ids, feature_ids = corpus.stacked()
    words = assign_words(x, vocabularies)
    return [
        QuantizedFeature(FeatureRef(int(i), int(f)), tuple(int(w) for w in row))
        for i, f, row in zip(image_ids, feature_ids, words)
    ]
