"""Seeded, deterministic k-means with farthest-first initialization.

Used as the coarse quantizer inside partitioned indexes and by the
clustering-based batch diversity strategy.  Ties in assignment and in the
farthest-first sweep break toward the lower row index, so identical inputs
and seed always produce identical centroids and memberships.
"""
from __future__ import annotations

import numpy as np

MAX_ITER = 25


def farthest_first_init(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Pick k seed rows: one random row, then repeatedly the row maximizing
    the minimum distance to the rows chosen so far (ties -> lowest row index)."""
    n = vectors.shape[0]
    first = int(rng.integers(n))
    chosen = [first]
    if k == 1:
        return np.array(chosen)
    min_d2 = np.sum((vectors - vectors[first]) ** 2, axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d2))  # argmax returns the first (lowest) index on ties
        chosen.append(nxt)
        d2 = np.sum((vectors - vectors[nxt]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
    return np.array(chosen)


def kmeans(
    vectors: np.ndarray,
    k: int,
    seed: int | np.random.Generator = 0,
    max_iter: int = MAX_ITER,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with a fixed iteration cap.

    Returns (centroids (k, d) float64, assignments (n,) int64).  Assignment
    ties break toward the lower centroid id; empty clusters keep their
    previous centroid.  Deterministic for a fixed seed.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    centroids = vectors[farthest_first_init(vectors, k, rng)].copy()
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        # argmin over centroids; first occurrence wins on ties
        d2 = (
            np.sum(vectors**2, axis=1)[:, None]
            - 2.0 * vectors @ centroids.T
            + np.sum(centroids**2, axis=1)[None, :]
        )
        new_assign = np.argmin(d2, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = vectors[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    return centroids, assign
