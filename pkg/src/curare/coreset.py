"""Diverse subset selection by farthest-point (maximin) sampling.

The greedy variant repeatedly appends the row whose distance to the selected
set is largest, giving an approximately equidistant subset.  The stratified
variant evaluates the maximin step only inside a periodically redrawn random
candidate sample, trading optimality for far fewer distance evaluations.
Distances are euclidean on the raw embeddings; argmax ties break toward the
lower row id.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .store import EmbeddingSet


@dataclass(frozen=True)
class CoresetConfig:
    subset_size: int
    start_row: int = 0
    random_sample_size: int = 1024  # stratified only
    resample_period: int = 8  # stratified only
    seed: int = 0


@dataclass
class CoresetResult:
    rows: list[int]  # selection order; rows[0] == start_row
    distance_evaluations: int


def _dists_to(vectors: np.ndarray, row: int, targets: np.ndarray) -> np.ndarray:
    diff = vectors[targets] - vectors[row]
    return np.sqrt(np.sum(diff * diff, axis=1))


def greedy_fps(embedding_set: EmbeddingSet, cfg: CoresetConfig) -> CoresetResult:
    """Exhaustive farthest-point sampling from ``start_row``.

    Each step appends argmax over unselected rows of the minimum distance to
    the selected set.  Deterministic; does at most subset_size^2 * count
    distance evaluations (in practice subset_size * count).
    """
    n = embedding_set.count
    if not 0 < cfg.subset_size <= n:
        raise ValueError(f"subset_size must be in [1, {n}], got {cfg.subset_size}")
    if not 0 <= cfg.start_row < n:
        raise ValueError(f"start_row {cfg.start_row} out of range")
    vectors = embedding_set.vectors.astype(np.float64)
    all_rows = np.arange(n)
    selected = [cfg.start_row]
    evals = n
    min_d = _dists_to(vectors, cfg.start_row, all_rows)
    min_d[cfg.start_row] = -np.inf  # never re-selected
    while len(selected) < cfg.subset_size:
        nxt = int(np.argmax(min_d))  # first index wins ties -> lowest row id
        selected.append(nxt)
        evals += n
        np.minimum(min_d, _dists_to(vectors, nxt, all_rows), out=min_d)
        min_d[nxt] = -np.inf
    return CoresetResult(rows=selected, distance_evaluations=evals)


def stratified_fps(embedding_set: EmbeddingSet, cfg: CoresetConfig) -> CoresetResult:
    """Scalable farthest-point sampling over a periodically redrawn sample.

    Each step picks the maximin row (distance to the selected set) within a
    seeded uniform sample of unselected rows; the candidate sample is redrawn
    every ``resample_period`` steps, or early if it empties.
    """
    n = embedding_set.count
    if not 0 < cfg.subset_size <= n:
        raise ValueError(f"subset_size must be in [1, {n}], got {cfg.subset_size}")
    if cfg.random_sample_size < 1:
        raise ValueError("random_sample_size must be >= 1")
    if cfg.resample_period < 1:
        raise ValueError("resample_period must be >= 1")
    if not 0 <= cfg.start_row < n:
        raise ValueError(f"start_row {cfg.start_row} out of range")

    vectors = embedding_set.vectors.astype(np.float64)
    rng = np.random.default_rng(cfg.seed)
    selected = [cfg.start_row]
    unselected = np.ones(n, dtype=bool)
    unselected[cfg.start_row] = False
    evals = 0

    sample: np.ndarray = np.empty(0, dtype=np.int64)
    sample_min_d: np.ndarray = np.empty(0)
    steps_since_draw = 0

    def redraw() -> None:
        nonlocal sample, sample_min_d, steps_since_draw, evals
        pool = np.flatnonzero(unselected)
        size = min(cfg.random_sample_size, len(pool))
        # sorted ascending so argmax tie-break lands on the lowest row id
        sample = np.sort(rng.choice(pool, size=size, replace=False))
        sample_min_d = np.full(len(sample), np.inf)
        for s in selected:
            np.minimum(sample_min_d, _dists_to(vectors, s, sample), out=sample_min_d)
            evals += len(sample)
        steps_since_draw = 0

    redraw()
    while len(selected) < cfg.subset_size:
        if len(sample) == 0 or steps_since_draw >= cfg.resample_period:
            redraw()
        pick_pos = int(np.argmax(sample_min_d))
        pick = int(sample[pick_pos])
        selected.append(pick)
        unselected[pick] = False
        keep = np.ones(len(sample), dtype=bool)
        keep[pick_pos] = False
        sample = sample[keep]
        sample_min_d = sample_min_d[keep]
        if len(sample):
            np.minimum(sample_min_d, _dists_to(vectors, pick, sample), out=sample_min_d)
            evals += len(sample)
        steps_since_draw += 1
    return CoresetResult(rows=selected, distance_evaluations=evals)


def coverage_radius(embedding_set: EmbeddingSet, rows: list[int]) -> float:
    """Max over all rows of the distance to the nearest selected row."""
    if not rows:
        raise ValueError("rows must be nonempty")
    vectors = embedding_set.vectors.astype(np.float64)
    sel = vectors[np.asarray(rows, dtype=np.int64)]
    worst = 0.0
    # chunked so N x |rows| never materializes for large sets
    step = max(1, 2**22 // max(1, len(rows)))
    for lo in range(0, embedding_set.count, step):
        chunk = vectors[lo : lo + step]
        d2 = (
            np.sum(chunk**2, axis=1)[:, None]
            - 2.0 * chunk @ sel.T
            + np.sum(sel**2, axis=1)[None, :]
        )
        worst = max(worst, float(np.sqrt(np.maximum(d2.min(axis=1), 0.0)).max()))
    return worst


__all__ = ["CoresetConfig", "CoresetResult", "coverage_radius", "greedy_fps", "stratified_fps"]
