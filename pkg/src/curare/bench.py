"""Desk-scale benchmark protocol with a simulated label oracle.

Generates labeled synthetic embedding sets shaped like a multi-class scene
benchmark (class centers on a sphere, Gaussian cluster noise, optional
imbalance), runs the curation loop once per (class, starter) with the
metadata oracle answering label requests, and aggregates retrieval metrics
per class and overall.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .index import VectorIndex, build_index
from .learner import CurationLoop, LoopConfig, drive_loop, oracle_labeler
from .store import EmbeddingSet, ItemMeta


class BenchError(ValueError):
    """Degenerate synthetic spec or a set unusable for the protocol."""


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int
    per_class: int
    dim: int
    cluster_spread: float = 1.0
    separation: float = 4.0
    imbalance: Optional[tuple[float, ...]] = None
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise BenchError("need at least 2 classes")
        if self.per_class < 8:
            raise BenchError("need at least 8 items per class")
        if self.dim < 1:
            raise BenchError("dim must be positive")
        if self.cluster_spread <= 0 or self.separation <= 0:
            raise BenchError("cluster_spread and separation must be positive")
        if self.imbalance is not None and (
            len(self.imbalance) != self.classes or any(w <= 0 for w in self.imbalance)
        ):
            raise BenchError("imbalance needs one positive weight per class")


@dataclass(frozen=True)
class BenchMetrics:
    f1_val: float
    labeling_effort: float  # (seed + loop + verification labels) / N
    loop_effort: float  # loop labels alone / N
    positives_retrieved: float
    false_positive_fraction: float


@dataclass
class BenchRun:
    class_id: int
    starter: str
    metrics: BenchMetrics


@dataclass
class BenchResult:
    runs: list[BenchRun]
    per_class: dict[int, BenchMetrics]
    mean: BenchMetrics


def _class_counts(spec: SyntheticSpec) -> list[int]:
    total = spec.classes * spec.per_class
    if spec.imbalance is None:
        return [spec.per_class] * spec.classes
    weights = np.asarray(spec.imbalance, dtype=np.float64)
    raw = weights / weights.sum() * total
    counts = np.maximum(np.floor(raw).astype(int), 1)
    # largest-remainder apportionment of what is left
    remainder = total - counts.sum()
    order = np.argsort(-(raw - np.floor(raw)))
    for i in range(abs(int(remainder))):
        counts[order[i % spec.classes]] += 1 if remainder > 0 else -1
    return counts.tolist()


def make_synthetic(spec: SyntheticSpec) -> EmbeddingSet:
    """Seeded labeled set: class centers on a sphere of radius ``separation``,
    points = center + Gaussian noise of scale ``cluster_spread``."""
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(size=(spec.classes, spec.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= spec.separation
    counts = _class_counts(spec)
    vectors = []
    labels = []
    for c, n in enumerate(counts):
        vectors.append(centers[c] + rng.normal(size=(n, spec.dim)) * spec.cluster_spread)
        labels.extend([c] * n)
    all_vecs = np.vstack(vectors).astype(np.float32)
    meta = [
        ItemMeta(row_id=i, item_id=f"syn-{i:06d}", uri=f"synthetic://{i}", true_label=labels[i])
        for i in range(len(labels))
    ]
    return EmbeddingSet(all_vecs, meta)


def f1(predictions: Sequence[int], truth: Sequence[int]) -> float:
    """F1 of the positive class; 0 when precision + recall is 0."""
    predictions = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predictions.shape != truth.shape:
        raise BenchError(
            f"length mismatch: {predictions.shape} vs {truth.shape}"
        )
    tp = int(np.sum((predictions == 1) & (truth == 1)))
    fp = int(np.sum((predictions == 1) & (truth == 0)))
    fn = int(np.sum((predictions == 0) & (truth == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def _mean_metrics(metrics: list[BenchMetrics]) -> BenchMetrics:
    return BenchMetrics(
        f1_val=float(np.mean([m.f1_val for m in metrics])),
        labeling_effort=float(np.mean([m.labeling_effort for m in metrics])),
        loop_effort=float(np.mean([m.loop_effort for m in metrics])),
        positives_retrieved=float(np.mean([m.positives_retrieved for m in metrics])),
        false_positive_fraction=float(np.mean([m.false_positive_fraction for m in metrics])),
    )


def run_benchmark(
    embeddings: EmbeddingSet,
    starters_per_class: int,
    cfg: LoopConfig,
    index: Optional[VectorIndex] = None,
    classes: Optional[Sequence[int]] = None,
) -> BenchResult:
    """Oracle-driven protocol: for every class and seeded starter, run the
    loop with binary relabeling (starter's class = relevant) and aggregate.

    ``cfg.seed`` is the master seed; each (class, starter) run derives its
    own loop seed from it, so results are reproducible end to end.
    """
    metas = embeddings.meta
    if any(m.true_label is None for m in metas):
        raise BenchError("benchmark needs true_label on every item")
    by_class: dict[int, list[int]] = {}
    for m in metas:
        by_class.setdefault(m.true_label, []).append(m.row_id)
    wanted = sorted(by_class) if classes is None else list(classes)
    for c in wanted:
        if len(by_class.get(c, [])) < starters_per_class:
            raise BenchError(f"class {c} has fewer items than starters_per_class")
        if len(by_class[c]) < 1:
            raise BenchError(f"class {c} is empty")
    if min(len(v) for v in by_class.values()) < 1:
        raise BenchError("every class needs at least one item")
    if embeddings.count <= cfg.seed_nn:
        raise BenchError("set smaller than the seed neighborhood")

    if index is None:
        index = build_index(embeddings, metric="cosine", mode="exact")

    n = embeddings.count
    runs: list[BenchRun] = []
    for c in wanted:
        rows = np.asarray(by_class[c])
        starter_rng = np.random.default_rng((cfg.seed, 7, c))
        starter_rows = starter_rng.choice(rows, size=starters_per_class, replace=False)
        for s_idx, srow in enumerate(sorted(int(r) for r in starter_rows)):
            starter = metas[srow].item_id
            run_seed = int(np.random.SeedSequence((cfg.seed, c, s_idx)).generate_state(1)[0])
            run_cfg = replace(cfg, seed=run_seed)
            loop = CurationLoop(embeddings, index, starter, run_cfg)
            _, curated, history = drive_loop(loop, oracle_labeler(embeddings, c))
            curated_ids = set(curated.ids())
            class_ids = {metas[r].item_id for r in rows}
            hits = len(curated_ids & class_ids)
            f1_val = next(
                (h.f1_val for h in reversed(history) if h.f1_val is not None), 0.0
            )
            metrics = BenchMetrics(
                f1_val=f1_val,
                labeling_effort=(loop.seed_labels + loop.loop_labels + loop.verify_labels) / n,
                loop_effort=loop.loop_labels / n,
                positives_retrieved=hits / len(class_ids),
                false_positive_fraction=(
                    (len(curated_ids) - hits) / len(curated_ids) if curated_ids else 0.0
                ),
            )
            runs.append(BenchRun(class_id=c, starter=starter, metrics=metrics))

    per_class = {
        c: _mean_metrics([r.metrics for r in runs if r.class_id == c]) for c in wanted
    }
    return BenchResult(runs=runs, per_class=per_class, mean=_mean_metrics([r.metrics for r in runs]))


def merge_results(results: Sequence[BenchResult]) -> BenchResult:
    """Pool runs from several benchmark invocations (e.g. master seeds)."""
    runs = [r for result in results for r in result.runs]
    if not runs:
        raise BenchError("nothing to merge")
    classes = sorted({r.class_id for r in runs})
    per_class = {
        c: _mean_metrics([r.metrics for r in runs if r.class_id == c]) for c in classes
    }
    return BenchResult(runs=runs, per_class=per_class,
                       mean=_mean_metrics([r.metrics for r in runs]))


__all__ = [
    "BenchError",
    "BenchMetrics",
    "BenchResult",
    "BenchRun",
    "SyntheticSpec",
    "f1",
    "make_synthetic",
    "merge_results",
    "run_benchmark",
]
