"""Seed-set construction and the human-in-the-loop curation loop.

The loop alternates: train a linear head on everything labeled so far,
score every unlabeled item by classifier uncertainty, pick an informative
(optionally diversified) batch, collect labels, repeat until the label
budget is spent.  The final model then classifies the whole pool and the
predicted-relevant items (minus anything a human rejected) become the
curated set, optionally followed by a capped verification pass.

``CurationLoop`` is the resumable state machine; ``run_loop`` drives it
with a labeler callback.  The HTTP service drives the same machine, so a
scripted remote labeler and a direct call produce identical results for
identical seeds.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import pdist

from .coreset import CoresetConfig, stratified_fps
from .index import VectorIndex, query
from .kmeans import kmeans
from .linear import LinearModel, TrainConfig, predict_proba, train
from .store import (
    EmbeddingSet,
    Label,
    LabelRecord,
    LabelSource,
    LabelStore,
    now_ms,
)

UNCERTAINTY_STRATEGIES = ("least_confidence", "margin", "entropy", "random")
DIVERSITY_STRATEGIES = ("none", "proximity", "gaussian", "cluster")

# sub-stream tags for deriving independent seeded generators
_TAG_SEED_RANDOM = 1
_TAG_VALIDATION = 2
_TAG_SCORING = 3
_TAG_SELECTION = 4
_TAG_CORESET = 5


class LearnerError(ValueError):
    """Bad loop configuration, unknown starter, or malformed scores."""


@dataclass(frozen=True)
class LoopConfig:
    seed_nn: int = 64
    seed_random: int = 32
    batch_size: int = 64
    label_budget_fraction: float = 0.05
    uncertainty: str = "least_confidence"
    diversity: str = "none"
    relevance_threshold: float = 0.5
    seed: int = 0
    verify_cap: int = 200
    val_fraction: float = 0.1
    proximity_sigma: Optional[float] = None
    coreset_threshold: int = 200_000
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise LearnerError("batch_size must be >= 1")
        if self.seed_nn + self.seed_random < 2:
            raise LearnerError("seed_nn + seed_random must be >= 2")
        if not 0.0 < self.label_budget_fraction <= 1.0:
            raise LearnerError("label_budget_fraction must be in (0, 1]")
        if not 0.0 < self.relevance_threshold < 1.0:
            raise LearnerError("relevance_threshold must be in (0, 1)")
        if self.uncertainty not in UNCERTAINTY_STRATEGIES:
            raise LearnerError(f"unknown uncertainty strategy {self.uncertainty!r}")
        if self.diversity not in DIVERSITY_STRATEGIES:
            raise LearnerError(f"unknown diversity strategy {self.diversity!r}")
        if self.verify_cap < 0:
            raise LearnerError("verify_cap must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "LoopConfig":
        data = dict(data)
        if "train" in data and isinstance(data["train"], dict):
            data["train"] = TrainConfig(**data["train"])
        return LoopConfig(**data)


@dataclass(frozen=True)
class HistoryRecord:
    iteration: int
    labels_used: int
    f1_val: Optional[float]
    positives_found: int

    def as_line(self) -> str:
        f1 = "-" if self.f1_val is None else f"{self.f1_val:.4f}"
        return f"{self.iteration}\t{self.labels_used}\t{f1}\t{self.positives_found}"


@dataclass(frozen=True)
class CuratedItem:
    item_id: str
    score: float
    provenance: str  # seed | human | weak


@dataclass
class CuratedSet:
    items: list[CuratedItem]

    def ids(self) -> list[str]:
        return [it.item_id for it in self.items]

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class Batch:
    batch_id: str
    items: tuple[str, ...]
    iteration: int
    issued_at: int


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng((seed,) + tags)


def build_seed_set(
    index: VectorIndex,
    starter: Union[str, Sequence[str]],
    cfg: LoopConfig,
) -> list[str]:
    """Label requests seeding a run: the starter's nearest neighbors plus a
    seeded uniform draw of extra items, deduplicated, starter excluded."""
    starters = [starter] if isinstance(starter, str) else list(starter)
    embeddings = index.embeddings
    starter_rows = []
    for s in starters:
        try:
            starter_rows.append(embeddings.row_of(s))
        except KeyError:
            raise LearnerError(f"unknown starter item {s!r}") from None
    if cfg.seed_nn >= embeddings.count:
        raise LearnerError(
            f"seed_nn={cfg.seed_nn} must be smaller than the set ({embeddings.count})"
        )

    exclude = set(starters)
    neighbors: list[str] = []
    seen: set[str] = set()
    for row in starter_rows:
        hits = query(index, embeddings.vectors[row], k=cfg.seed_nn + len(starters))
        added = 0
        for h in hits:
            if added >= cfg.seed_nn:
                break
            if h.item_id in exclude or h.item_id in seen:
                continue
            neighbors.append(h.item_id)
            seen.add(h.item_id)
            added += 1

    taken = exclude | set(neighbors)
    pool = np.array(
        [m.row_id for m in embeddings.meta if m.item_id not in taken], dtype=np.int64
    )
    n_random = min(cfg.seed_random, len(pool))
    rng = _rng(cfg.seed, _TAG_SEED_RANDOM)
    randoms = (
        sorted(int(r) for r in rng.choice(pool, size=n_random, replace=False))
        if n_random
        else []
    )
    return neighbors + [embeddings.meta[r].item_id for r in randoms]


def score_uncertainty(
    probs: np.ndarray,
    strategy: str,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Informativeness scores, higher = more informative.

    least_confidence = 1 - max(p); margin = 1 - (p_top - p_second);
    entropy = -sum p ln p; random = seeded uniform draws.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if probs.shape[1] != 2:
        raise LearnerError(f"expected M x 2 probabilities, got {probs.shape}")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-4) or np.any(probs < -1e-12):
        raise LearnerError("malformed probability rows")
    if strategy == "least_confidence":
        return 1.0 - probs.max(axis=1)
    if strategy == "margin":
        return 1.0 - np.abs(probs[:, 0] - probs[:, 1])
    if strategy == "entropy":
        p = np.clip(probs, 1e-300, 1.0)
        ent = -(p * np.log(p)).sum(axis=1)
        return np.where(probs.max(axis=1) >= 1.0, 0.0, ent)
    if strategy == "random":
        if rng is None:
            raise LearnerError("random strategy needs a seeded generator")
        return rng.uniform(size=len(probs))
    raise LearnerError(f"unknown uncertainty strategy {strategy!r}")


def _median_pairwise(vectors: np.ndarray, rng: np.random.Generator) -> float:
    n = len(vectors)
    rows = np.sort(rng.choice(n, size=min(1024, n), replace=False))
    d = pdist(vectors[rows].astype(np.float64))
    return float(np.median(d)) if len(d) else 0.0


def select_batch(
    scores: np.ndarray,
    vectors: np.ndarray,
    diversity: str,
    batch_size: int,
    seed: Union[int, tuple],
    row_ids: Optional[np.ndarray] = None,
    sigma: Optional[float] = None,
) -> list[int]:
    """Choose ``batch_size`` distinct rows from the scored pool.

    none: top scores.  proximity: iterative pick with scores of remaining
    rows damped by ``1 - exp(-d^2 / 2 sigma^2)`` around each pick.  gaussian:
    weighted draw without replacement, weights = scores perturbed by seeded
    Gaussian noise at one score-standard-deviation.  cluster: k-means the
    pool into ``batch_size`` clusters and take each cluster's top scorer.
    Ties always break toward the lower row id.
    """
    scores = np.asarray(scores, dtype=np.float64).copy()
    vectors = np.asarray(vectors, dtype=np.float64)
    m = len(scores)
    if row_ids is None:
        row_ids = np.arange(m, dtype=np.int64)
    else:
        row_ids = np.asarray(row_ids, dtype=np.int64)
    if batch_size > m:
        raise LearnerError(f"batch_size {batch_size} exceeds pool of {m}")
    rng = np.random.default_rng(seed)

    if diversity == "none":
        order = np.lexsort((row_ids, -scores))
        return [int(row_ids[i]) for i in order[:batch_size]]

    if diversity == "proximity":
        if sigma is None:
            sigma = _median_pairwise(vectors, rng)
        chosen: list[int] = []
        alive = np.ones(m, dtype=bool)
        work = scores.copy()
        for _ in range(batch_size):
            cand = np.flatnonzero(alive)
            best = cand[np.lexsort((row_ids[cand], -work[cand]))[0]]
            chosen.append(int(row_ids[best]))
            alive[best] = False
            rest = np.flatnonzero(alive)
            if len(rest) == 0:
                break
            d2 = np.sum((vectors[rest] - vectors[best]) ** 2, axis=1)
            if sigma > 0.0:
                work[rest] *= 1.0 - np.exp(-d2 / (2.0 * sigma * sigma))
            else:
                work[rest] *= (d2 > 0.0).astype(np.float64)
        return chosen

    if diversity == "gaussian":
        scale = float(scores.std())
        perturbed = scores + rng.normal(size=m) * scale
        weights = np.clip(perturbed, 1e-12, None)
        picks = rng.choice(m, size=batch_size, replace=False, p=weights / weights.sum())
        return [int(row_ids[i]) for i in picks]

    if diversity == "cluster":
        k = min(batch_size, m)
        _, assign = kmeans(vectors, k, seed=rng)
        chosen = []
        taken = np.zeros(m, dtype=bool)
        for c in range(k):
            members = np.flatnonzero(assign == c)
            if len(members) == 0:
                continue
            best = members[np.lexsort((row_ids[members], -scores[members]))[0]]
            chosen.append(int(row_ids[best]))
            taken[best] = True
        if len(chosen) < batch_size:  # empty clusters: fill with best remaining
            rest = np.flatnonzero(~taken)
            order = np.lexsort((row_ids[rest], -scores[rest]))
            for i in order[: batch_size - len(chosen)]:
                chosen.append(int(row_ids[rest[i]]))
        return chosen

    raise LearnerError(f"unknown diversity strategy {diversity!r}")


class LoopAborted(RuntimeError):
    """Labeler failure; partial state was persisted when a state dir was given."""

    def __init__(self, message: str, state_dir: Optional[Path] = None):
        super().__init__(message)
        self.state_dir = state_dir


class CurationLoop:
    """Deterministic curation state machine: seeding -> looping -> verifying -> done.

    Labels are submitted in (possibly partial) batches; once the current
    batch is complete the machine retrains, scores the pool, and issues the
    next batch.  All randomness derives from ``cfg.seed``, so two machines
    fed the same labels walk identical paths.
    """

    def __init__(
        self,
        embeddings: EmbeddingSet,
        index: VectorIndex,
        starter: Union[str, Sequence[str]],
        cfg: LoopConfig,
        clock: Callable[[], int] = now_ms,
        defer_advance: bool = False,
    ):
        self.embeddings = embeddings
        self.index = index
        self.starters = [starter] if isinstance(starter, str) else list(starter)
        self.cfg = cfg
        self.clock = clock
        self.defer_advance = defer_advance
        self._needs_advance = False
        n = embeddings.count
        self.budget = math.ceil(cfg.label_budget_fraction * n)
        self.phase = "seeding"
        self.iteration = 0
        self.model: Optional[LinearModel] = None
        self.label_store = LabelStore()
        self.history: list[HistoryRecord] = []
        self.curated: Optional[CuratedSet] = None
        self.seed_labels = 0
        self.loop_labels = 0
        self.verify_labels = 0
        self._requested: set[str] = set()
        self._batch_serial = 0
        self._pending: dict[str, Label] = {}
        self._completed: dict[str, dict[str, Label]] = {}

        val_rng = _rng(cfg.seed, _TAG_VALIDATION)
        n_val = max(1, int(round(cfg.val_fraction * n))) if n else 0
        self._val_rows = np.sort(val_rng.choice(n, size=min(n_val, n), replace=False))
        self._truth = self._binary_truth()

        seed_items = build_seed_set(index, self.starters, cfg)
        self._seed_size = len(seed_items)
        self.current_batch: Optional[Batch] = self._issue(seed_items)

    # -- batch plumbing -------------------------------------------------

    def _issue(self, items: Sequence[str]) -> Optional[Batch]:
        if not items:
            return None
        dup = set(items) & self._requested
        if dup:
            raise LearnerError(f"items requested twice: {sorted(dup)[:3]}")
        self._requested |= set(items)
        batch = Batch(
            batch_id=f"batch-{self._batch_serial:05d}",
            items=tuple(items),
            iteration=self.iteration,
            issued_at=self.clock(),
        )
        self._batch_serial += 1
        self._pending = {}
        return batch

    @property
    def labels_used(self) -> int:
        """Distinct items the labeler has answered, partial batches included."""
        return len({
            r.item_id for r in self.label_store if r.source != LabelSource.WEAK
        })

    @property
    def request_budget(self) -> int:
        """Expected total label requests: the seed set plus the loop budget."""
        return self._seed_size + self.budget

    def pending_requests(self) -> list[str]:
        """Items of the current batch still awaiting a label."""
        if self.current_batch is None:
            return []
        return [i for i in self.current_batch.items if i not in self._pending]

    def submit(self, labels: dict[str, Label]) -> int:
        """Merge labels for the current batch (appending to the label log at
        once, so partial submissions survive a crash); advances the machine
        when the batch completes.  Returns the number of records accepted."""
        if self.phase == "done" or self.current_batch is None:
            raise LearnerError("no outstanding batch")
        batch_items = set(self.current_batch.items)
        foreign = [i for i in labels if i not in batch_items]
        if foreign:
            raise LearnerError(f"items not in current batch: {sorted(foreign)[:3]}")
        source = LabelSource.SEED if self.phase == "seeding" else LabelSource.HUMAN
        for item in self.current_batch.items:  # batch order keeps the log stable
            if item in labels:
                label = Label(labels[item])
                self._pending[item] = label
                self.label_store.append(
                    LabelRecord(item, label, source, self.iteration, self.clock())
                )
        if len(self._pending) == len(self.current_batch.items):
            if self.defer_advance:
                self._needs_advance = True
            else:
                self._complete_batch()
        return len(labels)

    @property
    def needs_advance(self) -> bool:
        """True when a complete batch awaits the (deferred) retrain step."""
        return self._needs_advance

    def completed_batch(self, batch_id: str) -> Optional[dict[str, Label]]:
        """Submitted labels of an already-completed batch, if any."""
        return self._completed.get(batch_id)

    def advance_pending(self) -> None:
        """Run the retrain/next-batch step for a deferred completed batch."""
        if self._needs_advance:
            self._needs_advance = False
            self._complete_batch()

    def _complete_batch(self) -> None:
        batch = self.current_batch
        assert batch is not None
        self._completed[batch.batch_id] = dict(self._pending)
        n = len(batch.items)
        self.current_batch = None
        self._pending = {}
        if self.phase == "seeding":
            self.seed_labels += n
            self._advance()
        elif self.phase == "looping":
            self.loop_labels += n
            self._advance()
        elif self.phase == "verifying":
            self.verify_labels += n
            self._apply_verification()

    # -- core loop ------------------------------------------------------

    def _labeled_rows(self) -> tuple[np.ndarray, np.ndarray]:
        rows, ys = [], []
        for item, rec in self.label_store.effective().items():
            if rec.source == LabelSource.WEAK:
                continue
            rows.append(self.embeddings.row_of(item))
            ys.append(1 if rec.label == Label.RELEVANT else 0)
        order = np.argsort(rows)
        return np.asarray(rows)[order], np.asarray(ys, dtype=np.int64)[order]

    def _unlabeled_rows(self) -> np.ndarray:
        labeled = {
            self.embeddings.row_of(i)
            for i, rec in self.label_store.effective().items()
            if rec.source != LabelSource.WEAK
        }
        return np.array(
            [r for r in range(self.embeddings.count) if r not in labeled], dtype=np.int64
        )

    def _binary_truth(self) -> Optional[np.ndarray]:
        metas = self.embeddings.meta
        if any(m.true_label is None for m in metas):
            return None
        starter_class = metas[self.embeddings.row_of(self.starters[0])].true_label
        return np.array([1 if m.true_label == starter_class else 0 for m in metas])

    def _positives_found(self) -> int:
        return sum(
            1
            for rec in self.label_store.effective().values()
            if rec.label == Label.RELEVANT and rec.source != LabelSource.WEAK
        )

    def _record_history(self) -> None:
        f1_val = None
        if self.model is not None and self._truth is not None and len(self._val_rows):
            from .bench import f1  # local import avoids a module cycle

            probs = predict_proba(self.model, self.embeddings.vectors[self._val_rows])
            preds = (probs[:, 1] >= self.cfg.relevance_threshold).astype(int)
            truth = self._truth[self._val_rows]
            if truth.sum() > 0:
                f1_val = f1(preds, truth)
        self.history.append(
            HistoryRecord(self.iteration, self.labels_used, f1_val, self._positives_found())
        )

    def _train_current(self) -> None:
        rows, ys = self._labeled_rows()
        if len(np.unique(ys)) < 2:
            return  # single-class labels so far; keep previous model (if any)
        features = self.embeddings.vectors[rows]
        self.model = train(features, ys, replace(self.cfg.train, seed=self.cfg.seed))

    def _advance(self) -> None:
        self._train_current()
        self.iteration += 1
        self._record_history()
        self.phase = "looping"
        pool = self._unlabeled_rows()
        remaining = self.budget - self.loop_labels
        if remaining <= 0 or len(pool) == 0:
            self._finalize()
            return
        size = min(self.cfg.batch_size, remaining, len(pool))
        rows = self._select_rows(pool, size)
        self.current_batch = self._issue([self.embeddings.meta[r].item_id for r in rows])

    def _pool_scores(self, pool: np.ndarray) -> np.ndarray:
        rng = _rng(self.cfg.seed, _TAG_SCORING, self.iteration)
        if self.model is None:
            return rng.uniform(size=len(pool))  # nothing learnable yet
        probs = predict_proba(self.model, self.embeddings.vectors[pool])
        return score_uncertainty(probs, self.cfg.uncertainty, rng)

    def _select_rows(self, pool: np.ndarray, size: int) -> list[int]:
        if len(pool) > self.cfg.coreset_threshold:
            return self._select_rows_coreset(pool, size)
        scores = self._pool_scores(pool)
        return select_batch(
            scores,
            self.embeddings.vectors[pool],
            self.cfg.diversity,
            size,
            seed=(self.cfg.seed, _TAG_SELECTION, self.iteration),
            row_ids=pool,
            sigma=self.cfg.proximity_sigma,
        )

    def _select_rows_coreset(self, pool: np.ndarray, size: int) -> list[int]:
        """Score only a diverse subsample of a huge pool, then expand each
        picked point with its nearest unlabeled neighbor from the full pool."""
        sub_view = EmbeddingSet(
            self.embeddings.vectors[pool],
            [replace(self.embeddings.meta[r], row_id=i, item_id=f"sub-{i}")
             for i, r in enumerate(pool)],
        )
        cs = stratified_fps(
            sub_view,
            CoresetConfig(
                subset_size=min(self.cfg.coreset_threshold, len(pool)),
                start_row=0,
                random_sample_size=min(1024, len(pool)),
                resample_period=8,
                seed=int(_rng(self.cfg.seed, _TAG_CORESET, self.iteration).integers(2**31)),
            ),
        )
        sub_rows = pool[np.asarray(cs.rows)]
        n_picks = max(1, size // 2)
        scores = self._pool_scores(sub_rows)
        picks = select_batch(
            scores,
            self.embeddings.vectors[sub_rows],
            self.cfg.diversity,
            min(n_picks, len(sub_rows)),
            seed=(self.cfg.seed, _TAG_SELECTION, self.iteration),
            row_ids=sub_rows,
            sigma=self.cfg.proximity_sigma,
        )
        chosen: list[int] = list(picks)
        chosen_set = set(chosen)
        pool_vecs = self.embeddings.vectors[pool].astype(np.float64)
        for pick in picks:
            if len(chosen) >= size:
                break
            d = np.linalg.norm(pool_vecs - self.embeddings.vectors[pick], axis=1)
            order = np.lexsort((pool, d))
            for j in order:
                r = int(pool[j])
                if r not in chosen_set:
                    chosen.append(r)
                    chosen_set.add(r)
                    break
        for r in sub_rows:  # pad from the scored subsample if still short
            if len(chosen) >= size:
                break
            if int(r) not in chosen_set:
                chosen.append(int(r))
                chosen_set.add(int(r))
        return chosen[:size]

    # -- finalization ---------------------------------------------------

    def _finalize(self) -> None:
        effective = self.label_store.effective()
        entries: list[CuratedItem] = []
        if self.model is not None:
            probs = predict_proba(self.model, self.embeddings.vectors)[:, 1]
            for m in self.embeddings.meta:
                rec = effective.get(m.item_id)
                labeled = rec is not None and rec.source != LabelSource.WEAK
                if labeled and rec.label == Label.NOT_RELEVANT:
                    continue  # a human "no" beats any score
                if labeled or probs[m.row_id] >= self.cfg.relevance_threshold:
                    prov = rec.source.value if labeled else "weak"
                    entries.append(CuratedItem(m.item_id, float(probs[m.row_id]), prov))
        else:
            for item, rec in effective.items():
                if rec.source != LabelSource.WEAK and rec.label == Label.RELEVANT:
                    entries.append(CuratedItem(item, 1.0, rec.source.value))
        entries.sort(key=lambda it: (-it.score, self.embeddings.row_of(it.item_id)))
        self.curated = CuratedSet(entries)
        for it in entries:
            if it.provenance == "weak":
                self.label_store.append(
                    LabelRecord(it.item_id, Label.RELEVANT, LabelSource.WEAK,
                                self.iteration, self.clock())
                )
        verify_items = [it.item_id for it in entries if it.provenance == "weak"]
        verify_items = verify_items[: self.cfg.verify_cap]
        if verify_items:
            self.phase = "verifying"
            self.current_batch = self._issue(verify_items)
        else:
            self.phase = "done"
            self.current_batch = None

    def _apply_verification(self) -> None:
        effective = self.label_store.effective()
        kept = []
        for it in self.curated.items:
            rec = effective.get(it.item_id)
            if rec is not None and rec.source == LabelSource.HUMAN and rec.label == Label.NOT_RELEVANT:
                continue
            prov = it.provenance
            if rec is not None and rec.source == LabelSource.HUMAN and it.provenance == "weak":
                prov = "human"
            kept.append(CuratedItem(it.item_id, it.score, prov))
        self.curated = CuratedSet(kept)
        self.phase = "done"
        self.current_batch = None

    # -- persistence ----------------------------------------------------

    def save_state(self, state_dir: Union[str, Path]) -> None:
        state_dir = Path(state_dir)
        state_dir.mkdir(parents=True, exist_ok=True)
        snapshot = {"starters": self.starters, "config": self.cfg.to_dict()}
        (state_dir / "session.json").write_text(json.dumps(snapshot, indent=2))
        self.label_store.save(state_dir / "labels.tsv")

    @classmethod
    def replay(
        cls,
        embeddings: EmbeddingSet,
        index: VectorIndex,
        starter: Union[str, Sequence[str]],
        cfg: LoopConfig,
        records: Sequence[LabelRecord],
        clock: Callable[[], int] = now_ms,
    ) -> "CurationLoop":
        """Rebuild a machine by feeding it previously collected labels.

        Weak records are skipped (the machine regenerates them); the machine
        is deterministic, so recorded batches line up with reissued ones.
        """
        loop = cls(embeddings, index, starter, cfg, clock=clock)
        last: dict[str, Label] = {}
        for rec in records:
            if rec.source != LabelSource.WEAK:
                last[rec.item_id] = rec.label
        fed: set[str] = set()
        while loop.phase != "done" and loop.current_batch is not None:
            batch_items = loop.current_batch.items
            available = {
                i: last[i] for i in batch_items if i in last and i not in fed
            }
            if not available:
                break
            fed |= set(available)
            loop.submit(available)
            if len(available) < len(batch_items):
                break  # partially labeled batch at time of snapshot
        return loop

    @classmethod
    def resume(
        cls,
        embeddings: EmbeddingSet,
        index: VectorIndex,
        state_dir: Union[str, Path],
        clock: Callable[[], int] = now_ms,
    ) -> "CurationLoop":
        state_dir = Path(state_dir)
        snapshot = json.loads((state_dir / "session.json").read_text())
        cfg = LoopConfig.from_dict(snapshot["config"])
        labels_path = state_dir / "labels.tsv"
        records = list(LabelStore.load(labels_path)) if labels_path.exists() else []
        return cls.replay(embeddings, index, snapshot["starters"], cfg, records, clock=clock)


def run_loop(
    embeddings: EmbeddingSet,
    index: VectorIndex,
    starter: Union[str, Sequence[str]],
    labeler: Callable[[str], Label],
    cfg: LoopConfig,
    state_dir: Optional[Union[str, Path]] = None,
    clock: Callable[[], int] = now_ms,
) -> tuple[Optional[LinearModel], CuratedSet, list[HistoryRecord]]:
    """Drive a CurationLoop to completion with a labeler callback.

    If the labeler raises and ``state_dir`` is given, collected labels and the
    session snapshot are persisted there before LoopAborted is raised;
    ``CurationLoop.resume`` continues such a run.
    """
    loop = CurationLoop(embeddings, index, starter, cfg, clock=clock)
    return drive_loop(loop, labeler, state_dir=state_dir)


def drive_loop(
    loop: CurationLoop,
    labeler: Callable[[str], Label],
    state_dir: Optional[Union[str, Path]] = None,
) -> tuple[Optional[LinearModel], CuratedSet, list[HistoryRecord]]:
    """Feed an existing machine (fresh or resumed) from a labeler callback."""
    while loop.phase != "done":
        request = loop.pending_requests()
        if not request:
            raise LearnerError("loop stalled with no pending requests")
        answers: dict[str, Label] = {}
        for item in request:
            try:
                answers[item] = Label(labeler(item))
            except Exception as exc:
                if answers:
                    loop.submit(answers)
                if state_dir is not None:
                    loop.save_state(state_dir)
                raise LoopAborted(
                    f"labeler failed on {item!r}: {exc}",
                    state_dir=Path(state_dir) if state_dir else None,
                ) from exc
        loop.submit(answers)
    assert loop.curated is not None
    return loop.model, loop.curated, loop.history


def oracle_labeler(embeddings: EmbeddingSet, positive_class: int) -> Callable[[str], Label]:
    """Metadata oracle: relevant iff the item's true_label matches."""

    def _label(item_id: str) -> Label:
        meta = embeddings.meta[embeddings.row_of(item_id)]
        if meta.true_label is None:
            raise LearnerError(f"item {item_id!r} has no true_label")
        return Label.RELEVANT if meta.true_label == positive_class else Label.NOT_RELEVANT

    return _label


__all__ = [
    "Batch",
    "CuratedItem",
    "CuratedSet",
    "CurationLoop",
    "DIVERSITY_STRATEGIES",
    "HistoryRecord",
    "LearnerError",
    "LoopAborted",
    "LoopConfig",
    "UNCERTAINTY_STRATEGIES",
    "build_seed_set",
    "drive_loop",
    "oracle_labeler",
    "run_loop",
    "score_uncertainty",
    "select_batch",
]
