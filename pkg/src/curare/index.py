"""Exact and partitioned nearest-neighbor indexes over an EmbeddingSet.

Partitioned mode groups rows by their metadata facet cell (date bucket,
resolution level, product), then runs seeded k-means within each cell; a
query probes only the ``nprobe`` partitions whose centroids are closest.
Exact mode is a single partition scanned in full.  All tie-breaks are by
ascending row id so results are reproducible across runs.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .kmeans import kmeans
from .store import ABSENT, EmbeddingSet, ItemMeta, load_embeddings

log = logging.getLogger(__name__)

INDEX_MAGIC = b"CURI"
METRICS = ("cosine", "euclidean")
MODES = ("exact", "partitioned")
DEFAULT_NPROBE = 4


class IndexError_(ValueError):
    """Invalid build parameters, dimension mismatch, or malformed index file."""


@dataclass(frozen=True)
class PartitionKey:
    """Facet cell (date bucket, resolution, product) plus a centroid id within it."""

    date_bucket: Optional[str] = None
    resolution_level: Optional[int] = None
    product: Optional[str] = None
    centroid_id: int = 0

    def cell(self) -> tuple:
        return (self.date_bucket, self.resolution_level, self.product)


@dataclass
class Partition:
    key: PartitionKey
    centroid: np.ndarray  # (dim,) float32
    members: np.ndarray  # row ids, int64, ascending


@dataclass(frozen=True)
class Hit:
    row_id: int
    item_id: str
    distance: float


@dataclass(frozen=True)
class FacetFilter:
    """Metadata predicate: product/resolution equality and inclusive date range."""

    product: Optional[str] = None
    resolution_level: Optional[int] = None
    date_from: Optional[str] = None
    date_to: Optional[str] = None

    def matches_meta(self, meta: ItemMeta) -> bool:
        return self._matches(meta.date, meta.resolution_level, meta.product)

    def matches_cell(self, cell: tuple) -> bool:
        return self._matches(cell[0], cell[1], cell[2])

    def _matches(self, date, resolution, product) -> bool:
        if self.product is not None and product != self.product:
            return False
        if self.resolution_level is not None and resolution != self.resolution_level:
            return False
        if self.date_from is not None or self.date_to is not None:
            if date is None:
                return False
            if self.date_from is not None and date < self.date_from:
                return False
            if self.date_to is not None and date > self.date_to:
                return False
        return True


def _cell_of(meta: ItemMeta) -> tuple:
    # Date bucket is the calendar day itself.
    return (meta.date, meta.resolution_level, meta.product)


def _cell_sort_key(cell: tuple) -> tuple:
    date, resolution, product = cell
    return (date or "", -1 if resolution is None else resolution, product or "")


class VectorIndex:
    """Metric index over an EmbeddingSet; immutable after build."""

    def __init__(
        self,
        embeddings: EmbeddingSet,
        metric: str,
        mode: str,
        partitions: list[Partition],
        nprobe: int = DEFAULT_NPROBE,
    ):
        if metric not in METRICS:
            raise IndexError_(f"metric must be one of {METRICS}, got {metric!r}")
        if mode not in MODES:
            raise IndexError_(f"mode must be one of {MODES}, got {mode!r}")
        if not partitions:
            raise IndexError_("index needs at least one partition")
        if nprobe < 1 or nprobe > len(partitions):
            raise IndexError_(f"nprobe must be in [1, {len(partitions)}]")
        self.embeddings = embeddings
        self.metric = metric
        self.mode = mode
        self.partitions = partitions
        self.nprobe = nprobe
        # float64 working copies keep query arithmetic stable
        self._vectors = embeddings.vectors.astype(np.float64)
        self._norms = np.linalg.norm(self._vectors, axis=1)
        self._sq_norms = self._norms**2

    @property
    def dim(self) -> int:
        return self.embeddings.dim

    def _distances(self, rows: Optional[np.ndarray], query: np.ndarray) -> np.ndarray:
        # rows=None means the whole set, avoiding a fancy-index copy
        vecs = self._vectors if rows is None else self._vectors[rows]
        norms = self._norms if rows is None else self._norms[rows]
        if self.metric == "cosine":
            qn = float(np.linalg.norm(query))
            dist = np.full(len(vecs), 2.0)
            if qn == 0.0:
                return dist
            nz = norms > 0.0
            if nz.all():
                sims = (vecs @ query) / (norms * qn)
                return np.clip(1.0 - sims, 0.0, 2.0)
            sims = (vecs[nz] @ query) / (norms[nz] * qn)
            dist[nz] = np.clip(1.0 - sims, 0.0, 2.0)
            return dist
        sq = self._sq_norms if rows is None else self._sq_norms[rows]
        d2 = sq - 2.0 * (vecs @ query) + float(query @ query)
        return np.sqrt(np.maximum(d2, 0.0))

    def _centroid_distances(self, centroids: np.ndarray, query: np.ndarray) -> np.ndarray:
        cents = centroids.astype(np.float64)
        if self.metric == "cosine":
            qn = float(np.linalg.norm(query))
            dist = np.full(len(cents), 2.0)
            if qn == 0.0:
                return dist
            norms = np.linalg.norm(cents, axis=1)
            nz = norms > 0.0
            sims = (cents[nz] @ query) / (norms[nz] * qn)
            dist[nz] = np.clip(1.0 - sims, 0.0, 2.0)
            return dist
        return np.linalg.norm(cents - query, axis=1)


def build_index(
    embedding_set: EmbeddingSet,
    metric: str = "cosine",
    mode: str = "exact",
    partitions_per_cell: int = 1,
    seed: int = 0,
    nprobe: int = DEFAULT_NPROBE,
) -> VectorIndex:
    """Build an index.  Partitioned mode clusters each facet cell with seeded
    k-means into ``partitions_per_cell`` partitions (clamped to the cell size,
    with a warning, when the cell is smaller)."""
    if embedding_set.count < 1:
        raise IndexError_("cannot index an empty set")
    if partitions_per_cell < 1:
        raise IndexError_("partitions_per_cell must be >= 1")

    if mode == "exact":
        part = Partition(
            key=PartitionKey(),
            centroid=np.zeros(embedding_set.dim, dtype=np.float32),
            members=np.arange(embedding_set.count, dtype=np.int64),
        )
        return VectorIndex(embedding_set, metric, mode, [part], nprobe=1)

    cells: dict[tuple, list[int]] = {}
    for m in embedding_set.meta:
        cells.setdefault(_cell_of(m), []).append(m.row_id)

    rng = np.random.default_rng(seed)
    partitions: list[Partition] = []
    for cell in sorted(cells, key=_cell_sort_key):
        rows = np.array(sorted(cells[cell]), dtype=np.int64)
        k = partitions_per_cell
        if k > len(rows):
            log.warning(
                "cell %s has %d rows < partitions_per_cell=%d; clamping",
                cell, len(rows), partitions_per_cell,
            )
            k = len(rows)
        vecs = embedding_set.vectors[rows].astype(np.float64)
        if metric == "cosine":
            norms = np.linalg.norm(vecs, axis=1, keepdims=True)
            vecs = np.where(norms > 0.0, vecs / np.maximum(norms, 1e-300), vecs)
        centroids, assign = kmeans(vecs, k, seed=rng)
        for c in range(k):
            members = rows[assign == c]
            partitions.append(
                Partition(
                    key=PartitionKey(cell[0], cell[1], cell[2], centroid_id=c),
                    centroid=centroids[c].astype(np.float32),
                    members=members,
                )
            )
    nprobe_eff = min(nprobe, len(partitions))
    return VectorIndex(embedding_set, metric, mode, partitions, nprobe=nprobe_eff)


def query(
    index: VectorIndex,
    vector: Union[np.ndarray, Sequence[float]],
    k: int,
    facet_filter: Optional[FacetFilter] = None,
    nprobe: Optional[int] = None,
) -> list[Hit]:
    """Top-k nearest rows under the index metric among rows passing the filter.

    Exact mode scans every passing row; partitioned mode scans the ``nprobe``
    partitions with the nearest centroids among filter-passing cells.  Hits
    come back sorted by (distance, row_id) ascending.
    """
    q = np.asarray(vector, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise IndexError_(f"query dim {q.shape[0]} != index dim {index.dim}")
    if k < 1:
        raise IndexError_("k must be >= 1")
    if not np.all(np.isfinite(q)):
        raise IndexError_("query vector must be finite")

    if index.mode == "exact":
        if facet_filter is None:
            rows = None
        else:
            rows = np.array(
                [m.row_id for m in index.embeddings.meta if facet_filter.matches_meta(m)],
                dtype=np.int64,
            )
    else:
        parts = index.partitions
        if facet_filter is not None:
            parts = [p for p in parts if facet_filter.matches_cell(p.key.cell())]
        if not parts:
            return []
        centroids = np.stack([p.centroid for p in parts])
        cdist = index._centroid_distances(centroids, q)
        n_probe = min(nprobe if nprobe is not None else index.nprobe, len(parts))
        order = np.lexsort((np.arange(len(parts)), cdist))[:n_probe]
        member_lists = [parts[i].members for i in order if len(parts[i].members)]
        if not member_lists:
            return []
        rows = np.unique(np.concatenate(member_lists))

    if rows is not None and len(rows) == 0:
        return []
    dist = index._distances(rows, q)
    if rows is None:
        rows = np.arange(index.embeddings.count, dtype=np.int64)
    take = min(k, len(rows))
    if len(rows) > 4 * take + 1024:
        # exact top-k without sorting the whole pool: everything at or below
        # the k-th distance stays in play so row-id tie-breaks remain exact
        kth = np.partition(dist, take - 1)[take - 1]
        cand = np.flatnonzero(dist <= kth)
        order = cand[np.lexsort((rows[cand], dist[cand]))[:take]]
    else:
        order = np.lexsort((rows, dist))[:take]
    meta = index.embeddings.meta
    return [
        Hit(row_id=int(rows[i]), item_id=meta[int(rows[i])].item_id, distance=float(dist[i]))
        for i in order
    ]


def recall_at_k(
    index: VectorIndex,
    queries: np.ndarray,
    k: int,
    oracle: VectorIndex,
    nprobe: Optional[int] = None,
) -> float:
    """Mean over queries of |approx top-k  ∩  exact top-k| / k."""
    if (
        index.embeddings.count != oracle.embeddings.count
        or index.embeddings.dim != oracle.embeddings.dim
    ):
        raise IndexError_("index and oracle must be built over the same set")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    total = 0.0
    for q in queries:
        approx = {h.row_id for h in query(index, q, k, nprobe=nprobe)}
        exact = {h.row_id for h in query(oracle, q, k)}
        total += len(approx & exact) / k
    return total / len(queries)


def _pack_str(value: Optional[str]) -> bytes:
    raw = (value if value is not None else ABSENT).encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(buf: bytes, off: int) -> tuple[Optional[str], int]:
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    raw = buf[off : off + n].decode("utf-8")
    return (None if raw == ABSENT else raw), off + n


def save_index(index: VectorIndex, path: Union[str, Path], source_path: Union[str, Path]) -> None:
    """Persist the partition table; vectors stay in the referenced embedding file."""
    out = bytearray()
    out += INDEX_MAGIC
    out += struct.pack(
        "<BBII",
        METRICS.index(index.metric),
        MODES.index(index.mode),
        index.dim,
        index.nprobe,
    )
    out += _pack_str(str(source_path))
    out += struct.pack("<I", len(index.partitions))
    for p in index.partitions:
        out += _pack_str(p.key.date_bucket)
        out += struct.pack("<i", -1 if p.key.resolution_level is None else p.key.resolution_level)
        out += _pack_str(p.key.product)
        out += struct.pack("<I", p.key.centroid_id)
        out += p.centroid.astype("<f4").tobytes()
        out += struct.pack("<I", len(p.members))
        out += p.members.astype("<u4").tobytes()
    Path(path).write_bytes(bytes(out))


def load_index(
    path: Union[str, Path], embeddings: Optional[EmbeddingSet] = None
) -> VectorIndex:
    """Load a persisted index; re-reads the referenced embedding file unless
    an already-loaded set is supplied."""
    buf = Path(path).read_bytes()
    if buf[:4] != INDEX_MAGIC:
        raise IndexError_(f"bad magic in {path}")
    metric_i, mode_i, dim, nprobe = struct.unpack_from("<BBII", buf, 4)
    off = 4 + struct.calcsize("<BBII")
    source, off = _unpack_str(buf, off)
    (n_parts,) = struct.unpack_from("<I", buf, off)
    off += 4
    partitions: list[Partition] = []
    for _ in range(n_parts):
        date_bucket, off = _unpack_str(buf, off)
        (resolution,) = struct.unpack_from("<i", buf, off)
        off += 4
        product, off = _unpack_str(buf, off)
        (centroid_id,) = struct.unpack_from("<I", buf, off)
        off += 4
        centroid = np.frombuffer(buf, dtype="<f4", count=dim, offset=off).copy()
        off += dim * 4
        (n_members,) = struct.unpack_from("<I", buf, off)
        off += 4
        members = np.frombuffer(buf, dtype="<u4", count=n_members, offset=off).astype(np.int64)
        off += n_members * 4
        partitions.append(
            Partition(
                key=PartitionKey(date_bucket, None if resolution < 0 else resolution,
                                 product, centroid_id),
                centroid=centroid,
                members=members,
            )
        )
    if embeddings is None:
        if source is None:
            raise IndexError_("index file has no embedded source path")
        embeddings = load_embeddings(source)
    return VectorIndex(embeddings, METRICS[metric_i], MODES[mode_i], partitions, nprobe=nprobe)


__all__ = [
    "DEFAULT_NPROBE",
    "FacetFilter",
    "Hit",
    "IndexError_",
    "Partition",
    "PartitionKey",
    "VectorIndex",
    "build_index",
    "load_index",
    "query",
    "recall_at_k",
    "save_index",
]
