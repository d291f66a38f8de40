"""On-disk embedding and metadata formats, plus the binary-relevance label log.

An embedding file starts with the magic bytes ``CUR1``, a little-endian
uint32 row count and uint32 dimension, followed by ``count * dim``
little-endian IEEE-754 float32 values in row-major order.  A tab-separated
sidecar at ``<path>.meta.tsv`` carries one line per row:
``item_id  uri  date  resolution_level  product  true_label`` with ``-``
as the absent-field sentinel.
"""
from __future__ import annotations

import re
import struct
import time
from dataclasses import dataclass
from datetime import date as _date
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import numpy as np

MAGIC = b"CUR1"
HEADER_BYTES = 12
ABSENT = "-"
_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


class StoreError(ValueError):
    """Invalid embedding set, malformed file, or sidecar mismatch."""


class Label(str, Enum):
    RELEVANT = "relevant"
    NOT_RELEVANT = "not_relevant"


class LabelSource(str, Enum):
    SEED = "seed"
    HUMAN = "human"
    WEAK = "weak"


@dataclass(frozen=True)
class ItemMeta:
    """Per-row metadata; ``row_id`` is the internal id, ``item_id`` the external one."""

    row_id: int
    item_id: str
    uri: str
    date: Optional[str] = None
    resolution_level: Optional[int] = None
    product: Optional[str] = None
    true_label: Optional[int] = None


def _check_field(value: str, what: str) -> str:
    if "\t" in value or "\n" in value or "\r" in value:
        raise StoreError(f"{what} must not contain tab or newline: {value!r}")
    return value


def _check_date(value: str) -> str:
    if not _DATE_RE.match(value):
        raise StoreError(f"date must be YYYY-MM-DD, got {value!r}")
    try:
        _date.fromisoformat(value)
    except ValueError as exc:
        raise StoreError(f"invalid calendar day {value!r}") from exc
    return value


class EmbeddingSet:
    """Immutable dense float32 matrix with row-aligned metadata.

    Invariants enforced at construction: vectors are finite float32 of shape
    ``(count, dim)``, ``meta[i].row_id == i``, and item ids are unique.
    """

    def __init__(self, vectors: np.ndarray, meta: list[ItemMeta]):
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise StoreError(f"vectors must be 2-D, got shape {vectors.shape}")
        if vectors.shape[1] < 1:
            raise StoreError("dim must be positive")
        if not np.all(np.isfinite(vectors)):
            raise StoreError("vectors contain NaN or infinity")
        if len(meta) != vectors.shape[0]:
            raise StoreError(
                f"metadata rows ({len(meta)}) != vector rows ({vectors.shape[0]})"
            )
        seen: set[str] = set()
        for i, m in enumerate(meta):
            if m.row_id != i:
                raise StoreError(f"meta[{i}].row_id is {m.row_id}, expected {i}")
            if m.item_id in seen:
                raise StoreError(f"duplicate item_id {m.item_id!r}")
            seen.add(m.item_id)
            _check_field(m.item_id, "item_id")
            _check_field(m.uri, "uri")
            if m.product is not None:
                _check_field(m.product, "product")
            if m.date is not None:
                _check_date(m.date)
            if m.resolution_level is not None and m.resolution_level < 0:
                raise StoreError("resolution_level must be non-negative")
        vectors.setflags(write=False)
        self.vectors = vectors
        self.meta = list(meta)
        self._row_of = {m.item_id: m.row_id for m in meta}

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row_of(self, item_id: str) -> int:
        """Row ordinal for an external item id; raises KeyError when unknown."""
        return self._row_of[item_id]

    def __len__(self) -> int:
        return self.count

    def __repr__(self) -> str:
        return f"EmbeddingSet(count={self.count}, dim={self.dim})"


def _meta_line(m: ItemMeta) -> str:
    fields = [
        m.item_id,
        m.uri,
        m.date if m.date is not None else ABSENT,
        str(m.resolution_level) if m.resolution_level is not None else ABSENT,
        m.product if m.product is not None else ABSENT,
        str(m.true_label) if m.true_label is not None else ABSENT,
    ]
    return "\t".join(fields)


def _parse_meta_line(row_id: int, line: str) -> ItemMeta:
    parts = line.split("\t")
    if len(parts) != 6:
        raise StoreError(f"sidecar line {row_id} has {len(parts)} fields, expected 6")
    item_id, uri, date, resolution, product, true_label = parts
    return ItemMeta(
        row_id=row_id,
        item_id=item_id,
        uri=uri,
        date=None if date == ABSENT else _check_date(date),
        resolution_level=None if resolution == ABSENT else int(resolution),
        product=None if product == ABSENT else product,
        true_label=None if true_label == ABSENT else int(true_label),
    )


def meta_sidecar_path(path: Union[str, Path]) -> Path:
    return Path(str(path) + ".meta.tsv")


def write_embeddings(embedding_set: EmbeddingSet, path: Union[str, Path]) -> int:
    """Write the binary vector file and its metadata sidecar.

    Returns the number of bytes written to the vector file (header + payload).
    """
    path = Path(path)
    header = MAGIC + struct.pack("<II", embedding_set.count, embedding_set.dim)
    payload = embedding_set.vectors.astype("<f4", copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    with open(meta_sidecar_path(path), "w", encoding="utf-8") as fh:
        for m in embedding_set.meta:
            fh.write(_meta_line(m) + "\n")
    return len(header) + len(payload)


def load_embeddings(
    path: Union[str, Path], meta_path: Optional[Union[str, Path]] = None
) -> EmbeddingSet:
    """Load and validate an embedding file plus its sidecar.

    Rejects bad magic, truncated or oversized payloads, non-finite values,
    sidecar row-count mismatches, and duplicate item ids.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_BYTES or raw[:4] != MAGIC:
        raise StoreError(f"bad magic in {path}: expected {MAGIC!r}")
    count, dim = struct.unpack("<II", raw[4:HEADER_BYTES])
    if dim < 1:
        raise StoreError(f"dim must be positive, header says {dim}")
    expected = count * dim * 4
    payload = raw[HEADER_BYTES:]
    if len(payload) != expected:
        raise StoreError(
            f"payload is {len(payload)} bytes, header requires {expected}"
        )
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    if not np.all(np.isfinite(vectors)):
        raise StoreError("vectors contain NaN or infinity")

    sidecar = Path(meta_path) if meta_path is not None else meta_sidecar_path(path)
    text = sidecar.read_text(encoding="utf-8")
    lines = text.splitlines()
    if len(lines) != count:
        raise StoreError(
            f"sidecar has {len(lines)} rows, vector file has {count}"
        )
    meta = [_parse_meta_line(i, line) for i, line in enumerate(lines)]
    return EmbeddingSet(vectors.copy(), meta)


@dataclass(frozen=True)
class LabelRecord:
    """One entry of the binary-relevance label log."""

    item_id: str
    label: Label
    source: LabelSource
    iteration: int
    timestamp: int  # milliseconds since epoch

    def as_line(self) -> str:
        return "\t".join(
            [self.item_id, self.label.value, self.source.value,
             str(self.iteration), str(self.timestamp)]
        )

    @staticmethod
    def from_line(line: str) -> "LabelRecord":
        item_id, label, source, iteration, timestamp = line.split("\t")
        return LabelRecord(
            item_id=item_id,
            label=Label(label),
            source=LabelSource(source),
            iteration=int(iteration),
            timestamp=int(timestamp),
        )


def now_ms() -> int:
    return int(time.time() * 1000)


class LabelStore:
    """Append-log of labels; the log retains history, last write wins."""

    def __init__(self, records: Optional[Iterable[LabelRecord]] = None):
        self.records: list[LabelRecord] = list(records or [])
        self._effective: dict[str, LabelRecord] = {}
        for rec in self.records:
            self._effective[rec.item_id] = rec

    def append(self, record: LabelRecord) -> None:
        self.records.append(record)
        self._effective[record.item_id] = record

    def effective(self) -> dict[str, LabelRecord]:
        """Current label per item (last write wins)."""
        return dict(self._effective)

    def effective_label(self, item_id: str) -> Optional[Label]:
        rec = self._effective.get(item_id)
        return rec.label if rec is not None else None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[LabelRecord]:
        return iter(self.records)

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(rec.as_line() + "\n")

    @staticmethod
    def load(path: Union[str, Path]) -> "LabelStore":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return LabelStore(LabelRecord.from_line(line) for line in lines if line)


def make_meta(
    item_ids: Iterable[str],
    uris: Optional[Iterable[str]] = None,
    dates: Optional[Iterable[Optional[str]]] = None,
    resolutions: Optional[Iterable[Optional[int]]] = None,
    products: Optional[Iterable[Optional[str]]] = None,
    true_labels: Optional[Iterable[Optional[int]]] = None,
) -> list[ItemMeta]:
    """Convenience builder for aligned ItemMeta lists."""
    ids = list(item_ids)
    n = len(ids)

    def col(values, default):
        return list(values) if values is not None else [default] * n

    uris_l = col(uris, "")
    if uris is None:
        uris_l = [f"item://{i}" for i in ids]
    dates_l = col(dates, None)
    res_l = col(resolutions, None)
    prod_l = col(products, None)
    lab_l = col(true_labels, None)
    return [
        ItemMeta(row_id=i, item_id=ids[i], uri=uris_l[i], date=dates_l[i],
                 resolution_level=res_l[i], product=prod_l[i], true_label=lab_l[i])
        for i in range(n)
    ]


__all__ = [
    "ABSENT",
    "EmbeddingSet",
    "ItemMeta",
    "Label",
    "LabelRecord",
    "LabelSource",
    "LabelStore",
    "MAGIC",
    "StoreError",
    "load_embeddings",
    "make_meta",
    "meta_sidecar_path",
    "now_ms",
    "write_embeddings",
]
