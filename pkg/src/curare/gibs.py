"""Tile downloads from a WMTS-style endpoint plus a local product catalog.

The geographic grid: at zoom z the globe is 2^(z+1) columns by 2^z rows over
lon in [-180, 180] and lat in [90, -90].  Downloads run on a bounded worker
pool with exponential-backoff retries and emit a checksummed manifest, so a
re-run only fetches what is missing or corrupt.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date as _date
from datetime import timedelta
from pathlib import Path
from typing import Optional, Sequence, Union

import requests

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = (
    "https://gibs.earthdata.nasa.gov/wmts/epsg4326/best/"
    "{product}/default/{date}/250m/{zoom}/{row}/{col}.jpg"
)
ENDPOINT_ENV_VAR = "CURARE_GIBS_ENDPOINT"
MANIFEST_NAME = "manifest.tsv"
MANIFEST_COLUMNS = ("date", "col", "row", "bytes", "checksum", "retries", "status")

_CONTENT_EXT = {
    "image/jpeg": "jpg",
    "image/png": "png",
    "image/x-portable-pixmap": "ppm",
}


class GibsError(ValueError):
    """Invalid request geometry or a download that failed outright."""


@dataclass(frozen=True)
class Product:
    product_id: str
    title: str
    description: str
    tile_matrix_max_level: int
    format: str


class ProductCatalog:
    """Committed snapshot of known products, searchable by keyword."""

    def __init__(self, products: Sequence[Product]):
        ids = [p.product_id for p in products]
        if len(set(ids)) != len(ids):
            raise GibsError("duplicate product_id in catalog")
        self.products = list(products)

    @staticmethod
    def load(path: Optional[Union[str, Path]] = None) -> "ProductCatalog":
        if path is None:
            path = Path(__file__).parent / "data" / "products.json"
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
        return ProductCatalog([Product(**e) for e in entries])

    def get(self, product_id: str) -> Optional[Product]:
        for p in self.products:
            if p.product_id == product_id:
                return p
        return None


def search_products(catalog: ProductCatalog, keywords: Sequence[str]) -> list[Product]:
    """Case-insensitive AND match over title + description; results ranked by
    total keyword occurrences, then product id.  Empty keywords: everything."""
    terms = [k.lower() for k in keywords if k.strip()]
    if not terms:
        return sorted(catalog.products, key=lambda p: p.product_id)
    scored = []
    for p in catalog.products:
        text = f"{p.title} {p.description}".lower()
        counts = [text.count(t) for t in terms]
        if all(c > 0 for c in counts):
            scored.append((sum(counts), p))
    scored.sort(key=lambda sp: (-sp[0], sp[1].product_id))
    return [p for _, p in scored]


@dataclass(frozen=True)
class DownloadRequest:
    product_id: str
    date_from: str  # YYYY-MM-DD
    date_to: str
    bbox: tuple[float, float, float, float]  # lat_min, lat_max, lon_min, lon_max
    zoom: int
    out_dir: Path

    def __post_init__(self):
        lat_min, lat_max, lon_min, lon_max = self.bbox
        if not (-90 <= lat_min < lat_max <= 90):
            raise GibsError(f"bad latitude range [{lat_min}, {lat_max}]")
        if not (-180 <= lon_min < lon_max <= 180):
            raise GibsError(f"bad longitude range [{lon_min}, {lon_max}]")
        if self.zoom < 0:
            raise GibsError("zoom must be non-negative")
        if _date.fromisoformat(self.date_from) > _date.fromisoformat(self.date_to):
            raise GibsError("date_from must not be after date_to")

    def dates(self) -> list[str]:
        d0 = _date.fromisoformat(self.date_from)
        d1 = _date.fromisoformat(self.date_to)
        return [(d0 + timedelta(days=i)).isoformat() for i in range((d1 - d0).days + 1)]


def grid_shape(zoom: int) -> tuple[int, int]:
    """(columns, rows) of the geographic grid at a zoom level."""
    return 2 ** (zoom + 1), 2**zoom


def bbox_to_tiles(
    bbox: tuple[float, float, float, float], zoom: int
) -> list[tuple[int, int]]:
    """All (col, row) tiles whose rectangle intersects the bbox, row-major.

    col = floor((lon + 180) / 360 * 2^(z+1)), row = floor((90 - lat) / 180 * 2^z);
    coordinates on the far edge clamp into the last tile.
    """
    lat_min, lat_max, lon_min, lon_max = bbox
    if not (-90 <= lat_min <= lat_max <= 90) or not (-180 <= lon_min <= lon_max <= 180):
        raise GibsError(f"invalid bbox {bbox}")
    cols, rows = grid_shape(zoom)
    col_lo = min(int((lon_min + 180.0) / 360.0 * cols), cols - 1)
    col_hi = min(int((lon_max + 180.0) / 360.0 * cols), cols - 1)
    row_lo = min(int((90.0 - lat_max) / 180.0 * rows), rows - 1)
    row_hi = min(int((90.0 - lat_min) / 180.0 * rows), rows - 1)
    return [(c, r) for r in range(row_lo, row_hi + 1) for c in range(col_lo, col_hi + 1)]


@dataclass
class ManifestRow:
    date: str
    col: int
    row: int
    bytes: int
    checksum: str
    retries: int
    status: str  # ok | failed | skipped

    def as_line(self) -> str:
        return "\t".join(
            [self.date, str(self.col), str(self.row), str(self.bytes),
             self.checksum, str(self.retries), self.status]
        )

    @staticmethod
    def from_line(line: str) -> "ManifestRow":
        date, col, row, size, checksum, retries, status = line.split("\t")
        return ManifestRow(date, int(col), int(row), int(size), checksum, int(retries), status)


@dataclass
class Manifest:
    rows: list[ManifestRow]

    def by_key(self) -> dict[tuple[str, int, int], ManifestRow]:
        return {(r.date, r.col, r.row): r for r in self.rows}

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(MANIFEST_COLUMNS) + "\n")
            for row in self.rows:
                fh.write(row.as_line() + "\n")

    @staticmethod
    def load(path: Union[str, Path]) -> "Manifest":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return Manifest([ManifestRow.from_line(line) for line in lines[1:] if line])


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _endpoint_ext(template: str) -> Optional[str]:
    tail = template.rsplit("/", 1)[-1]
    if "." in tail:
        ext = tail.rsplit(".", 1)[-1]
        if ext.isalnum():
            return ext
    return None


def resolve_endpoint(endpoint: Optional[str]) -> str:
    return endpoint or os.environ.get(ENDPOINT_ENV_VAR) or DEFAULT_ENDPOINT


def download(
    request: DownloadRequest,
    endpoint: Optional[str] = None,
    concurrency: int = 4,
    retries: int = 3,
    backoff_base: float = 0.5,
    timeout: float = 30.0,
) -> Manifest:
    """Fetch every (date, tile) pair of the request with bounded parallelism.

    Files land at ``out_dir/product/date/zoom_row_col.ext``.  Failed tiles
    are retried with exponential backoff (base * 2^attempt) and then recorded
    as failed; only a run where *every* tile fails raises.  Tiles whose file
    already matches the manifest checksum are skipped.
    """
    template = resolve_endpoint(endpoint)
    tiles = bbox_to_tiles(request.bbox, request.zoom)
    jobs = [(d, c, r) for d in request.dates() for (c, r) in tiles]
    product_dir = Path(request.out_dir) / request.product_id
    product_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = product_dir / MANIFEST_NAME
    previous = Manifest.load(manifest_path).by_key() if manifest_path.exists() else {}
    ext_hint = _endpoint_ext(template)

    lock = threading.Lock()
    results: dict[tuple[str, int, int], ManifestRow] = {}

    def tile_path(date: str, col: int, row: int, ext: str) -> Path:
        return product_dir / date / f"{request.zoom}_{row}_{col}.{ext}"

    def fetch(job: tuple[str, int, int]) -> None:
        date, col, row = job
        prior = previous.get(job)
        if prior is not None and prior.status in ("ok", "skipped"):
            existing = tile_path(date, col, row, ext_hint or "bin")
            if existing.exists() and _sha256(existing.read_bytes()) == prior.checksum:
                with lock:
                    results[job] = ManifestRow(date, col, row, prior.bytes,
                                               prior.checksum, 0, "skipped")
                return
        url = template.format(product=request.product_id, date=date,
                              zoom=request.zoom, row=row, col=col)
        attempts = 0
        while True:
            try:
                resp = requests.get(url, timeout=timeout)
                if resp.status_code == 200:
                    ext = ext_hint or _CONTENT_EXT.get(
                        resp.headers.get("content-type", "").split(";")[0], "bin"
                    )
                    path = tile_path(date, col, row, ext)
                    path.parent.mkdir(parents=True, exist_ok=True)
                    path.write_bytes(resp.content)
                    with lock:
                        results[job] = ManifestRow(
                            date, col, row, len(resp.content),
                            _sha256(resp.content), attempts, "ok",
                        )
                    return
                error = f"HTTP {resp.status_code}"
            except requests.RequestException as exc:
                error = str(exc)
            if attempts >= retries:
                log.warning("tile %s failed after %d retries: %s", job, attempts, error)
                with lock:
                    results[job] = ManifestRow(date, col, row, 0, "-", attempts, "failed")
                return
            time.sleep(backoff_base * (2**attempts))
            attempts += 1

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        list(pool.map(fetch, jobs))

    manifest = Manifest([results[j] for j in jobs])
    manifest.save(manifest_path)
    if jobs and all(r.status == "failed" for r in manifest.rows):
        raise GibsError(f"all {len(jobs)} tile fetches failed against {template}")
    return manifest


__all__ = [
    "DEFAULT_ENDPOINT",
    "ENDPOINT_ENV_VAR",
    "DownloadRequest",
    "GibsError",
    "Manifest",
    "ManifestRow",
    "Product",
    "ProductCatalog",
    "bbox_to_tiles",
    "download",
    "grid_shape",
    "resolve_endpoint",
    "search_products",
]
