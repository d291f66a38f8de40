"""Image-domain preprocessing for satellite tiles.

Covers swath-gap detection and filling, temporal cloud compositing with
cloud-mask extraction, grid tiling, and multi-resolution retrieval by
bucket voting.  Tiles are 8-bit RGB; PPM (P6) is the bit-exact interchange
format, masks are PBM (P4), and PNG is accepted through Pillow.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from scipy.ndimage import label as cc_label
from scipy.spatial import cKDTree

DEFAULT_GAP_SENTINEL = (0, 0, 0)
DEFAULT_MIN_GAP_AREA = 16
DEFAULT_CLOUD_TAU = 40.0
FILL_STRATEGIES = ("none", "random_rgb", "pixel_rgb", "neighbor_rgb")
_LUMA = np.array([0.299, 0.587, 0.114])


class RasterError(ValueError):
    """Malformed tile, mismatched dimensions, or unusable fill request."""


@dataclass
class RasterTile:
    """8-bit RGB tile; ``pixels`` is (height, width, 3) uint8."""

    pixels: np.ndarray
    gap_sentinel: tuple[int, int, int] = DEFAULT_GAP_SENTINEL

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise RasterError(f"pixels must be (h, w, 3), got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class GapMask:
    mask: np.ndarray  # (height, width) bool

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise RasterError(f"mask must be 2-D, got shape {self.mask.shape}")

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass
class GridTile:
    row: int
    col: int
    tile: RasterTile


def luminance(pixels: np.ndarray) -> np.ndarray:
    """Per-pixel luminance 0.299 R + 0.587 G + 0.114 B as float64."""
    return np.asarray(pixels, dtype=np.float64) @ _LUMA


def detect_gaps(tile: RasterTile, min_area: int = DEFAULT_MIN_GAP_AREA) -> GapMask:
    """Sentinel-colored pixels belonging to a 4-connected component of at
    least ``min_area`` pixels; smaller blobs are treated as real imagery."""
    sentinel = np.array(tile.gap_sentinel, dtype=np.uint8)
    hit = np.all(tile.pixels == sentinel, axis=2)
    if not hit.any():
        return GapMask(np.zeros_like(hit))
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])  # 4-connectivity
    labels, n = cc_label(hit, structure=structure)
    keep = np.zeros(n + 1, dtype=bool)
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    keep[1:] = counts[1:] >= min_area
    return GapMask(keep[labels])


def _nearest_sources(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For each masked pixel, the row-major-first nearest unmasked pixel.

    Squared pixel distances are integers, so ties are resolved exactly:
    among equidistant sources the one earliest in row-major order wins.
    """
    src = np.argwhere(~mask)  # row-major order
    tgt = np.argwhere(mask)
    tree = cKDTree(src)
    d, _ = tree.query(tgt, k=1)
    r2 = np.rint(d * d).astype(np.int64)
    balls = tree.query_ball_point(tgt, np.sqrt(r2.astype(np.float64)) + 1e-6)
    pick = np.empty(len(tgt), dtype=np.int64)
    for i, cand in enumerate(balls):
        cand = np.asarray(cand)
        d2 = np.sum((src[cand] - tgt[i]) ** 2, axis=1)
        pick[i] = cand[d2 == r2[i]].min()
    return src, tgt, pick


def fill_swath(
    tile: RasterTile,
    mask: GapMask,
    strategy: str,
    seed: int = 0,
) -> RasterTile:
    """Fill masked pixels.

    none: identity.  random_rgb: one seeded color for the whole mask.
    pixel_rgb: an independent seeded color per pixel.  neighbor_rgb: each
    masked pixel copies its nearest unmasked pixel (euclidean distance,
    ties to the earliest row-major source).
    """
    if strategy not in FILL_STRATEGIES:
        raise RasterError(f"unknown fill strategy {strategy!r}")
    if mask.mask.shape != tile.pixels.shape[:2]:
        raise RasterError("mask dimensions do not match the tile")
    if strategy == "none" or mask.count == 0:
        return RasterTile(tile.pixels.copy(), tile.gap_sentinel)
    out = tile.pixels.copy()
    m = mask.mask
    rng = np.random.default_rng(seed)
    if strategy == "random_rgb":
        out[m] = rng.integers(0, 256, size=3, dtype=np.uint8)
    elif strategy == "pixel_rgb":
        out[m] = rng.integers(0, 256, size=(mask.count, 3), dtype=np.uint8)
    else:  # neighbor_rgb
        if m.all():
            raise RasterError("neighbor_rgb needs at least one unmasked pixel")
        src, tgt, pick = _nearest_sources(m)
        out[tgt[:, 0], tgt[:, 1]] = tile.pixels[src[pick, 0], src[pick, 1]]
    return RasterTile(out, tile.gap_sentinel)


def cloud_composite(stack: Sequence[RasterTile]) -> RasterTile:
    """Per-pixel minimum-luminance selection across co-registered days.

    Clouds are bright, so picking the temporally darkest observation of each
    pixel removes them; luminance ties go to the earliest stack member.
    """
    if len(stack) < 2:
        raise RasterError("compositing needs at least 2 tiles")
    shape = stack[0].pixels.shape
    for t in stack[1:]:
        if t.pixels.shape != shape:
            raise RasterError("stack tiles must share dimensions")
    lum = np.stack([luminance(t.pixels) for t in stack])  # (T, h, w)
    darkest = np.argmin(lum, axis=0)  # first index wins ties
    pixels = np.stack([t.pixels for t in stack])  # (T, h, w, 3)
    h, w = shape[:2]
    rows, cols = np.mgrid[0:h, 0:w]
    return RasterTile(pixels[darkest, rows, cols], stack[0].gap_sentinel)


def cloud_mask(
    tile: RasterTile, composite: RasterTile, tau: float = DEFAULT_CLOUD_TAU
) -> GapMask:
    """Pixels whose luminance exceeds the composite's by more than ``tau``."""
    if tile.pixels.shape != composite.pixels.shape:
        raise RasterError("tile and composite dimensions differ")
    diff = luminance(tile.pixels) - luminance(composite.pixels)
    return GapMask(diff > tau)


def tile_grid(image: RasterTile, patch: int) -> list[GridTile]:
    """Non-overlapping patch x patch tiles in row-major order; right and
    bottom remainders are dropped."""
    if patch < 1:
        raise RasterError("patch must be positive")
    if patch > min(image.width, image.height):
        raise RasterError(
            f"patch {patch} exceeds image {image.width}x{image.height}"
        )
    tiles = []
    for r in range(image.height // patch):
        for c in range(image.width // patch):
            px = image.pixels[r * patch : (r + 1) * patch, c * patch : (c + 1) * patch]
            tiles.append(GridTile(row=r, col=c, tile=RasterTile(px.copy(), image.gap_sentinel)))
    return tiles


def multires_search(
    index,
    embed: Callable[[RasterTile], np.ndarray],
    image: RasterTile,
    patch_sizes: Sequence[int],
    k: int,
) -> list[tuple[str, float]]:
    """Bucket voting across grid resolutions.

    Every patch of every grid queries its k nearest neighbors; each hit adds
    ``1 / (1 + distance)`` to its item's bucket.  Buckets are ranked by
    summed weight, ties by ascending item id.
    """
    from .index import query  # deferred; raster stays importable standalone

    if not patch_sizes:
        raise RasterError("patch_sizes must be nonempty")
    votes: dict[str, float] = {}
    if index is None:
        return []
    for patch in patch_sizes:
        for gt in tile_grid(image, patch):
            vec = np.asarray(embed(gt.tile), dtype=np.float64)
            for hit in query(index, vec, k):
                votes[hit.item_id] = votes.get(hit.item_id, 0.0) + 1.0 / (1.0 + hit.distance)
    return sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))


# -- raster I/O ---------------------------------------------------------


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data):
        if data[pos : pos + 1].isspace():
            pos += 1
        elif data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_ppm(path: Union[str, Path]) -> RasterTile:
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic != b"P6":
        raise RasterError(f"not a P6 PPM: {path}")
    w_tok, pos = _read_token(data, pos)
    h_tok, pos = _read_token(data, pos)
    max_tok, pos = _read_token(data, pos)
    w, h, maxval = int(w_tok), int(h_tok), int(max_tok)
    if maxval != 255:
        raise RasterError(f"only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace after header
    payload = data[pos : pos + w * h * 3]
    if len(payload) != w * h * 3:
        raise RasterError(f"truncated PPM payload in {path}")
    return RasterTile(np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy())


def write_ppm(tile: RasterTile, path: Union[str, Path]) -> None:
    header = f"P6\n{tile.width} {tile.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + tile.pixels.tobytes(order="C"))


def read_pbm(path: Union[str, Path]) -> GapMask:
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic != b"P4":
        raise RasterError(f"not a P4 PBM: {path}")
    w_tok, pos = _read_token(data, pos)
    h_tok, pos = _read_token(data, pos)
    w, h = int(w_tok), int(h_tok)
    pos += 1
    row_bytes = (w + 7) // 8
    payload = data[pos : pos + row_bytes * h]
    if len(payload) != row_bytes * h:
        raise RasterError(f"truncated PBM payload in {path}")
    bits = np.unpackbits(
        np.frombuffer(payload, dtype=np.uint8).reshape(h, row_bytes), axis=1
    )[:, :w]
    return GapMask(bits.astype(bool))


def write_pbm(mask: GapMask, path: Union[str, Path]) -> None:
    h, w = mask.mask.shape
    header = f"P4\n{w} {h}\n".encode("ascii")
    packed = np.packbits(mask.mask.astype(np.uint8), axis=1)
    Path(path).write_bytes(header + packed.tobytes(order="C"))


def read_raster(path: Union[str, Path]) -> RasterTile:
    """Load a tile from PPM (P6) or, via Pillow, PNG."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    from PIL import Image

    with Image.open(path) as img:
        return RasterTile(np.asarray(img.convert("RGB"), dtype=np.uint8))


def write_raster(tile: RasterTile, path: Union[str, Path]) -> None:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        write_ppm(tile, path)
        return
    from PIL import Image

    Image.fromarray(tile.pixels, mode="RGB").save(path)


__all__ = [
    "DEFAULT_CLOUD_TAU",
    "DEFAULT_GAP_SENTINEL",
    "DEFAULT_MIN_GAP_AREA",
    "FILL_STRATEGIES",
    "GapMask",
    "GridTile",
    "RasterError",
    "RasterTile",
    "cloud_composite",
    "cloud_mask",
    "detect_gaps",
    "fill_swath",
    "luminance",
    "multires_search",
    "read_pbm",
    "read_ppm",
    "read_raster",
    "tile_grid",
    "write_pbm",
    "write_ppm",
    "write_raster",
]
