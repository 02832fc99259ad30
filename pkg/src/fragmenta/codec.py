"""Raster-to-model-input encoding: contour tracing, binary contour
patches, texture patches, ring-graph adjacency, and padded batches.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import FormatError, InvalidInputError, InvalidMaskError
from .geometry import OrderedContour

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


class ContourEncoding(Enum):
    EDGE_ONLY = "edge_only"
    INSIDE_OUTSIDE = "inside_outside"
    EDGE_PLUS_INSIDE_OUTSIDE = "edge_plus_inside_outside"


class PadPolicy(Enum):
    ZERO_PAD = "zero_pad"
    TRUNCATE = "truncate"
    TRUNCATE_PREFIX = "truncate_prefix"


@dataclass
class ContourPatchSet:
    patches: np.ndarray  # (M, P, P) or (M, 2, P, P) for the stacked mode
    mode: ContourEncoding


@dataclass
class TexturePatchSet:
    patches: np.ndarray  # (M, P, P, 3) in [0, 1]


@dataclass(frozen=True)
class RingGraph:
    """Cyclic adjacency: node v connects to v +- 1 .. v +- k (mod m)."""

    m: int
    k: int

    def __post_init__(self):
        if self.m < 1 or self.k < 1:
            raise InvalidInputError("ring graph needs m >= 1 and k >= 1")

    def neighbors(self, v: int) -> list[int]:
        if 2 * self.k >= self.m:
            return [u for u in range(self.m) if u != v]
        offs = list(range(-self.k, 0)) + list(range(1, self.k + 1))
        return sorted({(v + o) % self.m for o in offs})

    @property
    def degree(self) -> int:
        return min(2 * self.k, self.m - 1)


@dataclass
class PaddedItem:
    features: np.ndarray      # (l_max, D)
    valid_mask: np.ndarray    # (l_max,) bool
    original_length: int
    kept_indices: np.ndarray  # indices into the original M rows


@dataclass
class PaddedBatch:
    features: np.ndarray          # (B, l_max, D)
    valid_mask: np.ndarray        # (B, l_max) bool
    original_lengths: np.ndarray  # (B,)


def stack_batch(items: list[PaddedItem]) -> PaddedBatch:
    if not items:
        raise InvalidInputError("cannot stack an empty batch")
    return PaddedBatch(
        np.stack([it.features for it in items]),
        np.stack([it.valid_mask for it in items]),
        np.array([it.original_length for it in items]),
    )


def build_ring_graph(m: int, k: int) -> RingGraph:
    return RingGraph(m, k)


def trace_contour(mask) -> OrderedContour:
    """Ordered outer boundary of a single-component mask.

    Moore-neighbor tracing from the topmost-leftmost boundary pixel;
    orientation normalized to the system-wide counter-clockwise convention.
    Interior holes are ignored. Raises InvalidMaskError for an empty mask
    or one with several 8-connected components.
    """
    m = np.asarray(mask) != 0
    if not m.any():
        raise InvalidMaskError("mask is empty")
    _, n_comp = ndimage.label(m, structure=_EIGHT_CONNECTED)
    if n_comp != 1:
        raise InvalidMaskError(f"mask has {n_comp} components, expected 1")
    rc = kernels.trace_boundary(m.astype(np.uint8))
    xy = rc[:, ::-1].astype(np.float64)
    return OrderedContour(xy, closed=True)


def _extract_windows(raster: np.ndarray, points_xy: np.ndarray, size: int) -> np.ndarray:
    """Size x size windows centered on integer points; outside is zero."""
    half = size // 2
    pad_spec = [(half, half), (half, half)] + [(0, 0)] * (raster.ndim - 2)
    padded = np.pad(raster, pad_spec)
    xs = np.rint(points_xy[:, 0]).astype(np.int64)
    ys = np.rint(points_xy[:, 1]).astype(np.int64)
    dy = np.arange(size)
    dx = np.arange(size)
    rows = ys[:, None, None] + dy[None, :, None]
    cols = xs[:, None, None] + dx[None, None, :]
    return padded[rows, cols]


def encode_contour_patches(contour, mask, size: int = 7,
                           mode: ContourEncoding = ContourEncoding.EDGE_ONLY) -> ContourPatchSet:
    """Per-point binary windows describing the local contour shape."""
    if size < 3 or size % 2 == 0:
        raise InvalidInputError("patch size must be odd and >= 3")
    pts = contour.points if isinstance(contour, OrderedContour) else np.asarray(contour, dtype=np.float64)
    m = (np.asarray(mask) != 0).astype(np.uint8)
    edge_raster = np.zeros_like(m)
    xs = np.rint(pts[:, 0]).astype(np.int64)
    ys = np.rint(pts[:, 1]).astype(np.int64)
    edge_raster[ys, xs] = 1
    if mode is ContourEncoding.EDGE_ONLY:
        patches = _extract_windows(edge_raster, pts, size)
    elif mode is ContourEncoding.INSIDE_OUTSIDE:
        patches = _extract_windows(m, pts, size)
    else:
        edge = _extract_windows(edge_raster, pts, size)
        inout = _extract_windows(m, pts, size)
        patches = np.stack([edge, inout], axis=1)
    return ContourPatchSet(patches.astype(np.uint8), mode)


def crop_texture_patches(image, mask, contour, size: int = 7) -> TexturePatchSet:
    """Per-point RGB windows, mask-zeroed and scaled to [0, 1]."""
    if size < 3 or size % 2 == 0:
        raise InvalidInputError("patch size must be odd and >= 3")
    img = np.asarray(image)
    if img.dtype == np.uint8:
        img = img.astype(np.float32) / 255.0
    else:
        img = img.astype(np.float32)
    m = (np.asarray(mask) != 0).astype(np.float32)
    masked = img * m[:, :, None]
    pts = contour.points if isinstance(contour, OrderedContour) else np.asarray(contour, dtype=np.float64)
    patches = _extract_windows(masked, pts, size)
    return TexturePatchSet(patches.astype(np.float32))


def pad_or_truncate(features, l_max: int, policy: PadPolicy = PadPolicy.ZERO_PAD) -> PaddedItem:
    """Fit an (M, D) feature matrix into exactly l_max rows.

    ZERO_PAD appends zero rows (M must not exceed l_max). TRUNCATE keeps a
    uniform subsample of min(M, l_max) rows; TRUNCATE_PREFIX keeps the
    first l_max rows verbatim.
    """
    if l_max < 1:
        raise InvalidInputError("l_max must be >= 1")
    feats = np.asarray(features)
    m, d = feats.shape
    if m > l_max:
        if policy is PadPolicy.ZERO_PAD:
            raise InvalidInputError(f"{m} rows exceed l_max={l_max} under ZERO_PAD")
        if policy is PadPolicy.TRUNCATE:
            kept = np.floor(np.arange(l_max, dtype=np.float64) * (m / l_max)).astype(np.int64)
        else:
            kept = np.arange(l_max, dtype=np.int64)
    else:
        kept = np.arange(m, dtype=np.int64)
    out = np.zeros((l_max, d), dtype=feats.dtype)
    out[: len(kept)] = feats[kept]
    valid = np.zeros(l_max, dtype=bool)
    valid[: len(kept)] = True
    return PaddedItem(out, valid, m, kept)


_FRGC_MAGIC = b"FRGC"
_FRGC_VERSION = 1


def write_feature_cache(path, array, mode: int = 0) -> None:
    """Flat binary container for a per-fragment encoded array (float32 LE)."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 2:
        raise InvalidInputError("feature cache stores 2-D arrays")
    header = struct.pack("<4sIIII", _FRGC_MAGIC, _FRGC_VERSION, arr.shape[0], arr.shape[1], mode)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def read_feature_cache(path):
    with open(path, "rb") as fh:
        header = fh.read(20)
        if len(header) < 20 or header[:4] != _FRGC_MAGIC:
            raise FormatError(f"{path}: not a feature cache file")
        _, version, m, d, mode = struct.unpack("<4sIIII", header)
        if version != _FRGC_VERSION:
            raise FormatError(f"{path}: unsupported cache version {version}")
        payload = np.frombuffer(fh.read(4 * m * d), dtype="<f4").reshape(m, d)
    return payload.astype(np.float32), mode
