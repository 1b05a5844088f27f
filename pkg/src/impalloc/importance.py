"""Object importance maps from one layer's filter responses, and block-wise importance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureTensor
from .image import ScaleInfo, resize_bilinear


@dataclass
class ImportanceMap:
    layer: int
    normalized: np.ndarray = field(repr=False)  # values in [0, 1], (H_l, W_l)
    magnitude: np.ndarray = field(repr=False)  # l2 norm of the weighted stack
    weights: np.ndarray = field(repr=False)  # one per filter

    @property
    def width(self) -> int:
        return self.normalized.shape[1]

    @property
    def height(self) -> int:
        return self.normalized.shape[0]

    def to_pgm_array(self) -> np.ndarray:
        """8-bit rendering of the normalized map (0 -> 0, 1 -> 255)."""
        return np.clip(np.floor(self.normalized * 255.0 + 0.5), 0, 255).astype(np.uint8)

    def upsample(self, width: int, height: int) -> np.ndarray:
        """Bilinear resample of the normalized map to image resolution."""
        return np.clip(resize_bilinear(self.normalized, width, height), 0.0, 1.0)


@dataclass
class BlockImportanceGrid:
    """Block-wise importance ``I`` over the source image, raster ordered.

    ``values`` and ``n_pixels`` are ``(rows, cols)`` arrays; block ``(r, c)``
    has its top-left corner at pixel ``(r * cu_size, c * cu_size)``.
    """

    cu_size: int
    width: int
    height: int
    values: np.ndarray = field(repr=False)
    n_pixels: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def count(self) -> int:
        return self.values.size

    def corners(self) -> list[tuple[int, int]]:
        rows, cols = self.shape
        return [(r * self.cu_size, c * self.cu_size) for r in range(rows) for c in range(cols)]


def clamp_unit(t):
    """Clamp responses to ``[0, 1]``; accepts a FeatureTensor or an array."""
    if isinstance(t, FeatureTensor):
        return FeatureTensor(t.layer, np.clip(t.data, 0.0, 1.0))
    return np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)


def filter_weight(channel: np.ndarray) -> float:
    """Informativeness of one clamped response map: ``1 - mean``."""
    channel = np.asarray(channel, dtype=np.float64)
    if channel.size == 0:
        raise ValueError("empty response map")
    return 1.0 - float(channel.mean())


def filter_weights(t: FeatureTensor) -> np.ndarray:
    return np.array([filter_weight(ch) for ch in t.data])


def fuse(t: FeatureTensor, weights=None) -> ImportanceMap:
    """Weight, stack and l2-fuse clamped channels, then min-max normalize.

    ``t`` must already be clamped to ``[0, 1]``. If ``weights`` is omitted the
    per-filter weights are computed from ``t``. A constant magnitude map (for
    instance when every weight is zero) normalizes to all zeros.
    """
    data = np.asarray(t.data, dtype=np.float64)
    if weights is None:
        weights = filter_weights(t)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (data.shape[0],):
        raise ValueError(f"{weights.size} weights for {data.shape[0]} channels")
    magnitude = np.sqrt(np.einsum("n,nhw->hw", weights**2, data**2))
    lo, hi = magnitude.min(), magnitude.max()
    if hi > lo:
        normalized = (magnitude - lo) / (hi - lo)
    else:
        normalized = np.zeros_like(magnitude)
    return ImportanceMap(t.layer, normalized, magnitude, weights)


def importance_map(t: FeatureTensor) -> ImportanceMap:
    """Clamp, weight and fuse a raw layer output."""
    clamped = clamp_unit(t)
    return fuse(clamped, filter_weights(clamped))


def _overlap_matrix(n_src: int, cu_size: int, n_map: int) -> np.ndarray:
    """Overlap lengths between source-pixel blocks and map pixels along one axis.

    Block ``b`` spans source pixels ``[b*cu, min((b+1)*cu, n_src))`` which maps
    to ``[x0, x1) * n_map / n_src`` in map coordinates; map pixel ``p`` spans
    ``[p, p+1)``. Every map pixel is split exactly among the blocks.
    """
    n_blocks = -(-n_src // cu_size)
    factor = n_map / n_src
    edges = np.minimum(np.arange(n_blocks + 1) * cu_size, n_src) * factor
    edges[-1] = n_map
    p = np.arange(n_map)
    lo = np.maximum(edges[:-1, None], p[None, :])
    hi = np.minimum(edges[1:, None], p[None, :] + 1)
    return np.clip(hi - lo, 0.0, None)


def block_importance(imap, cu_size: int, scale: ScaleInfo) -> BlockImportanceGrid:
    """Sum the normalized map over each coding block's footprint, normalized to 1.

    The block side in map pixels is ``cu_size`` times the per-axis ratio of map
    to source size; map pixels straddling a block edge are split by area. An
    all-zero map is treated like a constant one: importance proportional to
    block area (``1/B`` when every block is full).
    """
    if cu_size < 1:
        raise ValueError(f"cu_size must be >= 1, got {cu_size}")
    values = imap.normalized if isinstance(imap, ImportanceMap) else np.asarray(imap, dtype=np.float64)
    w, h = scale.src_width, scale.src_height
    map_h, map_w = values.shape
    ox = _overlap_matrix(w, cu_size, map_w)
    oy = _overlap_matrix(h, cu_size, map_h)
    sums = oy @ values @ ox.T
    counts = block_pixel_counts(w, h, cu_size)
    total = sums.sum()
    if total > 0 and math.isfinite(total):
        grid = sums / total
    else:
        grid = counts / counts.sum()
    return BlockImportanceGrid(cu_size, w, h, grid, counts)


def block_pixel_counts(width: int, height: int, cu_size: int) -> np.ndarray:
    """True pixel count of each block; edge blocks may be partial."""
    cols = -(-width // cu_size)
    rows = -(-height // cu_size)
    bw = np.minimum(cu_size, width - np.arange(cols) * cu_size)
    bh = np.minimum(cu_size, height - np.arange(rows) * cu_size)
    return np.outer(bh, bw).astype(np.int64)


def uniform_grid(width: int, height: int, cu_size: int) -> BlockImportanceGrid:
    """Equal importance per pixel, the plain rate-control baseline."""
    counts = block_pixel_counts(width, height, cu_size)
    return BlockImportanceGrid(cu_size, width, height, counts / counts.sum(), counts)
