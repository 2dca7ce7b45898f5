"""Fine-contour recovery: filter the image gradient with coarse-contour kernels.

The coarse map is downsampled by 2^n and cut into kernels, one per gradient
tile; each tile is convolved (kernel flipped) with its L1-normalized kernel,
so fine gradients aligned with the large-scale contour structure survive and
everything else is suppressed.  Overlapping filtered tiles combine by
per-pixel maximum; multiple scales sum; the result is max-normalized.

Tiles default to 32 pixels with 50% overlap so every interior pixel lies in
at least two tiles, which is what makes the max combination meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InternalError
from .inference import CoarseContourMap, grid_positions
from .raster import RasterImage, downsample_pow2, gray, sobel_gradient_magnitude


@dataclass
class RefineConfig:
    scales: tuple[int, ...] = (2,)
    y_patch: int = 32
    y_stride: int = 16

    def __post_init__(self):
        self.scales = tuple(self.scales)
        if not self.scales:
            raise ValueError("need at least one scale")
        if any(n < 0 for n in self.scales):
            raise ValueError("scale indices must be non-negative")
        if self.y_stride > self.y_patch or self.y_stride < 1:
            raise ValueError("y_stride must be in [1, y_patch]")


@dataclass
class FineContourMap:
    map: RasterImage


def guided_filter_patch(y_patch: np.ndarray, x_kernel: np.ndarray) -> np.ndarray:
    """Convolve a gradient tile with an L1-normalized coarse-contour kernel.

    Same-size output; the tile is reflect-padded and the kernel is flipped
    (convolution, not correlation) with its origin at (kh//2, kw//2).  An
    all-zero kernel yields an all-zero tile.
    """
    y = np.asarray(y_patch, dtype=np.float64)
    k = np.asarray(x_kernel, dtype=np.float64)
    kh, kw = k.shape
    if kh > y.shape[0] or kw > y.shape[1]:
        raise ValueError(f"kernel {k.shape} larger than tile {y.shape}")
    total = k.sum()
    if total == 0.0:
        return np.zeros_like(y)
    k = k / total
    ca, cb = kh // 2, kw // 2
    ypad = np.pad(y, ((kh - 1 - ca, ca), (kw - 1 - cb, cb)), mode="reflect")
    out = np.zeros_like(y)
    h, w = y.shape
    for a in range(kh):
        for b in range(kw):
            out += k[a, b] * ypad[kh - 1 - a : kh - 1 - a + h, kw - 1 - b : kw - 1 - b + w]
    return out


def combine_overlaps_max(tiles, out_hw: tuple[int, int]) -> np.ndarray:
    """Per-pixel maximum over ((row, col), tile) placements covering the map."""
    h, w = out_hw
    out = np.full((h, w), -np.inf)
    covered = np.zeros((h, w), dtype=bool)
    for (r, c), tile in tiles:
        th, tw = tile.shape
        out[r : r + th, c : c + tw] = np.maximum(out[r : r + th, c : c + tw], tile)
        covered[r : r + th, c : c + tw] = True
    if not covered.all():
        raise InternalError("tile layout leaves pixels uncovered")
    return out


def refine(coarse, image: RasterImage, config: RefineConfig | None = None) -> FineContourMap:
    """Recover fine contours from a full-resolution coarse map and the image.

    For each scale n the coarse map is mean-pooled by 2^n and, per gradient
    tile, the geometrically corresponding (y_patch / 2^n)-sized region becomes
    the filter kernel; filtered tiles combine by max, scales sum, and the
    result is max-normalized to [0, 1].
    """
    config = config or RefineConfig()
    coarse_map = coarse.map if isinstance(coarse, CoarseContourMap) else coarse
    if (coarse_map.height, coarse_map.width) != (image.height, image.width):
        raise ValueError(
            f"coarse map {coarse_map.height}x{coarse_map.width} does not match image {image.height}x{image.width}"
        )
    h, w = image.height, image.width
    for n in config.scales:
        if config.y_patch // (2**n) < 1:
            raise ValueError(f"scale {n} too coarse for {config.y_patch}-pixel tiles")
    grad = sobel_gradient_magnitude(image).plane
    tile_h = min(config.y_patch, h)
    tile_w = min(config.y_patch, w)
    placements = [
        (r, c)
        for r in grid_positions(h, tile_h, config.y_stride)
        for c in grid_positions(w, tile_w, config.y_stride)
    ]
    total = np.zeros((h, w))
    for n in config.scales:
        s = 2**n
        xn = downsample_pow2(coarse_map, n).plane
        kh = max(1, tile_h // s)
        kw = max(1, tile_w // s)
        tiles = []
        for r, c in placements:
            kr = min(r // s, xn.shape[0] - kh)
            kc = min(c // s, xn.shape[1] - kw)
            kernel = xn[kr : kr + kh, kc : kc + kw]
            tiles.append(((r, c), guided_filter_patch(grad[r : r + tile_h, c : c + tile_w], kernel)))
        total += combine_overlaps_max(tiles, (h, w))
    peak = total.max()
    if peak > 0:
        total = total / peak
    return FineContourMap(map=gray(total))
