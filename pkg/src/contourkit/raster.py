"""Raster containers plus the resampling and gradient primitives the pipeline shares.

Conventions: arrays are float64, row-major, channel-interleaved (H, W, C) with
C in {1, 3} and values nominally in [0, 1].  All operations are pure; inputs
are never modified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# ITU-R BT.601 luminance weights.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass
class RasterImage:
    """H x W x C stack of real intensities; carries images, gradients and contour maps."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) data, got shape {np.shape(self.data)}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must have at least one pixel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains NaN or Inf")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def plane(self) -> np.ndarray:
        """2-D view of a single-channel image."""
        if self.channels != 1:
            raise ValueError("plane is only defined for single-channel images")
        return self.data[:, :, 0]


def gray(arr) -> RasterImage:
    """Wrap a 2-D array as a single-channel RasterImage."""
    return RasterImage(np.asarray(arr, dtype=np.float64))


def luminance(img: RasterImage) -> RasterImage:
    """BT.601 luminance of a 3-channel image; single-channel images pass through."""
    if img.channels == 1:
        return RasterImage(img.data.copy())
    w = np.asarray(LUMA_WEIGHTS)
    return RasterImage(img.data @ w)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix of normalized source-pixel coverage for 1-D area resampling."""
    scale = n_in / n_out
    w = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = i * scale
        hi = (i + 1) * scale
        first = int(np.floor(lo))
        last = min(int(np.ceil(hi)), n_in)
        for s in range(first, last):
            w[i, s] = min(hi, s + 1) - max(lo, s)
    return w / scale


def block_mean(arr: np.ndarray, bh: int, bw: int) -> np.ndarray:
    """Mean over non-overlapping bh x bw blocks of an (..., H, W, C) array."""
    *lead, h, w, c = arr.shape
    out = arr.reshape(*lead, h // bh, bh, w // bw, bw, c)
    return out.mean(axis=(-4, -2))


def resize_area(img: RasterImage, out_h: int, out_w: int) -> RasterImage:
    """Resample so each output pixel is the area-weighted mean of the source it covers."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"requested size {out_h}x{out_w} must be at least 1x1")
    if img.height % out_h == 0 and img.width % out_w == 0:
        return RasterImage(block_mean(img.data, img.height // out_h, img.width // out_w))
    wr = _area_weights(img.height, out_h)
    wc = _area_weights(img.width, out_w)
    out = np.stack([wr @ img.data[:, :, c] @ wc.T for c in range(img.channels)], axis=-1)
    return RasterImage(out)


def sobel_gradient_magnitude(img: RasterImage, normalize: bool = True) -> RasterImage:
    """Per-pixel 3x3 Sobel magnitude of the luminance, reflect-padded at borders.

    With normalize=True (default) the map is divided by its maximum so values
    lie in [0, 1]; an all-constant input yields an all-zero map.
    """
    y = luminance(img).plane
    p = np.pad(y, 1, mode="reflect")
    gx = np.zeros_like(y)
    gy = np.zeros_like(y)
    for a in range(3):
        for b in range(3):
            win = p[a : a + y.shape[0], b : b + y.shape[1]]
            gx += SOBEL_X[a, b] * win
            gy += SOBEL_Y[a, b] * win
    mag = np.hypot(gx, gy)
    if normalize:
        peak = mag.max()
        if peak > 0:
            mag = mag / peak
    return gray(mag)


def downsample_pow2(map_: RasterImage, n: int) -> RasterImage:
    """Mean-pool a single-channel map over 2^n x 2^n blocks (partial edge blocks
    average the pixels that exist); n=0 returns a copy."""
    if map_.channels != 1:
        raise ValueError("downsample_pow2 expects a single-channel map")
    if n < 0:
        raise ValueError("scale index must be non-negative")
    if n == 0:
        return RasterImage(map_.data.copy())
    s = 2**n
    m = map_.plane
    rows = np.arange(0, m.shape[0], s)
    cols = np.arange(0, m.shape[1], s)
    sums = np.add.reduceat(np.add.reduceat(m, rows, axis=0), cols, axis=1)
    rcount = np.minimum(rows + s, m.shape[0]) - rows
    ccount = np.minimum(cols + s, m.shape[1]) - cols
    return gray(sums / np.outer(rcount, ccount))


def upsample_nearest(map_: RasterImage, factor: int, target_hw: tuple[int, int] | None = None) -> RasterImage:
    """Replicate each pixel into a factor x factor block; optionally crop or
    edge-pad the result to target_hw."""
    if factor < 1:
        raise ValueError("replication factor must be >= 1")
    if map_.channels != 1:
        raise ValueError("upsample_nearest expects a single-channel map")
    up = np.repeat(np.repeat(map_.plane, factor, axis=0), factor, axis=1)
    if target_hw is not None:
        th, tw = target_hw
        if th < 1 or tw < 1:
            raise ValueError("target size must be at least 1x1")
        up = up[:th, :tw]
        pad_r = th - up.shape[0]
        pad_c = tw - up.shape[1]
        if pad_r > 0 or pad_c > 0:
            up = np.pad(up, ((0, pad_r), (0, pad_c)), mode="edge")
    return gray(up)
