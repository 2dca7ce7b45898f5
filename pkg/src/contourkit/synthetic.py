"""Synthetic corpora: filled ellipses/polygons on textured backgrounds with
exact one-pixel boundary ground truth.

Scenes are built so plain gradient thresholding is genuinely confused: the
shared per-pixel texture noise lights up a Sobel detector everywhere, while
the object outlines remain the only true contours.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .pnm import write_pnm
from .raster import RasterImage


def _ellipse_mask(h, w, rng):
    cy = rng.uniform(0.22 * h, 0.78 * h)
    cx = rng.uniform(0.22 * w, 0.78 * w)
    ry = rng.uniform(0.11, 0.26) * h
    rx = rng.uniform(0.11, 0.26) * w
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    y0 = yy - cy
    x0 = xx - cx
    yr = np.cos(theta) * y0 - np.sin(theta) * x0
    xr = np.sin(theta) * y0 + np.cos(theta) * x0
    return (yr / ry) ** 2 + (xr / rx) ** 2 <= 1.0


def _polygon_mask(h, w, rng):
    """Convex polygon: intersection of half-planes from hull vertices."""
    cy = rng.uniform(0.25 * h, 0.75 * h)
    cx = rng.uniform(0.25 * w, 0.75 * w)
    n = rng.integers(3, 7)
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
    radii = rng.uniform(0.14, 0.3, size=n) * min(h, w)
    vy = cy + radii * np.sin(angles)
    vx = cx + radii * np.cos(angles)
    yy, xx = np.mgrid[0:h, 0:w]
    mask = np.ones((h, w), dtype=bool)
    for i in range(n):
        j = (i + 1) % n
        ey, ex = vy[j] - vy[i], vx[j] - vx[i]
        # vertices are counter-clockwise, interior is left of each edge
        mask &= (ey * (xx - vx[i]) - ex * (yy - vy[i])) <= 0
    return mask


def _inner_boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbor outside the mask (1px curve)."""
    p = np.pad(mask, 1)
    inner = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return mask & ~inner


def synth_scene(rng: np.random.Generator, size: int = 160):
    """One textured scene; returns (RasterImage, boundary bool map)."""
    h = w = size
    base = rng.uniform(0.18, 0.42)
    tint = rng.uniform(-0.04, 0.04, size=3)
    img = np.empty((h, w, 3))
    ramp = rng.uniform(-0.05, 0.05) * np.linspace(-1, 1, h)[:, None]
    for c in range(3):
        img[:, :, c] = base + tint[c] + ramp
    occupied = np.zeros((h, w), dtype=bool)
    boundary = np.zeros((h, w), dtype=bool)
    n_shapes = int(rng.integers(1, 4))
    placed = 0
    attempts = 0
    while placed < n_shapes and attempts < 30:
        attempts += 1
        mask = _ellipse_mask(h, w, rng) if rng.random() < 0.5 else _polygon_mask(h, w, rng)
        if mask.sum() < 120 or (mask & occupied).any():
            continue
        fill = base + rng.choice([-1.0, 1.0]) * rng.uniform(0.28, 0.45)
        fill = float(np.clip(fill, 0.06, 0.94))
        fill_tint = rng.uniform(-0.04, 0.04, size=3)
        for c in range(3):
            img[:, :, c][mask] = fill + fill_tint[c]
        occupied |= mask
        boundary |= _inner_boundary(mask)
        placed += 1
    # shared-per-pixel texture noise: identical in all channels, so the
    # luminance gradient sees its full amplitude
    noise = rng.normal(0.0, 0.055, size=(h, w))
    img += noise[:, :, None]
    img = np.clip(img, 0.01, 0.99)
    return RasterImage(img), boundary


def generate_corpus(root, splits: dict[str, int], seed: int = 0, size: int = 160) -> None:
    """Write PPM images plus .gt/0.pgm boundary maps for each split."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    for split in sorted(splits):
        split_dir = root / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for i in range(splits[split]):
            image, boundary = synth_scene(rng, size)
            image_id = f"{split}_{i:04d}"
            write_pnm(split_dir / f"{image_id}.ppm", image)
            gt_dir = split_dir / f"{image_id}.gt"
            gt_dir.mkdir(exist_ok=True)
            write_pnm(gt_dir / "0.pgm", RasterImage(boundary.astype(np.float64)))
