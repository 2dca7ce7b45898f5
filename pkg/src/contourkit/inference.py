"""Sliding-window patch scoring and overlapping-vote contour maps.

Each 16x16 grid position gets one boundary probability from the classifier;
the probability is replicated over the patch footprint and overlapping
replications are averaged per pixel.  The final row/column of positions is
clamped so the last patch touches the image edge, guaranteeing full coverage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import PATCH, extract_multiscale_stacks
from .errors import InternalError
from .network import NetworkModel, forward
from .raster import RasterImage, gray


@dataclass
class VotingConfig:
    patch: int = PATCH
    stride: int = 4

    def __post_init__(self):
        if not 1 <= self.stride <= self.patch:
            raise ValueError(f"stride must be in [1, {self.patch}]")


@dataclass
class CoarseContourMap:
    map: RasterImage
    vote_counts: np.ndarray  # per-pixel count of contributing patches


def grid_positions(size: int, patch: int, stride: int) -> list[int]:
    """Stride grid from 0, clamped so the final patch touches the edge."""
    last = size - patch
    pos = list(range(0, last + 1, stride))
    if pos[-1] != last:
        pos.append(last)
    return pos


def predict_patch_scores(model: NetworkModel, image: RasterImage, config: VotingConfig | None = None, batch_size: int = 256):
    """One ((row, col), probability) per grid position, row-major order."""
    config = config or VotingConfig()
    if image.height < config.patch or image.width < config.patch:
        raise ValueError(f"image {image.height}x{image.width} smaller than patch {config.patch}")
    positions = [
        (r, c)
        for r in grid_positions(image.height, config.patch, config.stride)
        for c in grid_positions(image.width, config.patch, config.stride)
    ]
    stacks = extract_multiscale_stacks(image, positions)[:, :, :, model.channel_slice()]
    probs = np.empty(len(positions))
    for i in range(0, len(positions), batch_size):
        probs[i : i + batch_size] = forward(model, stacks[i : i + batch_size])
    return list(zip(positions, probs.tolist()))


def vote_average(scores, image_hw: tuple[int, int], config: VotingConfig | None = None) -> CoarseContourMap:
    """Replicate each patch score over its footprint and average per pixel."""
    config = config or VotingConfig()
    h, w = image_hw
    acc = np.zeros((h, w))
    counts = np.zeros((h, w), dtype=np.int64)
    p = config.patch
    for (r, c), prob in scores:
        acc[r : r + p, c : c + p] += prob
        counts[r : r + p, c : c + p] += 1
    if np.any(counts == 0):
        raise InternalError("voting left pixels uncovered")
    return CoarseContourMap(map=gray(acc / counts), vote_counts=counts)


def detect_contours(model: NetworkModel, image: RasterImage, config: VotingConfig | None = None) -> CoarseContourMap:
    """predict_patch_scores + vote_average over one image."""
    config = config or VotingConfig()
    scores = predict_patch_scores(model, image, config)
    return vote_average(scores, (image.height, image.width), config)
