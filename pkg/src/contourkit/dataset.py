"""Balanced patch datasets from images plus multi-labeler edge ground truth.

A sample is a 16x16x9 stack: the raw 16x16 crop, and the concentric 32x32 and
64x64 crops area-resized to 16x16, three channels each (grayscale sources
replicate their channel).  Positives are grid tiles whose summed edge
intensity over the [0,1] labeler average exceeds the threshold; negatives are
subsampled to match the positive count.

Corpus layout on disk:
    <root>/<split>/<image-id>.ppm
    <root>/<split>/<image-id>.gt/<k>.pgm     (binary labeler maps, nonzero = edge)

Dataset file ("CFD1"): magic, u32 sample count, then per sample u8 label,
u32 row, u32 col, and 2304 little-endian float32 values in channel-major
(9, 16, 16) order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorpusError, DataError
from .pnm import read_pnm
from .raster import RasterImage, block_mean

PATCH = 16
SCALES = (16, 32, 64)
DATASET_MAGIC = b"CFD1"
GRID_THRESHOLD = 10.0
_PAD = (SCALES[-1] - PATCH) // 2  # margin needed for the largest concentric crop


@dataclass
class LabelerEdgeSet:
    """Binary edge maps from each human labeler plus their [0,1] average."""

    labeler_maps: list[np.ndarray]
    averaged: np.ndarray = field(init=False)

    def __post_init__(self):
        self.averaged = average_ground_truth(self.labeler_maps)


@dataclass
class PatchSample:
    stack: np.ndarray | None  # (16, 16, 9), filled after balancing
    label: int  # 1 = boundary, 0 = non-boundary
    origin: tuple[str, int, int]  # (image id, top-left row, top-left col)


@dataclass
class DatasetManifest:
    samples: list  # PatchSample records, or bare origins before extraction
    counts: tuple[int, int]  # (positives, negatives) after balancing
    raw_counts: tuple[int, int]  # (positives, negatives) before balancing
    seed: int


def average_ground_truth(maps) -> np.ndarray:
    """Pixelwise mean of binary labeler maps; exactly 0 / 1 where none / all marked."""
    maps = [np.asarray(m) for m in maps]
    if not maps:
        raise ValueError("need at least one labeler map")
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise ValueError(f"labeler map shapes differ: {m.shape} vs {shape}")
    stack = np.stack([(m != 0).astype(np.float64) for m in maps])
    return stack.sum(axis=0) / len(maps)


def grid_sample_labels(averaged: np.ndarray, patch: int = PATCH, threshold: float = GRID_THRESHOLD):
    """Label non-overlapping patch-sized tiles by summed edge intensity.

    Tiles start at (0,0) with stride = patch; a tile is positive when its
    pixel sum exceeds the threshold.  Partial tiles at the bottom/right edge
    are discarded.  Returns a list of ((row, col), label) in row-major order.
    """
    avg = np.asarray(averaged, dtype=np.float64)
    th, tw = avg.shape[0] // patch, avg.shape[1] // patch
    if th == 0 or tw == 0:
        raise ValueError(f"map {avg.shape} smaller than patch {patch}")
    cropped = avg[: th * patch, : tw * patch]
    sums = cropped.reshape(th, patch, tw, patch).sum(axis=(1, 3))
    out = []
    for i in range(th):
        for j in range(tw):
            out.append(((i * patch, j * patch), int(sums[i, j] > threshold)))
    return out


def balance_samples(positives: list, negatives: list, seed: int) -> DatasetManifest:
    """Keep all positives, subsample negatives to match, shuffle deterministically."""
    rng = np.random.default_rng(seed)
    keep = list(negatives)
    if len(keep) > len(positives):
        idx = rng.choice(len(keep), size=len(positives), replace=False)
        keep = [keep[i] for i in sorted(idx)]
    combined = list(positives) + keep
    order = rng.permutation(len(combined))
    samples = [combined[i] for i in order]
    return DatasetManifest(
        samples=samples,
        counts=(len(positives), len(keep)),
        raw_counts=(len(positives), len(negatives)),
        seed=seed,
    )


def _to_rgb(data: np.ndarray) -> np.ndarray:
    return np.repeat(data, 3, axis=2) if data.shape[2] == 1 else data


def extract_multiscale_stacks(image: RasterImage, positions) -> np.ndarray:
    """16x16x9 stacks for many top-left positions of one image (reflect-padded once)."""
    h, w = image.height, image.width
    rgb = _to_rgb(image.data)
    padded = np.pad(rgb, ((_PAD, _PAD), (_PAD, _PAD), (0, 0)), mode="reflect")
    crops = {s: np.empty((len(positions), s, s, 3)) for s in SCALES}
    for k, (r, c) in enumerate(positions):
        if r < 0 or c < 0 or r + PATCH > h or c + PATCH > w:
            raise ValueError(f"16x16 window at ({r}, {c}) falls outside {h}x{w} image")
        for s in SCALES:
            off = _PAD - (s - PATCH) // 2  # concentric: 32 starts 8 before, 64 starts 24 before
            crops[s][k] = padded[r + off : r + off + s, c + off : c + off + s]
    parts = [crops[s] if s == PATCH else block_mean(crops[s], s // PATCH, s // PATCH) for s in SCALES]
    return np.concatenate(parts, axis=3)


def extract_multiscale_patch(image: RasterImage, top_left: tuple[int, int]) -> np.ndarray:
    """Single 16x16x9 multi-scale stack at the given 16x16 window position."""
    return extract_multiscale_stacks(image, [top_left])[0]


def scan_corpus(root, split):
    """Sorted (image_id, image_path, [gt_paths]) triples for a corpus split."""
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise DataError(f"split directory not found: {split_dir}")
    entries = []
    problems = []
    for img_path in sorted(split_dir.glob("*.ppm")):
        image_id = img_path.stem
        gt_dir = split_dir / f"{image_id}.gt"
        if not gt_dir.is_dir():
            problems.append((image_id, f"missing ground-truth directory {gt_dir.name}"))
            continue
        gt_paths = sorted(gt_dir.glob("*.pgm"))
        if not gt_paths:
            problems.append((image_id, "ground-truth directory has no .pgm maps"))
            continue
        entries.append((image_id, img_path, gt_paths))
    if problems:
        raise CorpusError(problems)
    if not entries:
        raise DataError(f"no .ppm images under {split_dir}")
    return entries


def build_dataset(root, split: str, seed: int, threshold: float = GRID_THRESHOLD) -> DatasetManifest:
    """Average GT, grid-sample labels, balance corpus-wide, extract stacks."""
    entries = scan_corpus(root, split)
    positives, negatives = [], []
    images = {}
    problems = []
    for image_id, img_path, gt_paths in entries:
        try:
            image = read_pnm(img_path)
            maps = [read_pnm(p).plane for p in gt_paths]
            for m in maps:
                if m.shape != (image.height, image.width):
                    raise DataError(f"ground-truth size {m.shape} != image {image.height}x{image.width}")
            averaged = average_ground_truth(maps)
        except DataError as exc:
            problems.append((image_id, str(exc)))
            continue
        images[image_id] = image
        for (r, c), label in grid_sample_labels(averaged, PATCH, threshold):
            (positives if label else negatives).append((image_id, r, c))
    if problems:
        raise CorpusError(problems)
    manifest = balance_samples(positives, negatives, seed)

    # Extract grouped by image, then restore the shuffled manifest order.
    by_image: dict[str, list[int]] = {}
    for idx, (image_id, r, c) in enumerate(manifest.samples):
        by_image.setdefault(image_id, []).append(idx)
    pos_set = set(map(tuple, positives))
    out: list[PatchSample | None] = [None] * len(manifest.samples)
    for image_id in sorted(by_image):
        indices = by_image[image_id]
        origins = [manifest.samples[i] for i in indices]
        stacks = extract_multiscale_stacks(images[image_id], [(r, c) for _, r, c in origins])
        for i, origin, stack in zip(indices, origins, stacks):
            out[i] = PatchSample(stack=stack, label=int(tuple(origin) in pos_set), origin=tuple(origin))
    manifest.samples = out
    return manifest


def save_dataset(manifest: DatasetManifest, path) -> None:
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", len(manifest.samples)))
        for s in manifest.samples:
            _, r, c = s.origin
            fh.write(struct.pack("<BII", s.label, r, c))
            fh.write(s.stack.transpose(2, 0, 1).astype("<f4").tobytes())


def load_dataset(path) -> DatasetManifest:
    """Read a CFD1 file; image ids are not stored, so origins come back with id ''."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != DATASET_MAGIC:
        raise DataError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 8:
        raise DataError(f"{path}: truncated header")
    (count,) = struct.unpack("<I", data[4:8])
    rec = 9 + 4 * PATCH * PATCH * 9
    if len(data) != 8 + count * rec:
        raise DataError(f"{path}: expected {8 + count * rec} bytes, found {len(data)}")
    samples = []
    pos = 8
    npos = 0
    for _ in range(count):
        label, r, c = struct.unpack("<BII", data[pos : pos + 9])
        if label not in (0, 1):
            raise DataError(f"{path}: bad label byte {label}")
        raw = np.frombuffer(data, dtype="<f4", count=PATCH * PATCH * 9, offset=pos + 9)
        stack = raw.reshape(9, PATCH, PATCH).transpose(1, 2, 0).astype(np.float64)
        samples.append(PatchSample(stack=stack, label=label, origin=("", r, c)))
        npos += label
        pos += rec
    return DatasetManifest(
        samples=samples,
        counts=(npos, count - npos),
        raw_counts=(npos, count - npos),
        seed=-1,
    )
