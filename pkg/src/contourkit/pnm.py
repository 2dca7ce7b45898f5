"""Readers and writers for the portable formats the toolkit speaks.

Images and maps travel as PGM (P2/P5, single channel) or PPM (P3/P6,
3-channel) with maxval 255; pixel value v maps to the real v/255.  Lossless
maps use the tiny "CFR1" container: magic, u32 height, u32 width, then
height*width little-endian float32 values in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError
from .raster import RasterImage

RAW_MAP_MAGIC = b"CFR1"


def _tokens(data: bytes):
    """Yield whitespace-separated header tokens, skipping '#' comments."""
    i = 0
    n = len(data)
    while i < n:
        c = data[i : i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < n and data[j : j + 1] not in b" \t\r\n#":
                j += 1
            yield i, data[i:j]
            i = j


def read_pnm(path) -> RasterImage:
    """Read a P2/P3/P5/P6 file with maxval 255 into a [0,1] RasterImage."""
    with open(path, "rb") as fh:
        data = fh.read()
    toks = _tokens(data)
    try:
        _, magic = next(toks)
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise DataError(f"{path}: unsupported magic {magic!r}")
    channels = 3 if magic in (b"P3", b"P6") else 1
    binary = magic in (b"P5", b"P6")
    try:
        _, wtok = next(toks)
        _, htok = next(toks)
        mpos, mtok = next(toks)
        width, height, maxval = int(wtok), int(htok), int(mtok)
    except (StopIteration, ValueError):
        raise DataError(f"{path}: malformed header") from None
    if width < 1 or height < 1:
        raise DataError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise DataError(f"{path}: maxval {maxval} unsupported (only 255)")
    count = width * height * channels
    if binary:
        start = mpos + len(mtok) + 1  # single whitespace byte after maxval
        raster = data[start : start + count]
        if len(raster) != count:
            raise DataError(f"{path}: truncated raster ({len(raster)} of {count} bytes)")
        vals = np.frombuffer(raster, dtype=np.uint8)
    else:
        vals = []
        for _, tok in toks:
            try:
                vals.append(int(tok))
            except ValueError:
                raise DataError(f"{path}: non-numeric sample {tok!r}") from None
            if len(vals) == count:
                break
        if len(vals) != count:
            raise DataError(f"{path}: truncated raster ({len(vals)} of {count} samples)")
        vals = np.asarray(vals)
        if vals.min() < 0 or vals.max() > 255:
            raise DataError(f"{path}: sample out of range")
    arr = vals.reshape(height, width, channels).astype(np.float64) / 255.0
    return RasterImage(arr)


def _quantize(img: RasterImage) -> np.ndarray:
    return np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)


def write_pnm(path, img: RasterImage, binary: bool = True) -> None:
    """Write a single-channel image as PGM or a 3-channel image as PPM."""
    q = _quantize(img)
    if img.channels == 1:
        magic = b"P5" if binary else b"P2"
    else:
        magic = b"P6" if binary else b"P3"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(q.tobytes())
        else:
            flat = q.reshape(-1)
            for i in range(0, flat.size, 16):
                fh.write(b" ".join(b"%d" % v for v in flat[i : i + 16]) + b"\n")


def write_raw_map(path, map2d: np.ndarray) -> None:
    """Write a 2-D float map to the lossless CFR1 container."""
    m = np.asarray(map2d, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("raw map must be 2-D")
    with open(path, "wb") as fh:
        fh.write(RAW_MAP_MAGIC)
        fh.write(struct.pack("<II", m.shape[0], m.shape[1]))
        fh.write(m.astype("<f4").tobytes())


def read_raw_map(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != RAW_MAP_MAGIC:
        raise DataError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise DataError(f"{path}: truncated header")
    h, w = struct.unpack("<II", data[4:12])
    count = h * w
    body = data[12:]
    if len(body) != 4 * count:
        raise DataError(f"{path}: expected {4 * count} raster bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
