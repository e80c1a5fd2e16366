"""Bit-exact PMAP grid format and ASCII PLY export.

PMAP layout (all integers little-endian):

    offset  size          content
    0       5             magic: ASCII "PMAP" + version byte 0x01
    5       4             height (u32)
    9       4             width  (u32)
    13      4             channels (u32): 3 = points, 1 = scalar grid
    17      1             flags (u8), bit 0: validity mask present
    18      4*H*W*C       payload, float32, row-major (H, W, C)
    ...     H*W           mask bytes (0/1), only when flag bit 0 is set

Values are stored in 32-bit floats; loading widens to float64 losslessly.
Invalid-masked pixels may hold arbitrary payload bits and are never
interpreted, but NaN at a valid pixel is rejected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import PmapFormatError
from .maps import DepthMap, DisparityMap, PointMap

MAGIC = b"PMAP\x01"
_HEADER = struct.Struct("<III")
FLAG_MASK = 0x01


@dataclass(frozen=True)
class PmapData:
    """Raw decoded grid: float64 values (H, W, C) plus validity mask."""

    values: np.ndarray
    mask: np.ndarray

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]


def write_pmap(path, values, mask=None) -> None:
    """Serialize an (H, W, C) or (H, W) grid; mask omitted means all valid.

    Rejects NaN at valid pixels (the format forbids it).
    """
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise PmapFormatError("bad-shape", f"grid must be (H, W, 1|3), got {arr.shape}")
    h, w, c = arr.shape
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (h, w):
            raise PmapFormatError("bad-shape", "mask shape must match the grid")
        check = arr[mask]
    else:
        check = arr
    if np.isnan(check).any():
        raise PmapFormatError("nan-in-valid", "NaN at a valid pixel")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(h, w, c))
        fh.write(bytes([FLAG_MASK if mask is not None else 0]))
        fh.write(np.ascontiguousarray(arr).tobytes())
        if mask is not None:
            fh.write(mask.astype(np.uint8).tobytes())


def read_pmap(path) -> PmapData:
    """Decode a PMAP file, checking magic, sizes, mask bytes, and NaNs."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise PmapFormatError("bad-magic", "not a PMAP v1 file")
    off = len(MAGIC)
    if len(blob) < off + _HEADER.size + 1:
        raise PmapFormatError("truncated", "header is incomplete")
    h, w, c = _HEADER.unpack_from(blob, off)
    off += _HEADER.size
    flags = blob[off]
    off += 1
    if h < 1 or w < 1 or c not in (1, 3):
        raise PmapFormatError("bad-header", f"unsupported dimensions {h}x{w}x{c}")
    payload_bytes = 4 * h * w * c
    if len(blob) < off + payload_bytes:
        raise PmapFormatError("truncated", "payload is incomplete")
    values = np.frombuffer(blob, dtype="<f4", count=h * w * c, offset=off).reshape(h, w, c)
    off += payload_bytes
    if flags & FLAG_MASK:
        if len(blob) < off + h * w:
            raise PmapFormatError("truncated", "mask is incomplete")
        mask_bytes = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=off)
        if np.any(mask_bytes > 1):
            raise PmapFormatError("bad-mask", "mask bytes must be 0 or 1")
        mask = mask_bytes.reshape(h, w).astype(bool)
        off += h * w
    else:
        mask = np.ones((h, w), dtype=bool)
    if off != len(blob):
        raise PmapFormatError("trailing-data", f"{len(blob) - off} unexpected trailing bytes")
    if np.isnan(values[mask]).any():
        raise PmapFormatError("nan-in-valid", "NaN at a valid pixel")
    return PmapData(values=values.astype(np.float64), mask=mask)


def read_pointmap(path) -> PointMap:
    data = read_pmap(path)
    if data.channels != 3:
        raise PmapFormatError("bad-header", f"expected 3 channels for a point map, got {data.channels}")
    return PointMap(data.values, data.mask)


def _read_scalar(path):
    data = read_pmap(path)
    if data.channels == 3:
        # A point map stands in for its z channel.
        return data.values[:, :, 2], data.mask
    return data.values[:, :, 0], data.mask


def read_depth(path) -> DepthMap:
    z, mask = _read_scalar(path)
    return DepthMap(z, mask)


def read_disparity(path) -> DisparityMap:
    data = read_pmap(path)
    if data.channels != 1:
        raise PmapFormatError("bad-header", "expected 1 channel for a disparity map")
    return DisparityMap(data.values[:, :, 0], data.mask)


def write_pointmap(path, pm: PointMap) -> None:
    write_pmap(path, pm.points, pm.valid)


def write_depth(path, dm: DepthMap) -> None:
    write_pmap(path, dm.z, dm.valid)


def export_ply(pm: PointMap, path) -> None:
    """ASCII PLY with one vertex per valid pixel, row-major order."""
    pts = pm.valid_points()
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    lines.extend(" ".join(repr(float(v)) for v in p) for p in pts)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
