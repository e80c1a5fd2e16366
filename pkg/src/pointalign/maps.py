"""Grid-shaped geometric types and conversions between them.

A point map is an H x W grid of 3D points with a per-pixel validity mask;
depth and disparity maps are its single-channel relatives. All arithmetic
downstream reads only valid pixels, so invalid pixels may hold arbitrary
payload. Arrays are stored as read-only float64 views: instances are
immutable values and safe to share between threads.

Pixel-plane convention: the principal point sits at the grid center and
pixel centers are offset by half a pixel, i.e. u = (col + 0.5) - W/2 and
v = (row + 0.5) - H/2 with y pointing down.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import numpy.typing as npt

from .errors import InputError

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]

#: Weighting mode for map-level alignment: inverse ground-truth depth or flat.
AlignWeights = Literal["inv-z", "uniform"]

#: Depths at or below this value (in the map's own units) are treated as
#: degenerate and invalidated rather than divided by.
POSITIVE_DEPTH_EPS = 1e-6


def _as_readonly_f64(arr, name: str, shape: tuple) -> FloatArray:
    a = np.asarray(arr, dtype=np.float64)
    if a.shape != shape:
        raise InputError(f"{name} must have shape {shape}, got {a.shape}")
    a = np.ascontiguousarray(a)
    view = a.view()
    view.setflags(write=False)
    return view


def _as_readonly_bool(arr, name: str, shape: tuple) -> BoolArray:
    a = np.ascontiguousarray(np.asarray(arr, dtype=bool))
    if a.shape != shape:
        raise InputError(f"{name} must have shape {shape}, got {a.shape}")
    view = a.view()
    view.setflags(write=False)
    return view


@dataclass(frozen=True)
class PointMap:
    """H x W grid of 3D points (x, y, z) plus a validity mask."""

    points: FloatArray  # (H, W, 3)
    valid: BoolArray  # (H, W)

    def __init__(self, points, valid=None):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 3 or points.shape[2] != 3:
            raise InputError(f"points must have shape (H, W, 3), got {points.shape}")
        h, w = points.shape[:2]
        if valid is None:
            valid = np.ones((h, w), dtype=bool)
        object.__setattr__(self, "points", _as_readonly_f64(points, "points", (h, w, 3)))
        object.__setattr__(self, "valid", _as_readonly_bool(valid, "valid", (h, w)))

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    @property
    def z(self) -> FloatArray:
        return self.points[:, :, 2]

    def valid_points(self) -> FloatArray:
        """Valid pixels as an (N, 3) array, row-major order."""
        return self.points[self.valid]


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth. Valid z > 0 is only guaranteed for maps produced by
    shift recovery (scale-invariant form); predictions may hold any sign."""

    z: FloatArray  # (H, W)
    valid: BoolArray  # (H, W)

    def __init__(self, z, valid=None):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2:
            raise InputError(f"z must have shape (H, W), got {z.shape}")
        h, w = z.shape
        if valid is None:
            valid = np.ones((h, w), dtype=bool)
        object.__setattr__(self, "z", _as_readonly_f64(z, "z", (h, w)))
        object.__setattr__(self, "valid", _as_readonly_bool(valid, "valid", (h, w)))

    @property
    def height(self) -> int:
        return self.z.shape[0]

    @property
    def width(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class DisparityMap:
    """Per-pixel disparity d = 1/z wherever constructed from a DepthMap."""

    d: FloatArray  # (H, W)
    valid: BoolArray  # (H, W)

    def __init__(self, d, valid=None):
        d = np.asarray(d, dtype=np.float64)
        if d.ndim != 2:
            raise InputError(f"d must have shape (H, W), got {d.shape}")
        h, w = d.shape
        if valid is None:
            valid = np.ones((h, w), dtype=bool)
        object.__setattr__(self, "d", _as_readonly_f64(d, "d", (h, w)))
        object.__setattr__(self, "valid", _as_readonly_bool(valid, "valid", (h, w)))

    @property
    def height(self) -> int:
        return self.d.shape[0]

    @property
    def width(self) -> int:
        return self.d.shape[1]


@dataclass(frozen=True)
class ImageGrid:
    """Centered pixel-plane coordinates for an H x W image.

    The center pixel maps to (0, 0) up to half-pixel quantization and u
    spans the symmetric range (-W/2, W/2).
    """

    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InputError("grid dimensions must be positive")

    def uv(self) -> tuple[FloatArray, FloatArray]:
        """Per-pixel (u, v) arrays of shape (H, W)."""
        u = (np.arange(self.width, dtype=np.float64) + 0.5) - self.width / 2.0
        v = (np.arange(self.height, dtype=np.float64) + 0.5) - self.height / 2.0
        return np.broadcast_to(u, (self.height, self.width)).copy(), \
            np.broadcast_to(v[:, None], (self.height, self.width)).copy()


ShiftMode = Literal["1d", "3d"]


@dataclass(frozen=True)
class SimilarityAlign:
    """Alignment transform p -> scale * p + shift.

    With shift_mode "1d" the shift is restricted to the z axis
    (tx = ty = 0 exactly); "3d" allows a full 3-vector.
    """

    scale: float
    shift: FloatArray = field(default_factory=lambda: np.zeros(3))
    shift_mode: ShiftMode = "1d"

    def __init__(self, scale: float, shift=(0.0, 0.0, 0.0), shift_mode: ShiftMode = "1d"):
        scale = float(scale)
        if not np.isfinite(scale) or scale <= 0.0:
            raise InputError(f"scale must be positive and finite, got {scale}")
        shift = np.asarray(shift, dtype=np.float64)
        if shift.shape != (3,):
            raise InputError(f"shift must be a 3-vector, got shape {shift.shape}")
        if shift_mode == "1d":
            if shift[0] != 0.0 or shift[1] != 0.0:
                raise InputError("1d shift mode requires tx = ty = 0")
        elif shift_mode != "3d":
            raise InputError(f"unknown shift_mode {shift_mode!r}")
        view = np.ascontiguousarray(shift).view()
        view.setflags(write=False)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "shift", view)
        object.__setattr__(self, "shift_mode", shift_mode)

    def apply(self, points) -> FloatArray:
        """Apply scale * p + shift to an (..., 3) array of points."""
        return self.scale * np.asarray(points, dtype=np.float64) + self.shift


def pointmap_to_depth(pm: PointMap, shift_z: float) -> DepthMap:
    """Shift z coordinates into depth; nonpositive results become invalid.

    Pixels whose shifted z falls at or below POSITIVE_DEPTH_EPS are marked
    invalid instead of raising.
    """
    z = pm.z + float(shift_z)
    valid = pm.valid & (z > POSITIVE_DEPTH_EPS)
    return DepthMap(z, valid)


def depth_to_disparity(dm: DepthMap) -> DisparityMap:
    """Reciprocal depth d = 1/z. Rejects any valid pixel with z <= 0."""
    zv = dm.z[dm.valid]
    if zv.size and np.any(zv <= 0.0):
        raise InputError("depth_to_disparity requires z > 0 at all valid pixels")
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(dm.valid, 1.0 / dm.z, 0.0)
    return DisparityMap(d, dm.valid)


def _nearest_indices(src: int, dst: int) -> npt.NDArray[np.intp]:
    # Sample source pixel centers at target pixel centers; identical dims
    # reduce to the identity map.
    idx = np.floor((np.arange(dst) + 0.5) * (src / dst)).astype(np.intp)
    return np.minimum(idx, src - 1)


def downsample_pointmap(pm: PointMap, target_h: int, target_w: int) -> PointMap:
    """Nearest-neighbor resize on a uniform grid; never interpolates.

    A target pixel is valid iff its sampled source pixel is valid.
    """
    if target_h < 1 or target_w < 1:
        raise InputError("target dimensions must be positive")
    if target_h > pm.height or target_w > pm.width:
        raise InputError("target dimensions must not exceed source dimensions")
    rows = _nearest_indices(pm.height, target_h)
    cols = _nearest_indices(pm.width, target_w)
    return PointMap(pm.points[np.ix_(rows, cols)], pm.valid[np.ix_(rows, cols)])


def downsample_grid(src_grid: ImageGrid, target_h: int, target_w: int) -> tuple[FloatArray, FloatArray]:
    """(u, v) of the source pixels that downsample_pointmap would sample.

    Keeps camera geometry consistent when solving on a reduced map: the
    coordinates stay in source-pixel units.
    """
    if target_h > src_grid.height or target_w > src_grid.width:
        raise InputError("target dimensions must not exceed source dimensions")
    u, v = src_grid.uv()
    rows = _nearest_indices(src_grid.height, target_h)
    cols = _nearest_indices(src_grid.width, target_w)
    return u[np.ix_(rows, cols)], v[np.ix_(rows, cols)]
