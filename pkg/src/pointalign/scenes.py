"""Deterministic synthetic scenes with analytic ground truth.

Each family produces a depth map, the forward-rendered affine point map
(z shifted by -shift so that recovering +shift restores camera space),
per-pixel analytic surface normals, and the true focal length. Used as
fixtures for round-trip and robustness tests and by the `synth` CLI.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import unproject
from .errors import InputError
from .maps import DepthMap, FloatArray, ImageGrid, PointMap

FAMILIES = ("plane", "two-plane", "sphere-patch", "two-cluster")


@dataclass(frozen=True)
class SyntheticScene:
    """Scene fixture: depth + rendered point map + analytic normals."""

    depth: DepthMap
    focal: float
    shift_true: float
    pointmap: PointMap
    normals: FloatArray  # (H, W, 3), unit length at valid pixels
    description: str
    regions: tuple = field(default=())  # flat pixel-index arrays, when meaningful


def _render(depth: DepthMap, focal: float, shift: float, normals, tag, regions=()):
    pm = unproject(depth, focal, ImageGrid(depth.height, depth.width))
    pts = pm.points.copy()
    pts[:, :, 2] -= shift
    normals = np.asarray(normals, dtype=np.float64)
    view = np.ascontiguousarray(normals).view()
    view.setflags(write=False)
    return SyntheticScene(
        depth=depth,
        focal=float(focal),
        shift_true=float(shift),
        pointmap=PointMap(pts, depth.valid),
        normals=view,
        description=tag,
        regions=tuple(np.asarray(r, dtype=np.int64) for r in regions),
    )


def _pop(params: dict, key, default):
    return params.pop(key) if key in params else default


def make_scene(family: str, params: dict | None = None, seed: int = 0) -> SyntheticScene:
    """Build a scene of the given family.

    Unspecified focal lengths are drawn from U[300, 1500) with the seed;
    the shift defaults to 0. Unknown families or parameters are rejected.
    """
    if family not in FAMILIES:
        raise InputError(f"unknown scene family {family!r}; expected one of {FAMILIES}")
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    h = int(_pop(params, "height", 64))
    w = int(_pop(params, "width", 64))
    focal = _pop(params, "focal", None)
    focal = float(focal) if focal is not None else float(rng.uniform(300.0, 1500.0))
    shift = float(_pop(params, "shift", 0.0))
    grid = ImageGrid(h, w)
    u, v = grid.uv()

    if family == "plane":
        d0 = float(_pop(params, "depth", 4.0))
        sx = float(_pop(params, "slope_x", 0.25))
        sy = float(_pop(params, "slope_y", -0.15))
        _reject_leftovers(family, params)
        denom = 1.0 - sx * u / focal - sy * v / focal
        if np.any(denom <= 0.0):
            raise InputError("plane slopes too steep for this field of view")
        z = d0 / denom
        n = np.array([sx, sy, -1.0]) / np.sqrt(sx * sx + sy * sy + 1.0)
        normals = np.broadcast_to(n, (h, w, 3)).copy()
        return _render(DepthMap(z), focal, shift, normals, family)

    if family == "two-plane":
        d_near = float(_pop(params, "depth_near", 3.0))
        d_far = float(_pop(params, "depth_far", 6.0))
        _reject_leftovers(family, params)
        if d_near <= 0.0 or d_far <= 0.0:
            raise InputError("plane depths must be positive")
        z = np.full((h, w), d_far)
        z[:, : w // 2] = d_near
        normals = np.broadcast_to(np.array([0.0, 0.0, -1.0]), (h, w, 3)).copy()
        return _render(DepthMap(z), focal, shift, normals, family)

    if family == "sphere-patch":
        center_depth = float(_pop(params, "center_depth", 6.0))
        radius = float(_pop(params, "radius", 0.75 * center_depth))
        _reject_leftovers(family, params)
        # Near intersection of each pixel ray with the sphere at (0,0,c).
        g = 1.0 + (u * u + v * v) / (focal * focal)
        disc = center_depth * center_depth - g * (center_depth * center_depth - radius * radius)
        if np.any(disc < 0.0):
            raise InputError("sphere patch does not cover the full grid; enlarge radius")
        z = (center_depth - np.sqrt(disc)) / g
        pts = np.empty((h, w, 3))
        pts[:, :, 0] = u * z / focal
        pts[:, :, 1] = v * z / focal
        pts[:, :, 2] = z
        normals = (pts - np.array([0.0, 0.0, center_depth])) / radius
        return _render(DepthMap(z), focal, shift, normals, family)

    # two-cluster: two small fronto-parallel patches far apart in depth,
    # separated by well over 10x their diameters (the relative-distance
    # ambiguity fixture). Pixels outside the patches are invalid.
    d_near = float(_pop(params, "depth_near", 2.0))
    d_far = float(_pop(params, "depth_far", 40.0))
    patch = int(_pop(params, "patch", 12))
    _reject_leftovers(family, params)
    if patch * 2 > w or patch > h:
        raise InputError("patch size too large for the grid")
    z = np.full((h, w), 1.0)
    valid = np.zeros((h, w), dtype=bool)
    r0 = (h - patch) // 2
    c_left = w // 4 - patch // 2
    c_right = 3 * w // 4 - patch // 2
    z[r0 : r0 + patch, c_left : c_left + patch] = d_near
    z[r0 : r0 + patch, c_right : c_right + patch] = d_far
    valid[r0 : r0 + patch, c_left : c_left + patch] = True
    valid[r0 : r0 + patch, c_right : c_right + patch] = True
    normals = np.broadcast_to(np.array([0.0, 0.0, -1.0]), (h, w, 3)).copy()
    flat = np.arange(h * w).reshape(h, w)
    regions = (
        flat[r0 : r0 + patch, c_left : c_left + patch].ravel(),
        flat[r0 : r0 + patch, c_right : c_right + patch].ravel(),
    )
    return _render(DepthMap(z, valid), focal, shift, normals, family, regions)


def _reject_leftovers(family: str, params: dict):
    if params:
        raise InputError(f"unknown parameters for family {family!r}: {sorted(params)}")
