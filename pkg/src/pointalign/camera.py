"""Pinhole focal length and z-shift recovery from affine point maps.

Given per-pixel 3D points (x, y, z) and their centered image-plane
coordinates (u, v), the focal f and shift t minimizing the projection
error sum (f x/(z+t) - u)^2 + (f y/(z+t) - v)^2 are found by eliminating
f through its closed form and running a damped Gauss-Newton iteration on
the remaining scalar t. Positivity of z + t is kept by switching to an
exponential parameterization whenever an unconstrained step would cross
the barrier.

Only isotropic focal lengths and centered principal points are modeled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateGeometryError, InputError
from .maps import DepthMap, FloatArray, ImageGrid, PointMap

DEFAULT_ITERATION_BUDGET = 100


@dataclass(frozen=True)
class CameraSolution:
    """Recovered focal (grid pixel units), z-shift, and solve diagnostics.

    final_residual is the mean squared projection error per pixel.
    """

    focal: float
    shift_z: float
    iterations: int
    final_residual: float


@dataclass(frozen=True)
class FovDegrees:
    vertical: float
    horizontal: float

    def __post_init__(self):
        for v in (self.vertical, self.horizontal):
            if not 0.0 < v < 180.0:
                raise InputError(f"field of view must lie in (0, 180) degrees, got {v}")


def _scene_scale(z: FloatArray) -> float:
    # Robust positive length scale even for shifted (possibly negative) z.
    med = float(np.median(z))
    span = float(np.max(z) - np.min(z))
    return max(med, span, 1e-12)


def _regression_shift(x, y, z, u, v):
    """Closed-form initializer: x ~ u (z + t)/f is linear in (1/f, t/f).

    Solves the 2x2 least squares for (a, b) = (1/f, t/f) over both axes and
    returns t = b/a, or None when the system is degenerate or yields a
    nonpositive focal.
    """
    g1 = np.concatenate((u * z, v * z))
    g2 = np.concatenate((u, v))
    rhs = np.concatenate((x, y))
    a11 = float(g1 @ g1)
    a12 = float(g1 @ g2)
    a22 = float(g2 @ g2)
    det = a11 * a22 - a12 * a12
    if abs(det) <= 1e-12 * max(a11 * a22, a12 * a12, 1e-300):
        return None
    r1 = float(g1 @ rhs)
    r2 = float(g2 @ rhs)
    a = (a22 * r1 - a12 * r2) / det
    b = (a11 * r2 - a12 * r1) / det
    if not np.isfinite(a) or a <= 0.0:
        return None
    t = b / a
    return t if np.isfinite(t) else None


def _closed_form_focal_arrays(x, y, z, u, v, shift_z: float) -> float:
    q = 1.0 / (z + shift_z)
    a = x * q
    b = y * q
    denom = float(np.sum(a * a) + np.sum(b * b))
    if denom == 0.0:
        raise DegenerateGeometryError(
            "all projected coordinates are zero; focal length is unconstrained"
        )
    return float(np.sum(a * u) + np.sum(b * v)) / denom


def closed_form_focal(pm: PointMap, grid: ImageGrid, shift_z: float) -> float:
    """Optimal focal for a fixed shift: ratio of projection cross terms to
    squared terms. Requires z + shift_z > 0 at every valid pixel."""
    if (pm.height, pm.width) != (grid.height, grid.width):
        raise InputError("point map and grid dimensions must match")
    mask = pm.valid
    if not mask.any():
        raise InputError("no valid pixels")
    x, y, z = (pm.points[mask][:, c] for c in range(3))
    if np.any(z + shift_z <= 0.0):
        raise InputError("closed_form_focal requires z + shift_z > 0 at valid pixels")
    u_grid, v_grid = grid.uv()
    return _closed_form_focal_arrays(x, y, z, u_grid[mask], v_grid[mask], float(shift_z))


def _residual_state(x, y, z, u, v, t):
    """Objective, gradient pieces of the reduced problem at shift t."""
    q = 1.0 / (z + t)
    a = x * q
    b = y * q
    s1 = float(np.sum(a * u) + np.sum(b * v))
    s2 = float(np.sum(a * a) + np.sum(b * b))
    if s2 == 0.0:
        raise DegenerateGeometryError(
            "all projected coordinates are zero; focal length is unconstrained"
        )
    f = s1 / s2
    ru = f * a - u
    rv = f * b - v
    g = float(np.sum(ru * ru) + np.sum(rv * rv))
    ds1 = float(-np.sum(a * q * u) - np.sum(b * q * v))
    ds2 = float(-2.0 * np.sum((a * a + b * b) * q))
    df = (ds1 * s2 - s1 * ds2) / (s2 * s2)
    dru = df * a - f * a * q
    drv = df * b - f * b * q
    jtr = float(np.sum(dru * ru) + np.sum(drv * rv))
    jtj = float(np.sum(dru * dru) + np.sum(drv * drv))
    return g, f, jtr, jtj


def recover_focal_shift(
    pm: PointMap,
    grid: ImageGrid,
    max_iterations: int = DEFAULT_ITERATION_BUDGET,
) -> CameraSolution:
    """Solve for (focal, shift) minimizing the reprojection error.

    Damped Gauss-Newton on the f-eliminated problem: damping grows x10 on a
    rejected trial and shrinks x0.1 on success; every trial counts as one
    iteration. Stops when the step falls below 1e-6 of the scene scale or
    the residual change is below 1e-9 relative. Output depends only on
    valid pixels.
    """
    if (pm.height, pm.width) != (grid.height, grid.width):
        raise InputError("point map and grid dimensions must match")
    mask = pm.valid
    n_valid = int(mask.sum())
    if n_valid < 2:
        raise InputError("focal/shift recovery needs at least 2 valid pixels")
    pts = pm.points[mask]
    x, y, z = pts[:, 0].copy(), pts[:, 1].copy(), pts[:, 2].copy()
    u_grid, v_grid = grid.uv()
    u = u_grid[mask]
    v = v_grid[mask]

    min_z = float(np.min(z))
    med_z = float(np.median(z))
    span = float(np.max(z) - min_z)
    scale = _scene_scale(z)
    margin = 1e-4 * scale
    t_lo = margin - min_z  # z + t == margin at t == t_lo

    # Initialize from the closed-form linear fit; an infeasible or failed
    # fit falls back to 0 (when feasible) or a point safely off the barrier.
    t = _regression_shift(x, y, z, u, v)
    if t is None:
        t = 0.0
    if min_z + t <= margin:
        t = max(t_lo, -min_z + 0.25 * max(span, margin))
    lam = 1e-3
    use_theta = False
    theta = 0.0

    g, f, jtr, jtj = _residual_state(x, y, z, u, v, t)
    iterations = 0
    converged = False
    while iterations < max_iterations:
        iterations += 1
        if jtj == 0.0:
            converged = True  # flat residual: already optimal
            break
        # Depth scale at the current shift sets the step tolerance. The
        # accepted-step check below fires first on normal runs; this guard
        # only catches float-limited stalls right at the optimum.
        step_tol = 1e-6 * max(med_z + t, span, 1e-12)
        if abs(jtr / jtj) < 1e-6 * step_tol:
            converged = True
            break
        if use_theta:
            dtheta = -(jtr * math.exp(theta)) / (jtj * math.exp(2.0 * theta) * (1.0 + lam))
            theta_new = theta + dtheta
            t_new = t_lo + math.exp(theta_new)
        else:
            t_new = t - jtr / (jtj * (1.0 + lam))
            if min_z + t_new <= margin:
                # Unconstrained step crossed the positivity barrier: switch
                # to t = exp(theta) + t_lo from the current feasible point.
                use_theta = True
                theta = math.log(max(t - t_lo, margin))
                continue
        g_new, f_new, jtr_new, jtj_new = _residual_state(x, y, z, u, v, t_new)
        if g_new <= g:
            step = abs(t_new - t)
            rel_drop = abs(g - g_new) / max(g, 1e-300)
            t, g, f, jtr, jtj = t_new, g_new, f_new, jtr_new, jtj_new
            if use_theta:
                theta = math.log(max(t - t_lo, 1e-300))
            lam = max(lam * 0.1, 1e-12)
            if step < step_tol or rel_drop < 1e-9:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e14:
                converged = True  # damping saturated: no further progress possible
                break
    if not converged:
        raise ConvergenceError(
            f"focal/shift recovery did not converge within {max_iterations} iterations",
            last_focal=f,
            last_shift=t,
            iterations=iterations,
        )
    if f <= 0.0 or not np.isfinite(f):
        raise DegenerateGeometryError(f"recovered focal length is not positive ({f})")
    return CameraSolution(
        focal=float(f),
        shift_z=float(t),
        iterations=iterations,
        final_residual=g / n_valid,
    )


def fov_from_focal(f: float, grid: ImageGrid) -> FovDegrees:
    """Vertical and horizontal field of view in degrees."""
    f = float(f)
    if f <= 0.0:
        raise InputError("focal length must be positive")
    return FovDegrees(
        vertical=math.degrees(2.0 * math.atan(grid.height / (2.0 * f))),
        horizontal=math.degrees(2.0 * math.atan(grid.width / (2.0 * f))),
    )


def project(points, f: float, grid: ImageGrid) -> FloatArray:
    """Pinhole projection (f x/z, f y/z) in the grid's centered pixel
    coordinates. Rejects nonpositive depths, naming the offending index."""
    del grid  # coordinates are already centered; kept for interface symmetry
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InputError("points must be an (N, 3) array")
    bad = np.flatnonzero(pts[:, 2] <= 0.0)
    if bad.size:
        raise InputError(f"projection requires z > 0; first offending index: {bad[0]}")
    f = float(f)
    uv = np.empty((pts.shape[0], 2))
    uv[:, 0] = f * pts[:, 0] / pts[:, 2]
    uv[:, 1] = f * pts[:, 1] / pts[:, 2]
    return uv


def unproject(dm: DepthMap, f: float, grid: ImageGrid) -> PointMap:
    """Lift a depth map to camera-space points (u z/f, v z/f, z)."""
    f = float(f)
    if f <= 0.0:
        raise InputError("focal length must be positive")
    if (dm.height, dm.width) != (grid.height, grid.width):
        raise InputError("depth map and grid dimensions must match")
    if np.any(dm.z[dm.valid] <= 0.0):
        raise InputError("unproject requires z > 0 at valid pixels")
    u, v = grid.uv()
    pts = np.empty((dm.height, dm.width, 3))
    pts[:, :, 0] = u * dm.z / f
    pts[:, :, 1] = v * dm.z / f
    pts[:, :, 2] = dm.z
    return PointMap(pts, dm.valid)
