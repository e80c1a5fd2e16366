"""Reference implementations of the point-map training losses.

All losses are reported as means (per valid pixel or per sphere member)
so values are resolution-independent; the alignment argmin is unaffected.
Alignment inside the losses truncates residuals at tau, while the reported
per-pixel values are plain weighted L1 terms. Pixels whose ground-truth z
is at or below the positive-depth epsilon are dropped from the effective
mask before aligning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InputError
from .maps import POSITIVE_DEPTH_EPS, FloatArray, PointMap
from .solver import DEFAULT_TAU, align_scale_shift_1d, align_scale_shift_3d

#: Coarse-to-fine sphere scales from the multi-scale local loss.
DEFAULT_SCALES = (0.25, 0.0625, 0.015625)
DEFAULT_ANCHORS_PER_SCALE = 4
DEFAULT_TRIM = 0.05

#: Loss-component tiers keyed by label source quality. Higher-quality data
#: activates finer-grained supervision; each tier lists the active local
#: scales (subset of DEFAULT_SCALES) and whether normals are supervised.
LOSS_PRESETS = {
    "synthetic": {"local_scales": DEFAULT_SCALES, "normal": True, "mask": True},
    "sfm-recon": {"local_scales": DEFAULT_SCALES[:2], "normal": False, "mask": True},
    "lidar": {"local_scales": DEFAULT_SCALES[:1], "normal": False, "mask": True},
    "kinect": {"local_scales": (), "normal": False, "mask": True},
}


@dataclass(frozen=True)
class SphereRegion:
    """Pixels within a metric radius of an anchor point."""

    anchor_index: int
    radius: float
    members: np.ndarray  # sorted flat pixel indices, anchor included


@dataclass(frozen=True)
class LocalLossResult:
    per_scale: dict
    spheres_used: int
    spheres_skipped: int


@dataclass(frozen=True)
class LossBreakdown:
    """Individual loss terms plus their weighted total.

    Inactive components are None and contribute nothing to the total.
    """

    global_term: float | None
    local_terms: dict | None
    normal_term: float | None
    mask_term: float | None
    total: float


def _effective_mask(pred: PointMap, gt: PointMap):
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise InputError("pred and gt maps must be co-registered (equal shapes)")
    mask = pred.valid & gt.valid & (gt.z > POSITIVE_DEPTH_EPS)
    if not mask.any():
        raise InputError("no joint-valid pixels with positive depth")
    return mask


def global_loss(
    pred: PointMap,
    gt: PointMap,
    tau: float | None = DEFAULT_TAU,
    trim_fraction: float = DEFAULT_TRIM,
) -> float:
    """Aligned weighted-L1 point loss with top-fraction trimming.

    Aligns with the scale + z-shift solver, computes (1/z_i) ||s phat + t
    - p||_1 per pixel, drops the floor(trim_fraction * n) largest values,
    and returns the mean of the rest.
    """
    if not 0.0 <= trim_fraction <= 0.5:
        raise InputError("trim_fraction must lie in [0, 0.5]")
    mask = _effective_mask(pred, gt)
    pred_m = PointMap(pred.points, mask)
    gt_m = PointMap(gt.points, mask)
    res = align_scale_shift_1d(pred_m, gt_m, tau)
    phat = pred.points[mask]
    p = gt.points[mask]
    w = 1.0 / p[:, 2]
    per_pixel = w * np.abs(res.align.apply(phat) - p).sum(axis=1)
    return trimmed_mean(per_pixel, trim_fraction)


def trimmed_mean(values: FloatArray, trim_fraction: float) -> float:
    """Mean after dropping the top floor(trim * n) values (at least one kept)."""
    n = values.size
    drop = min(int(np.floor(trim_fraction * n)), n - 1)
    if drop == 0:
        return float(np.mean(values))
    kept = np.sort(values)[: n - drop]
    return float(np.mean(kept))


def sphere_radius(alpha: float, anchor_z: float, height: int, width: int, f: float) -> float:
    """Radius making the projected sphere span alpha of the image diagonal."""
    return alpha * anchor_z * np.hypot(width, height) / (2.0 * f)


def select_sphere(gt: PointMap, anchor: int, alpha: float, f: float) -> SphereRegion:
    """All valid pixels within the anchor-scaled radius of the anchor point."""
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)")
    if f <= 0.0:
        raise InputError("focal length must be positive")
    flat_valid = gt.valid.ravel()
    anchor = int(anchor)
    if anchor < 0 or anchor >= flat_valid.size or not flat_valid[anchor]:
        raise InputError(f"anchor pixel {anchor} is not a valid pixel")
    pts = gt.points.reshape(-1, 3)
    center = pts[anchor]
    r = sphere_radius(alpha, center[2], gt.height, gt.width, f)
    dist = np.linalg.norm(pts - center, axis=1)
    members = np.flatnonzero(flat_valid & (dist <= r))
    return SphereRegion(anchor_index=anchor, radius=float(r), members=members)


def multiscale_local_loss(
    pred: PointMap,
    gt: PointMap,
    f: float,
    scales=DEFAULT_SCALES,
    anchors_per_scale: int = DEFAULT_ANCHORS_PER_SCALE,
    tau: float | None = DEFAULT_TAU,
    seed: int = 0,
) -> LocalLossResult:
    """Mean weighted-L1 loss over independently aligned sphere regions.

    Anchors are drawn uniformly (without replacement) from the valid set
    with the given seed; each sphere is aligned with the 3-D-shift solver
    since local regions carry no principal-axis constraint. Per scale, the
    summed residuals are normalized by the total member count. Spheres
    whose optimal scale is not positive (tiny regions on depth-constant
    surfaces) carry no usable signal and are skipped with the diagnostic
    counter, like empty ones.
    """
    if anchors_per_scale < 1:
        raise InputError("anchors_per_scale must be at least 1")
    mask = _effective_mask(pred, gt)
    gt_m = PointMap(gt.points, mask)
    valid_idx = np.flatnonzero(mask.ravel())
    pts_pred = pred.points.reshape(-1, 3)
    pts_gt = gt.points.reshape(-1, 3)
    rng = np.random.default_rng(seed)
    per_scale = {}
    used = 0
    skipped = 0
    for alpha in scales:
        n_draw = min(anchors_per_scale, valid_idx.size)
        anchors = rng.choice(valid_idx, size=n_draw, replace=False)
        total = 0.0
        count = 0
        for anchor in anchors:
            region = select_sphere(gt_m, int(anchor), float(alpha), f)
            if region.members.size == 0:
                skipped += 1
                continue
            phat = pts_pred[region.members]
            p = pts_gt[region.members]
            w = 1.0 / p[:, 2]
            try:
                res = align_scale_shift_3d(phat, p, w, tau)
            except DegenerateGeometryError:
                skipped += 1
                continue
            used += 1
            total += float(np.sum(w * np.abs(res.align.apply(phat) - p).sum(axis=1)))
            count += region.members.size
        per_scale[float(alpha)] = total / count if count else 0.0
    return LocalLossResult(per_scale=per_scale, spheres_used=used, spheres_skipped=skipped)


def grid_normals(pred: PointMap, valid=None):
    """Per-pixel normals from the down x right cross of grid edges.

    Camera looks along +Z, so visible surfaces get negative-z normals.
    Returns (normals (H, W, 3), usable mask, degenerate count); a pixel is
    usable when itself, its right and its down neighbor are all valid and
    the cross product is nonzero.
    """
    eff = pred.valid if valid is None else (pred.valid & np.asarray(valid, dtype=bool))
    h, w = pred.height, pred.width
    pts = pred.points
    usable = np.zeros((h, w), dtype=bool)
    usable[: h - 1, : w - 1] = (
        eff[: h - 1, : w - 1] & eff[: h - 1, 1:] & eff[1:, : w - 1]
    )
    edge_r = pts[: h - 1, 1:, :] - pts[: h - 1, : w - 1, :]
    edge_d = pts[1:, : w - 1, :] - pts[: h - 1, : w - 1, :]
    cross = np.cross(edge_d, edge_r)
    norm = np.linalg.norm(cross, axis=2)
    degenerate = int(np.sum(usable[: h - 1, : w - 1] & (norm == 0.0)))
    usable[: h - 1, : w - 1] &= norm > 0.0
    normals = np.zeros((h, w, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        normals[: h - 1, : w - 1] = cross / norm[:, :, None]
    return normals, usable, degenerate


def normal_loss(pred: PointMap, gt_normals, valid=None) -> float:
    """Mean angle in radians between grid-derived and ground-truth normals.

    Degenerate (zero-area) cells are skipped; at least one usable pixel is
    required.
    """
    gt_normals = np.asarray(gt_normals, dtype=np.float64)
    if gt_normals.shape != (pred.height, pred.width, 3):
        raise InputError("gt_normals must have shape (H, W, 3)")
    normals, usable, _ = grid_normals(pred, valid)
    if not usable.any():
        raise InputError("no pixels with a complete valid neighborhood")
    n_hat = normals[usable]
    n_gt = gt_normals[usable]
    cross = np.linalg.norm(np.cross(n_hat, n_gt), axis=1)
    dot = np.sum(n_hat * n_gt, axis=1)
    angles = np.arctan2(cross, dot)
    return float(np.mean(angles))


def mask_loss(pred_mask, inf_mask) -> float:
    """Mean squared error between the validity head and 1 - infinity mask."""
    pred_mask = np.asarray(pred_mask, dtype=np.float64)
    inf = np.asarray(inf_mask, dtype=bool)
    if pred_mask.shape != inf.shape:
        raise InputError("pred_mask and inf_mask shapes must match")
    target = 1.0 - inf.astype(np.float64)
    return float(np.mean((pred_mask - target) ** 2))


def binarize_mask(pred_mask, threshold: float = 0.5):
    """Validity decision from mask probabilities; >= threshold is valid."""
    return np.asarray(pred_mask, dtype=np.float64) >= threshold


def loss_breakdown(
    pred: PointMap,
    gt: PointMap,
    focal: float | None = None,
    preset: str = "synthetic",
    tau: float | None = DEFAULT_TAU,
    trim_fraction: float = DEFAULT_TRIM,
    anchors_per_scale: int = DEFAULT_ANCHORS_PER_SCALE,
    seed: int = 0,
    scales=None,
    gt_normals=None,
    normals_valid=None,
    pred_mask=None,
    inf_mask=None,
    weights: dict | None = None,
) -> LossBreakdown:
    """Assemble the configured loss terms and their weighted total.

    The preset picks which components are active; an explicit `scales`
    replaces the preset's local scales. Components whose inputs are missing
    (focal for local terms, normals, masks) are skipped and reported as
    None. Component weights default to 1.0.
    """
    if preset not in LOSS_PRESETS:
        raise InputError(f"unknown preset {preset!r}; expected one of {sorted(LOSS_PRESETS)}")
    cfg = LOSS_PRESETS[preset]
    local_scales = tuple(scales) if scales is not None else cfg["local_scales"]
    weights = {"global": 1.0, "local": 1.0, "normal": 1.0, "mask": 1.0, **(weights or {})}

    g = global_loss(pred, gt, tau, trim_fraction)
    total = weights["global"] * g

    local_terms = None
    if local_scales and focal is not None:
        local = multiscale_local_loss(
            pred, gt, focal, local_scales, anchors_per_scale, tau, seed
        )
        local_terms = local.per_scale
        total += weights["local"] * sum(local_terms.values())

    normal_term = None
    if cfg["normal"] and gt_normals is not None:
        normal_term = normal_loss(pred, gt_normals, normals_valid)
        total += weights["normal"] * normal_term

    mask_term = None
    if cfg["mask"] and pred_mask is not None and inf_mask is not None:
        mask_term = mask_loss(pred_mask, inf_mask)
        total += weights["mask"] * mask_term

    return LossBreakdown(
        global_term=g,
        local_terms=local_terms,
        normal_term=normal_term,
        mask_term=mask_term,
        total=float(total),
    )
