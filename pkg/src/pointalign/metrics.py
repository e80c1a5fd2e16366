"""Zero-shot evaluation protocol: alignment followed by Rel / delta1.

Every representation first aligns the prediction to the ground truth with
the matching solver (no truncation: the evaluation objectives carry no
tau), then measures relative errors and inlier percentages. Predictions
and ground truth only meet on pixels where both are valid (intersection
semantics). Batch runs evaluate per image and macro-average the reports.

Aligned points are formed anchored, as s * (phat - phat_k) - (p - p_k) + p,
which makes the protocol exactly invariant under affine maps of the
prediction that are representable without rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateGeometryError, InputError
from .maps import POSITIVE_DEPTH_EPS, DepthMap, DisparityMap, PointMap
from .solver import (
    WeightedResiduals,
    align_anchored_1ch,
    align_scale_shift_3d,
    solve_subproblem_untruncated,
)

POINT_INLIER_THRESHOLD = 0.25
DEPTH_INLIER_THRESHOLD = 1.25

REPRESENTATIONS = (
    "point-scale",
    "point-affine",
    "point-local",
    "depth-scale",
    "depth-affine",
    "disparity-affine",
)


@dataclass(frozen=True)
class MetricReport:
    """Relative error and inlier percentage for one representation."""

    rel: float
    delta1: float
    representation: str
    n_pixels: int
    n_excluded: int = 0
    n_regions_skipped: int = 0


@dataclass(frozen=True)
class FovErrorReport:
    mean: float
    median: float
    n_images: int


def _point_mask(pred: PointMap, gt: PointMap):
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise InputError("pred and gt maps must be co-registered (equal shapes)")
    mask = pred.valid & gt.valid & (gt.z > POSITIVE_DEPTH_EPS)
    if not mask.any():
        raise InputError("no joint-valid pixels with positive depth")
    return mask


def point_inlier_percentage(aligned, gt_pts, threshold: float = POINT_INLIER_THRESHOLD) -> float:
    """Percentage with ||err||/min(||p||, ||phat||) strictly below threshold."""
    aligned = np.asarray(aligned, dtype=np.float64)
    gt_pts = np.asarray(gt_pts, dtype=np.float64)
    err = np.linalg.norm(aligned - gt_pts, axis=1)
    denom = np.minimum(np.linalg.norm(gt_pts, axis=1), np.linalg.norm(aligned, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denom > 0.0, err / denom, np.inf)
    return float(np.mean(ratio < threshold)) * 100.0


def _point_metrics(aligned, gt_pts, representation, n_regions_skipped=0):
    gt_norm = np.linalg.norm(gt_pts, axis=1)
    include = gt_norm > 0.0
    n_excluded = int(np.sum(~include))
    if not include.any():
        raise InputError("all ground-truth points have zero norm")
    aligned = aligned[include]
    gt_pts = gt_pts[include]
    gt_norm = gt_norm[include]
    err = np.linalg.norm(aligned - gt_pts, axis=1)
    rel = float(np.mean(err / gt_norm)) * 100.0
    delta1 = point_inlier_percentage(aligned, gt_pts)
    return MetricReport(
        rel=rel,
        delta1=delta1,
        representation=representation,
        n_pixels=int(gt_norm.size),
        n_excluded=n_excluded,
        n_regions_skipped=n_regions_skipped,
    )


def eval_point_scale(pred: PointMap, gt: PointMap) -> MetricReport:
    """Scale-only alignment, then Rel^p and delta1^p."""
    mask = _point_mask(pred, gt)
    phat = pred.points[mask]
    p = gt.points[mask]
    w = 1.0 / p[:, 2]
    sol = solve_subproblem_untruncated(
        WeightedResiduals(phat.ravel(), p.ravel(), np.repeat(w, 3))
    )
    aligned = sol.scale * phat
    return _point_metrics(aligned, p, "point-scale")


def _affine_aligned(phat, p, w):
    res = align_scale_shift_3d(phat, p, w, tau=None)
    k = res.anchor_index
    s = res.align.scale
    # Anchored form: equals s*phat + t but cancels any exactly-representable
    # affine map of the prediction bit for bit.
    return s * (phat - phat[k]) - (p - p[k]) + p


def eval_point_affine(pred: PointMap, gt: PointMap) -> MetricReport:
    """3-D-shift affine alignment, then Rel^p and delta1^p."""
    mask = _point_mask(pred, gt)
    phat = pred.points[mask]
    p = gt.points[mask]
    aligned = _affine_aligned(phat, p, 1.0 / p[:, 2])
    return _point_metrics(aligned, p, "point-affine")


def eval_point_local(pred: PointMap, gt: PointMap, regions) -> MetricReport:
    """Independent affine alignment per region, pooled point metrics.

    `regions` is a list of flat pixel-index arrays (row-major). Regions
    without any joint-valid pixel are skipped and counted.
    """
    mask = _point_mask(pred, gt)
    flat_mask = mask.ravel()
    pts_pred = pred.points.reshape(-1, 3)
    pts_gt = gt.points.reshape(-1, 3)
    aligned_parts = []
    gt_parts = []
    skipped = 0
    for region in regions:
        idx = np.asarray(region, dtype=np.int64)
        idx = idx[flat_mask[idx]]
        if idx.size < 1:
            skipped += 1
            continue
        phat = pts_pred[idx]
        p = pts_gt[idx]
        aligned_parts.append(_affine_aligned(phat, p, 1.0 / p[:, 2]))
        gt_parts.append(p)
    if not aligned_parts:
        raise InputError("no region contains a joint-valid pixel")
    return _point_metrics(
        np.concatenate(aligned_parts),
        np.concatenate(gt_parts),
        "point-local",
        n_regions_skipped=skipped,
    )


def _depth_metrics(aligned, z, representation):
    rel = float(np.mean(np.abs(z - aligned) / z)) * 100.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(z / aligned, aligned / z)
    # Nonpositive aligned depths can never be inliers.
    inlier = (aligned > 0.0) & (ratio < DEPTH_INLIER_THRESHOLD)
    delta1 = float(np.mean(inlier)) * 100.0
    return MetricReport(
        rel=rel, delta1=delta1, representation=representation, n_pixels=int(z.size)
    )


def eval_depth(pred: DepthMap, gt: DepthMap, mode: str) -> MetricReport:
    """Depth metrics after 1-D alignment (scale, or scale plus shift)."""
    if mode not in ("scale", "affine"):
        raise InputError(f"mode must be 'scale' or 'affine', got {mode!r}")
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise InputError("pred and gt maps must be co-registered (equal shapes)")
    mask = pred.valid & gt.valid & (gt.z > POSITIVE_DEPTH_EPS)
    if not mask.any():
        raise InputError("no joint-valid pixels with positive depth")
    zhat = pred.z[mask]
    z = gt.z[mask]
    w = 1.0 / z
    if mode == "scale":
        sol = solve_subproblem_untruncated(WeightedResiduals(zhat, z, w))
        aligned = sol.scale * zhat
    else:
        a, _, _, k = align_anchored_1ch(zhat, z, w, tau=None)
        aligned = a * (zhat - zhat[k]) - (z - z[k]) + z
    return _depth_metrics(aligned, z, f"depth-{mode}")


def align_disparity_affine(dhat, d, z_max: float):
    """Closed-form (a, b) for a*dhat + b ~ d plus clamped aligned depths.

    Aligned disparities are floored at 1/z_max before inverting; the
    resulting depths never exceed z_max. Returns (a, b, aligned_z).
    """
    dhat = np.asarray(dhat, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    n = dhat.size
    # 2x2 normal equations solved by Cramer's rule.
    s_hh = float(np.sum(dhat * dhat))
    s_h = float(np.sum(dhat))
    s_hd = float(np.sum(dhat * d))
    s_d = float(np.sum(d))
    det = n * s_hh - s_h * s_h
    if abs(det) <= 1e-12 * max(n * s_hh, s_h * s_h, 1e-300):
        raise DegenerateGeometryError(
            "singular disparity normal equations (constant predicted disparity)"
        )
    a = (n * s_hd - s_h * s_d) / det
    b = (s_hh * s_d - s_h * s_hd) / det

    floor = 1.0 / z_max
    aligned_d = np.maximum(a * dhat + b, floor)
    # The reciprocal of 1/z_max can round above z_max; enforce the clamp
    # bound exactly.
    aligned_z = np.minimum(1.0 / aligned_d, z_max)
    return a, b, aligned_z


def eval_disparity_affine(
    pred: DisparityMap, gt: DepthMap, z_max: float | None = None
) -> MetricReport:
    """Least-squares disparity alignment with far-range clamping.

    Solves (a, b) minimizing sum (a dhat + b - 1/z)^2 in closed form, clamps
    aligned disparities at 1/z_max before inverting, and reports the depth
    metrics of the result.
    """
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise InputError("pred and gt maps must be co-registered (equal shapes)")
    mask = pred.valid & gt.valid & (gt.z > POSITIVE_DEPTH_EPS)
    if int(mask.sum()) < 2:
        raise InputError("disparity alignment needs at least 2 joint-valid pixels")
    z = gt.z[mask]
    z_max = float(np.max(z)) if z_max is None else float(z_max)
    if z_max <= 0.0:
        raise InputError("z_max must be positive")
    _, _, aligned_z = align_disparity_affine(pred.d[mask], 1.0 / z, z_max)
    return _depth_metrics(aligned_z, z, "disparity-affine")


def eval_fov(pred_fov, gt_fov) -> FovErrorReport:
    """Mean and median absolute FOV error in degrees."""
    pred_fov = np.asarray(pred_fov, dtype=np.float64)
    gt_fov = np.asarray(gt_fov, dtype=np.float64)
    if pred_fov.shape != gt_fov.shape or pred_fov.ndim != 1:
        raise InputError("pred and gt FOV lists must be equal-length 1-D sequences")
    if pred_fov.size < 1:
        raise InputError("need at least one FOV pair")
    err = np.abs(pred_fov - gt_fov)
    return FovErrorReport(
        mean=float(np.mean(err)), median=float(np.median(err)), n_images=int(err.size)
    )


def macro_average(reports) -> MetricReport:
    """Unweighted average of per-image reports (one representation)."""
    reports = list(reports)
    if not reports:
        raise InputError("cannot average an empty report list")
    rep = reports[0].representation
    if any(r.representation != rep for r in reports):
        raise InputError("cannot average reports of different representations")
    return replace(
        reports[0],
        rel=float(np.mean([r.rel for r in reports])),
        delta1=float(np.mean([r.delta1 for r in reports])),
        n_pixels=int(sum(r.n_pixels for r in reports)),
        n_excluded=int(sum(r.n_excluded for r in reports)),
        n_regions_skipped=int(sum(r.n_regions_skipped for r in reports)),
    )
