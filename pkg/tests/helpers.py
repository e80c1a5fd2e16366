"""Instance generators and numeric comparison helpers."""

import numpy as np

from pointalign import PointMap, WeightedResiduals


def ulp_distance(a: float, b: float) -> float:
    """Distance in units of the larger argument's spacing."""
    if a == b:
        return 0.0
    return abs(a - b) / np.spacing(max(abs(a), abs(b)))


def assert_ulp_close(a, b, n=8, context=""):
    d = ulp_distance(float(a), float(b))
    assert d <= n, f"{a!r} vs {b!r} differ by {d:.1f} ulp (> {n}) {context}"


def random_residuals(rng, n=None, integer=False) -> WeightedResiduals:
    """Random subproblem instances, with zeros and negative preds included.

    Integer-valued instances exercise duplicate breakpoints and exact ties;
    continuous ones have unique minimizers almost surely.
    """
    if n is None:
        n = int(rng.integers(1, 65))
    if integer:
        pred = rng.integers(-3, 4, size=n).astype(float)
        target = rng.integers(-4, 5, size=n).astype(float)
        weight = rng.integers(1, 4, size=n).astype(float)
    else:
        pred = rng.normal(0.0, 2.0, size=n)
        pred[rng.random(n) < 0.1] = 0.0
        target = rng.normal(0.0, 2.0, size=n)
        weight = rng.uniform(0.1, 3.0, size=n)
    return WeightedResiduals(pred, target, weight)


def random_map_pair(rng, h=4, w=4, scale=None, shift_z=None, noise=0.05, outliers=0):
    """Ground truth with positive depth plus a noisy inverse-affine pred.

    gt ~ s * pred + (0, 0, t_z) up to per-point noise; returns (pred, gt).
    """
    pts = np.empty((h, w, 3))
    pts[:, :, 0] = rng.uniform(-2.0, 2.0, size=(h, w))
    pts[:, :, 1] = rng.uniform(-2.0, 2.0, size=(h, w))
    pts[:, :, 2] = rng.uniform(1.0, 5.0, size=(h, w))
    gt = PointMap(pts)
    s = float(rng.uniform(0.5, 2.0)) if scale is None else scale
    t = float(rng.uniform(-1.0, 1.0)) if shift_z is None else shift_z
    pred_pts = (pts - np.array([0.0, 0.0, t])) / s
    if noise:
        pred_pts = pred_pts + rng.normal(0.0, noise, size=pred_pts.shape)
    if outliers:
        flat = pred_pts.reshape(-1, 3)
        idx = rng.choice(flat.shape[0], size=outliers, replace=False)
        flat[idx, 2] *= 100.0
    return PointMap(pred_pts), gt


def random_cloud_pair(rng, n=8, noise=0.02):
    """Near-affine (pred, gt, weight) clouds for the 3-D-shift solver."""
    pred = rng.uniform(-2.0, 2.0, size=(n, 3))
    s = float(rng.uniform(0.5, 2.0))
    t = rng.uniform(-1.0, 1.0, size=3)
    gt = s * pred + t + rng.normal(0.0, noise, size=(n, 3))
    weight = rng.uniform(0.5, 2.0, size=n)
    return pred, gt, weight
