"""Flat, array-in / scalars-out wrappers around the pointalign solvers.

For training loops and other array-based scientific code: every function
takes plain numpy buffers (float32 or float64; row-major), validates
shapes and dtypes at the boundary, and returns plain tuples of Python
scalars plus small arrays. Results are numerically identical to the
primary library — bitwise on the float64 path, where contiguous input
crosses the boundary without copies.

Only leaf solver and loss functions are bound; file I/O stays with the
primary package. The heavy alignment sweeps run in compiled kernels that
drop the interpreter lock, so calls from multiple threads overlap.
"""

from collections import namedtuple

import numpy as np

import pointalign as _pa

from ._boundary import as_grid, as_mask, as_points, as_vector

__version__ = "0.1.0"

SubproblemResult = namedtuple(
    "SubproblemResult", ["scale", "objective", "index", "extrema", "degenerate"]
)
AlignmentResult = namedtuple(
    "AlignmentResult", ["scale", "shift", "objective", "anchor_index"]
)
CameraResult = namedtuple(
    "CameraResult", ["focal", "shift_z", "iterations", "final_residual"]
)


def _subproblem_result(sol):
    return SubproblemResult(
        scale=sol.scale,
        objective=sol.objective,
        index=sol.breakpoint_index,
        extrema=sol.extrema_count,
        degenerate=sol.degenerate,
    )


def _alignment_result(res):
    return AlignmentResult(
        scale=res.align.scale,
        shift=np.array(res.align.shift),
        objective=res.objective,
        anchor_index=res.anchor_index,
    )


def subproblem_untruncated(pred, target, weight) -> SubproblemResult:
    """Minimize sum w_i |s pred_i - target_i| over the scale s."""
    pred = as_vector("pred", pred)
    target = as_vector("target", target, pred.shape[0])
    weight = as_vector("weight", weight, pred.shape[0])
    return _subproblem_result(
        _pa.solve_subproblem_untruncated(_pa.WeightedResiduals(pred, target, weight))
    )


def subproblem_truncated(pred, target, weight, tau: float) -> SubproblemResult:
    """Minimize sum min(tau, w_i |s pred_i - target_i|) over the scale s."""
    pred = as_vector("pred", pred)
    target = as_vector("target", target, pred.shape[0])
    weight = as_vector("weight", weight, pred.shape[0])
    return _subproblem_result(
        _pa.solve_subproblem_truncated(
            _pa.WeightedResiduals(pred, target, weight), float(tau)
        )
    )


def align_scale_shift_1d(
    pred_points,
    gt_points,
    pred_mask=None,
    gt_mask=None,
    tau: float | None = _pa.DEFAULT_TAU,
) -> AlignmentResult:
    """Best (s, t_z) with s * pred + (0, 0, t_z) ~ gt over (H, W, 3) grids.

    Masks are (H, W) boolean buffers; weights are 1/z of the ground truth.
    """
    pred_points = as_grid("pred_points", pred_points)
    gt_points = as_grid("gt_points", gt_points)
    pred = _pa.PointMap(pred_points, as_mask("pred_mask", pred_mask, pred_points.shape[:2]))
    gt = _pa.PointMap(gt_points, as_mask("gt_mask", gt_mask, gt_points.shape[:2]))
    return _alignment_result(_pa.align_scale_shift_1d(pred, gt, tau))


def align_scale_shift_3d(pred, gt, weight, tau: float | None = _pa.DEFAULT_TAU) -> AlignmentResult:
    """Best (s, t) with s * pred + t ~ gt over (N, 3) point lists."""
    pred = as_points("pred", pred)
    gt = as_points("gt", gt)
    weight = as_vector("weight", weight, pred.shape[0])
    return _alignment_result(_pa.align_scale_shift_3d(pred, gt, weight, tau))


def recover_focal_shift(points, mask=None, max_iterations: int = 100) -> CameraResult:
    """Focal length and z-shift of an (H, W, 3) affine point map.

    The pixel grid uses centered coordinates derived from the buffer shape;
    the focal comes back in those pixel units.
    """
    points = as_grid("points", points)
    pm = _pa.PointMap(points, as_mask("mask", mask, points.shape[:2]))
    sol = _pa.recover_focal_shift(
        pm, _pa.ImageGrid(pm.height, pm.width), max_iterations=max_iterations
    )
    return CameraResult(
        focal=sol.focal,
        shift_z=sol.shift_z,
        iterations=sol.iterations,
        final_residual=sol.final_residual,
    )


def global_loss(
    pred_points,
    gt_points,
    pred_mask=None,
    gt_mask=None,
    tau: float | None = _pa.DEFAULT_TAU,
    trim_fraction: float = 0.05,
) -> float:
    """Globally aligned, trimmed weighted-L1 point loss."""
    pred_points = as_grid("pred_points", pred_points)
    gt_points = as_grid("gt_points", gt_points)
    pred = _pa.PointMap(pred_points, as_mask("pred_mask", pred_mask, pred_points.shape[:2]))
    gt = _pa.PointMap(gt_points, as_mask("gt_mask", gt_mask, gt_points.shape[:2]))
    return _pa.global_loss(pred, gt, tau, trim_fraction)


def multiscale_local_loss(
    pred_points,
    gt_points,
    focal: float,
    pred_mask=None,
    gt_mask=None,
    scales=(0.25, 0.0625, 0.015625),
    anchors_per_scale: int = 4,
    tau: float | None = _pa.DEFAULT_TAU,
    seed: int = 0,
) -> dict:
    """Per-scale local sphere losses under independent alignments."""
    pred_points = as_grid("pred_points", pred_points)
    gt_points = as_grid("gt_points", gt_points)
    pred = _pa.PointMap(pred_points, as_mask("pred_mask", pred_mask, pred_points.shape[:2]))
    gt = _pa.PointMap(gt_points, as_mask("gt_mask", gt_mask, gt_points.shape[:2]))
    result = _pa.multiscale_local_loss(
        pred, gt, float(focal), tuple(scales), anchors_per_scale, tau, seed
    )
    return dict(result.per_scale)
