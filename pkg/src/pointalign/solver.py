"""Weighted truncated-L1 alignment of point clouds and maps.

The core primitive minimizes sum_i w_i |s xhat_i - x_i| over the scale s,
optionally with each residual truncated at tau. The objective is piecewise
linear, so the optimum sits at a ratio breakpoint x_k/xhat_k; the solvers
sort the breakpoints once and evaluate one-sided derivatives through prefix
sums, giving O(N log N) per subproblem.

Scale-plus-shift alignment reduces to one subproblem per anchor point k by
substituting the shift that makes pair k coincide, then keeping the best
anchor (O(N^2 log N) overall). The anchor sweep runs in compiled code; all
tie-breaking is by smallest index so results are deterministic regardless
of thread count.

Weights for map-level alignment default to 1/z of the ground truth, which
balances supervision across depth ranges.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateGeometryError, InputError
from .maps import (
    POSITIVE_DEPTH_EPS,
    AlignWeights,
    FloatArray,
    PointMap,
    SimilarityAlign,
)

#: Residual truncation used for training-style alignment.
DEFAULT_TAU = 1.0

#: Alignment resolution used by the CLI before solving.
DEFAULT_ALIGN_RESOLUTION = (64, 64)

# The numba threading layer is not reentrant; serialize kernel entry.
_KERNEL_LOCK = threading.Lock()


@dataclass(frozen=True)
class WeightedResiduals:
    """One scale-only subproblem instance: arrays (pred, target, weight)."""

    pred: FloatArray
    target: FloatArray
    weight: FloatArray

    def __init__(self, pred, target, weight):
        pred = np.ascontiguousarray(np.asarray(pred, dtype=np.float64))
        target = np.ascontiguousarray(np.asarray(target, dtype=np.float64))
        weight = np.ascontiguousarray(np.asarray(weight, dtype=np.float64))
        if pred.ndim != 1 or pred.shape != target.shape or pred.shape != weight.shape:
            raise InputError("pred, target and weight must be equal-length 1-D arrays")
        if pred.size < 1:
            raise InputError("subproblem needs at least one residual term")
        if not (np.isfinite(pred).all() and np.isfinite(target).all()):
            raise InputError("pred and target must be finite")
        if not np.isfinite(weight).all() or np.any(weight <= 0.0):
            raise InputError("weights must be finite and strictly positive")
        for name, a in (("pred", pred), ("target", target), ("weight", weight)):
            view = a.view()
            view.setflags(write=False)
            object.__setattr__(self, name, view)

    def __len__(self):
        return self.pred.size


@dataclass(frozen=True)
class SubproblemSolution:
    """Optimal scale and objective of one subproblem.

    `breakpoint_index` is the index achieving scale = target[k]/pred[k]
    (-1 when the instance is degenerate). `extrema_count` reports how many
    breakpoints passed the derivative sign test; it is 0 for the convex
    (untruncated) path. `degenerate` flags an all-zero pred, where the
    objective is constant and scale 1 is returned by convention.
    """

    scale: float
    objective: float
    breakpoint_index: int
    extrema_count: int
    degenerate: bool = False


@dataclass(frozen=True)
class AlignResult:
    """Alignment transform, its objective value, and the anchor index.

    `anchor_index` is the position of the coinciding pair within the
    row-major sequence of points handed to the solver (for map-level
    alignment: the joint-valid pixel sequence). It is -1 for solvers that
    have no anchor (least squares, degenerate scale-only fits).
    """

    align: SimilarityAlign
    objective: float
    anchor_index: int


def check_tau(tau: float | None) -> float | None:
    if tau is None:
        return None
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0.0:
        raise InputError(f"tau must be positive and finite, got {tau}")
    return tau


def objective_value(pred, target, weight, tau: float | None, scale: float) -> float:
    """Evaluate sum_i min(tau, w_i |s pred_i - target_i|) directly."""
    r = np.asarray(weight, dtype=np.float64) * np.abs(
        float(scale) * np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    )
    if tau is not None:
        r = np.minimum(r, tau)
    return float(np.sum(r))


def _canonical_active(r: WeightedResiduals):
    """Sign-normalize so active entries have pred > 0; split out zeros."""
    pred = r.pred.copy()
    target = r.target.copy()
    flip = pred < 0.0
    pred[flip] = -pred[flip]
    target[flip] = -target[flip]
    active = pred != 0.0
    return pred[active], target[active], r.weight[active], np.flatnonzero(active)


def _runs(sorted_vals: FloatArray):
    """Start mask and run ids for duplicate groups of a sorted array."""
    n = sorted_vals.size
    starts = np.empty(n, dtype=bool)
    starts[0] = True
    starts[1:] = sorted_vals[1:] != sorted_vals[:-1]
    run_id = np.cumsum(starts) - 1
    return starts, run_id


def _pick_candidate(r, tau, cand_vals, cand_min_idx):
    """Evaluate candidate scales and apply (objective, smallest index) order."""
    objs = np.array([objective_value(r.pred, r.target, r.weight, tau, s) for s in cand_vals])
    order = np.lexsort((cand_min_idx, objs))
    best = order[0]
    return float(cand_vals[best]), float(objs[best]), int(cand_min_idx[best])


def solve_subproblem_untruncated(r: WeightedResiduals) -> SubproblemSolution:
    """Global minimizer of sum_i w_i |s pred_i - target_i|.

    The optimal scale is the weighted-median breakpoint where the one-sided
    derivatives change sign. Runs in O(N log N).
    """
    ax, at, aw, aidx = _canonical_active(r)
    if ax.size == 0:
        return SubproblemSolution(
            scale=1.0,
            objective=objective_value(r.pred, r.target, r.weight, None, 1.0),
            breakpoint_index=-1,
            extrema_count=0,
            degenerate=True,
        )
    wx = aw * ax
    ratio = at / ax
    order = np.argsort(ratio, kind="stable")
    rsort = ratio[order]
    orig = aidx[order]
    prefix = np.concatenate(([0.0], np.cumsum(wx[order])))
    deriv = 2.0 * prefix - prefix[-1]  # non-decreasing; deriv[0] < 0 < deriv[-1]
    jc = int(np.searchsorted(deriv, 0.0, side="left"))

    starts, run_id = _runs(rsort)
    n_runs = int(run_id[-1]) + 1
    run_min = np.full(n_runs, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(run_min, run_id, orig)
    vals = rsort[starts]

    r1 = int(run_id[jc - 1])
    cand_runs = [r1]
    run_end = int(np.searchsorted(rsort, vals[r1], side="right"))
    # Flat derivative after the run: the next distinct breakpoint ties.
    if run_end < rsort.size and deriv[run_end] == 0.0:
        cand_runs.append(r1 + 1)
    s, l, k = _pick_candidate(r, None, vals[cand_runs], run_min[cand_runs])
    return SubproblemSolution(scale=s, objective=l, breakpoint_index=k, extrema_count=0)


def solve_subproblem_truncated(r: WeightedResiduals, tau: float) -> SubproblemSolution:
    """Global minimizer of sum_i min(tau, w_i |s pred_i - target_i|).

    Despite non-convexity the optimum stays on a ratio breakpoint. Extrema
    are filtered by one-sided derivatives over the three sorted breakpoint
    families (ratios and the two truncation boundaries), then the objective
    is evaluated exactly at each survivor: O(N log N + N n_e).
    """
    tau = check_tau(tau)
    if tau is None:
        raise InputError("truncated solver requires a positive tau")
    ax, at, aw, aidx = _canonical_active(r)
    if ax.size == 0:
        return SubproblemSolution(
            scale=1.0,
            objective=objective_value(r.pred, r.target, r.weight, tau, 1.0),
            breakpoint_index=-1,
            extrema_count=0,
            degenerate=True,
        )
    wx = aw * ax
    ratio = at / ax
    bp_lo = (aw * at - tau) / wx
    bp_hi = (aw * at + tau) / wx

    order_a = np.argsort(ratio, kind="stable")
    rsort = ratio[order_a]
    orig = aidx[order_a]
    prefix_a = np.concatenate(([0.0], np.cumsum(wx[order_a])))
    bsort = np.sort(bp_lo, kind="stable")
    prefix_b = np.concatenate(([0.0], np.cumsum(wx[np.argsort(bp_lo, kind="stable")])))
    csort = np.sort(bp_hi, kind="stable")
    prefix_c = np.concatenate(([0.0], np.cumsum(wx[np.argsort(bp_hi, kind="stable")])))

    starts, run_id = _runs(rsort)
    n_runs = int(run_id[-1]) + 1
    run_min = np.full(n_runs, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(run_min, run_id, orig)
    run_len = np.bincount(run_id)
    vals = rsort[starts]

    lt_a = np.searchsorted(rsort, vals, side="left")
    le_a = np.searchsorted(rsort, vals, side="right")
    dm = 2.0 * prefix_a[lt_a] \
        - prefix_b[np.searchsorted(bsort, vals, side="left")] \
        - prefix_c[np.searchsorted(csort, vals, side="left")]
    dp = 2.0 * prefix_a[le_a] \
        - prefix_b[np.searchsorted(bsort, vals, side="right")] \
        - prefix_c[np.searchsorted(csort, vals, side="right")]
    cand = (dm < 0.0) & (dp >= 0.0)
    n_e = int(run_len[cand].sum())
    if not np.any(cand):
        # Defensive fallback, see _kernels._solve_one.
        cand = np.ones_like(cand)
        n_e = 0
    s, l, k = _pick_candidate(r, tau, vals[cand], run_min[cand])
    return SubproblemSolution(scale=s, objective=l, breakpoint_index=k, extrema_count=n_e)


def solve_subproblem(r: WeightedResiduals, tau: float | None) -> SubproblemSolution:
    """Dispatch on tau: None selects the untruncated solver."""
    if tau is None:
        return solve_subproblem_untruncated(r)
    return solve_subproblem_truncated(r, tau)


# ---------------------------------------------------------------------------
# map-level helpers


def _joint_valid(pred: PointMap, gt: PointMap, weights: AlignWeights):
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise InputError("pred and gt maps must be co-registered (equal shapes)")
    mask = pred.valid & gt.valid
    if not mask.any():
        raise InputError("no joint-valid pixels")
    phat = pred.points[mask]
    p = gt.points[mask]
    w = _point_weights(p, weights)
    return phat, p, w


def _point_weights(gt_points: FloatArray, weights: AlignWeights) -> FloatArray:
    if weights == "uniform":
        return np.ones(gt_points.shape[0])
    if weights != "inv-z":
        raise InputError(f"unknown weights mode {weights!r}")
    z = gt_points[:, 2]
    if np.any(z <= POSITIVE_DEPTH_EPS):
        raise InputError(
            "ground-truth z must exceed the positive-depth epsilon on joint-valid "
            "pixels; filter such pixels out of the validity mask first"
        )
    return 1.0 / z


def _flatten_residuals(phat, p, w) -> WeightedResiduals:
    # Pixel-major flattening, weights repeated per coordinate.
    return WeightedResiduals(phat.ravel(), p.ravel(), np.repeat(w, 3))


def _run_anchored(phat, p, w, tau: float | None, subtract):
    tau_flag = _kernels.NO_TAU if tau is None else float(tau)
    phat = np.ascontiguousarray(phat, dtype=np.float64)
    p = np.ascontiguousarray(p, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    subtract = np.asarray(subtract, dtype=bool)
    static = ~subtract
    n_static = int(static.sum())
    stat_xhat = np.ascontiguousarray(phat[:, static]).ravel()
    stat_x = np.ascontiguousarray(p[:, static]).ravel()
    stat_w = np.repeat(w, n_static) if n_static else np.empty(0)
    dyn_phat = np.ascontiguousarray(phat[:, subtract])
    dyn_p = np.ascontiguousarray(p[:, subtract])
    with _KERNEL_LOCK:
        s_arr, l_arr = _kernels._align_anchored(
            stat_xhat, stat_x, stat_w, dyn_phat, dyn_p, w, tau_flag
        )
    return s_arr, l_arr


def _anchored_objective(phat, p, w, tau, subtract, k, s) -> float:
    # Canonical evaluation of the anchored objective for the chosen anchor.
    shift = np.where(subtract, 1.0, 0.0)
    xhat = (phat - shift * phat[k]).ravel()
    x = (p - shift * p[k]).ravel()
    return objective_value(xhat, x, np.repeat(w, phat.shape[1]), tau, s)


def _positive_scale(s: float) -> float:
    if not np.isfinite(s) or s <= 0.0:
        raise DegenerateGeometryError(
            f"alignment produced a nonpositive scale ({s}); geometry is degenerate"
        )
    return float(s)


# ---------------------------------------------------------------------------
# public aligners


def align_scale_only(
    pred: PointMap,
    gt: PointMap,
    tau: float | None = DEFAULT_TAU,
    weights: AlignWeights = "inv-z",
) -> AlignResult:
    """Best s for s * pred ~ gt with zero shift (single subproblem)."""
    tau = check_tau(tau)
    phat, p, w = _joint_valid(pred, gt, weights)
    sol = solve_subproblem(_flatten_residuals(phat, p, w), tau)
    scale = 1.0 if sol.degenerate else _positive_scale(sol.scale)
    anchor = -1 if sol.breakpoint_index < 0 else sol.breakpoint_index // 3
    return AlignResult(
        align=SimilarityAlign(scale, (0.0, 0.0, 0.0), "1d"),
        objective=sol.objective,
        anchor_index=anchor,
    )


def align_scale_shift_1d(
    pred: PointMap,
    gt: PointMap,
    tau: float | None = DEFAULT_TAU,
    weights: AlignWeights = "inv-z",
) -> AlignResult:
    """Best (s, t_z) for s * pred + (0, 0, t_z) ~ gt.

    Each candidate anchor k pins t_z = z_k - s zhat_k and leaves a 3N-term
    subproblem in s; the best anchor wins, ties to the smallest index.
    """
    tau = check_tau(tau)
    phat, p, w = _joint_valid(pred, gt, weights)
    k, s, l = _anchored_align(phat, p, w, tau, (False, False, True))
    t_z = p[k, 2] - s * phat[k, 2]
    return AlignResult(
        align=SimilarityAlign(s, (0.0, 0.0, t_z), "1d"),
        objective=l,
        anchor_index=k,
    )


def align_scale_shift_3d(
    pred: FloatArray,
    gt: FloatArray,
    weight,
    tau: float | None = DEFAULT_TAU,
) -> AlignResult:
    """Best (s, t) for s * pred + t ~ gt over (N, 3) point arrays.

    Restricts the three per-axis anchors to a single point (the clouds are
    assumed to coincide at one pair under the optimal transform), which is
    exact whenever such a pair exists and approximately optimal otherwise.
    """
    tau = check_tau(tau)
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if pred.ndim != 2 or pred.shape[1] != 3 or pred.shape != gt.shape:
        raise InputError("pred and gt must be (N, 3) arrays of equal length")
    if pred.shape[0] < 1:
        raise InputError("need at least one point")
    if weight.shape != (pred.shape[0],):
        raise InputError("weight must be a length-N array")
    if not np.isfinite(weight).all() or np.any(weight <= 0.0):
        raise InputError("weights must be finite and strictly positive")
    k, s, l = _anchored_align(pred, gt, weight, tau, (True, True, True))
    t = gt[k] - s * pred[k]
    return AlignResult(
        align=SimilarityAlign(s, t, "3d"),
        objective=l,
        anchor_index=k,
    )


# Below this anchor count the final anchor choice re-evaluates every
# candidate with the canonical objective; the compiled sweep's prefix-sum
# values carry enough rounding noise to mis-order near-tied anchors.
_EXACT_RANK_LIMIT = 128


def _anchored_align(phat, p, w, tau, subtract):
    subtract = np.asarray(subtract, dtype=bool)
    s_arr, l_arr = _run_anchored(phat, p, w, tau, subtract)
    phat = np.asarray(phat, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n = l_arr.size
    if n <= _EXACT_RANK_LIMIT:
        best_k = -1
        best_l = np.inf
        for k in range(n):
            l = _anchored_objective(phat, p, w, tau, subtract, k, float(s_arr[k]))
            if l < best_l:
                best_l = l
                best_k = k
        k, l = best_k, best_l
        s = _positive_scale(float(s_arr[k]))
    else:
        k = int(np.argmin(l_arr))  # first occurrence: smallest anchor wins ties
        s = _positive_scale(float(s_arr[k]))
        l = _anchored_objective(phat, p, w, tau, subtract, k, s)
    return k, s, l


def align_anchored_1ch(pred, gt, weight, tau: float | None):
    """Scale-plus-shift alignment of scalar channels (a zhat + b ~ z).

    Returns (scale, shift, objective, anchor_index). Used by the depth
    evaluation protocol.
    """
    tau = check_tau(tau)
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 1)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 1)
    if pred.shape != gt.shape or pred.shape[0] < 1:
        raise InputError("pred and gt must be equal-length nonempty arrays")
    w = np.asarray(weight, dtype=np.float64)
    if not np.isfinite(w).all() or np.any(w <= 0.0):
        raise InputError("weights must be finite and strictly positive")
    k, s, l = _anchored_align(pred, gt, w, tau, (True,))
    b = gt[k, 0] - s * pred[k, 0]
    return s, float(b), l, k


# ---------------------------------------------------------------------------
# baselines


def align_median_baseline(pred: PointMap, gt: PointMap) -> tuple[SimilarityAlign, SimilarityAlign]:
    """Per-map median normalizers (p - shift) / scale over joint-valid pixels.

    shift = (0, 0, median(z)) and scale is the mean L1 distance to the
    shift; the median of an even count is the mean of the middle pair.
    """
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise InputError("pred and gt maps must be co-registered (equal shapes)")
    mask = pred.valid & gt.valid
    if not mask.any():
        raise InputError("no joint-valid pixels")

    def normalizer(points):
        med = float(np.median(points[:, 2]))
        t = np.array([0.0, 0.0, med])
        s = float(np.mean(np.abs(points - t).sum(axis=1)))
        if s == 0.0:
            raise DegenerateGeometryError("median normalizer is degenerate (all points identical)")
        return SimilarityAlign(s, t, "1d")

    return normalizer(pred.points[mask]), normalizer(gt.points[mask])


def align_least_squares(
    pred: PointMap,
    gt: PointMap,
    shift_mode: str = "1d",
    weights: AlignWeights = "inv-z",
) -> AlignResult:
    """Closed-form minimizer of sum_i w_i ||s phat_i + t - p_i||^2.

    Normal equations in (s, t_z) or (s, tx, ty, tz) depending on shift_mode.
    """
    if shift_mode not in ("1d", "3d"):
        raise InputError(f"shift_mode must be '1d' or '3d', got {shift_mode!r}")
    phat, p, w = _joint_valid(pred, gt, weights)
    if phat.shape[0] < 2:
        raise InputError("least-squares alignment needs at least two joint-valid pixels")

    sw = float(np.sum(w))
    if shift_mode == "1d":
        a11 = float(np.sum(w * np.sum(phat * phat, axis=1)))
        a12 = float(np.sum(w * phat[:, 2]))
        b1 = float(np.sum(w * np.sum(phat * p, axis=1)))
        b2 = float(np.sum(w * p[:, 2]))
        mat = np.array([[a11, a12], [a12, sw]])
        rhs = np.array([b1, b2])
    else:
        a11 = float(np.sum(w * np.sum(phat * phat, axis=1)))
        cross = np.sum(w[:, None] * phat, axis=0)
        b1 = float(np.sum(w * np.sum(phat * p, axis=1)))
        rhs = np.concatenate(([b1], np.sum(w[:, None] * p, axis=0)))
        mat = np.zeros((4, 4))
        mat[0, 0] = a11
        mat[0, 1:] = cross
        mat[1:, 0] = cross
        mat[1, 1] = mat[2, 2] = mat[3, 3] = sw

    try:
        sol = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateGeometryError("singular normal equations (degenerate geometry)") from exc
    if not np.isfinite(sol).all():
        raise DegenerateGeometryError("singular normal equations (degenerate geometry)")
    s = _positive_scale(float(sol[0]))
    t = np.array([0.0, 0.0, sol[1]]) if shift_mode == "1d" else sol[1:].copy()
    resid = s * phat + t - p
    objective = float(np.sum(w * np.sum(resid * resid, axis=1)))
    return AlignResult(
        align=SimilarityAlign(s, t, shift_mode),
        objective=objective,
        anchor_index=-1,
    )
