"""Brute-force reference solvers certifying the fast alignment paths.

Everything here trades complexity for transparency: objectives are
evaluated directly at every breakpoint (or every anchor/breakpoint pair)
with no sorting, prefix sums, or derivative tests, so these routines share
no search machinery with solver.py. Sizes are capped accordingly.

Ties resolve to the smallest scale (and smallest anchor for the aligners).
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .maps import AlignWeights, PointMap, SimilarityAlign
from .solver import AlignResult, SubproblemSolution, WeightedResiduals, _joint_valid, check_tau

_MAX_SUBPROBLEM = 4096
_MAX_ALIGN = 64
_MAX_FULL = 10


def _objective(pred, target, weight, tau, scale):
    # Direct per-term evaluation; intentionally local to this module.
    r = weight * np.abs(scale * pred - target)
    if tau is not None:
        r = np.minimum(r, tau)
    return float(np.sum(r))


def oracle_subproblem(r: WeightedResiduals, tau: float | None) -> SubproblemSolution:
    """Evaluate the objective at every breakpoint target_i/pred_i.

    O(N^2) total; ties go to the smallest scale, then smallest index.
    """
    tau = check_tau(tau)
    if len(r) > _MAX_SUBPROBLEM:
        raise InputError(f"oracle_subproblem is capped at N={_MAX_SUBPROBLEM}")
    nz = r.pred != 0.0
    if not nz.any():
        return SubproblemSolution(
            scale=1.0,
            objective=_objective(r.pred, r.target, r.weight, tau, 1.0),
            breakpoint_index=-1,
            extrema_count=0,
            degenerate=True,
        )
    idx = np.flatnonzero(nz)
    scales = r.target[idx] / r.pred[idx]
    best_s = None
    best_l = np.inf
    best_k = -1
    for k, s in zip(idx, scales):
        l = _objective(r.pred, r.target, r.weight, tau, s)
        if l < best_l or (l == best_l and (s < best_s or (s == best_s and k < best_k))):
            best_s, best_l, best_k = s, l, int(k)
    return SubproblemSolution(
        scale=float(best_s), objective=best_l, breakpoint_index=best_k, extrema_count=0
    )


def _anchored_scan(xhat, x, w, tau):
    """Best (scale, objective) over every breakpoint of one anchored instance."""
    nz = xhat != 0.0
    if not nz.any():
        return 1.0, _objective(xhat, x, w, tau, 1.0)
    scales = x[nz] / xhat[nz]
    best_s = None
    best_l = np.inf
    for s in scales:
        l = _objective(xhat, x, w, tau, s)
        if l < best_l or (l == best_l and s < best_s):
            best_s, best_l = s, l
    return float(best_s), best_l


def oracle_align_1d(
    pred: PointMap,
    gt: PointMap,
    tau: float | None,
    weights: AlignWeights = "inv-z",
) -> AlignResult:
    """Exhaust all (anchor, breakpoint) pairs of the 1-D-shift alignment."""
    tau = check_tau(tau)
    phat, p, w = _joint_valid(pred, gt, weights)
    n = phat.shape[0]
    if n > _MAX_ALIGN:
        raise InputError(f"oracle_align_1d is capped at N={_MAX_ALIGN}")
    w3 = np.repeat(w, 3)
    best = None
    for k in range(n):
        xhat = (phat - np.array([0.0, 0.0, phat[k, 2]])).ravel()
        x = (p - np.array([0.0, 0.0, p[k, 2]])).ravel()
        s, l = _anchored_scan(xhat, x, w3, tau)
        if best is None or l < best[0]:
            best = (l, k, s)
    l, k, s = best
    t_z = p[k, 2] - s * phat[k, 2]
    return AlignResult(
        align=SimilarityAlign(s, (0.0, 0.0, t_z), "1d"), objective=l, anchor_index=k
    )


def oracle_align_3d_restricted(pred, gt, weight, tau: float | None) -> AlignResult:
    """Exact optimum under the shared-anchor restriction k1 = k2 = k3.

    This is precisely the search space the fast 3-D aligner approximates,
    so the fast solver must match it.
    """
    tau = check_tau(tau)
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    n = pred.shape[0]
    if n > _MAX_ALIGN:
        raise InputError(f"oracle_align_3d_restricted is capped at N={_MAX_ALIGN}")
    w3 = np.repeat(weight, 3)
    best = None
    for k in range(n):
        xhat = (pred - pred[k]).ravel()
        x = (gt - gt[k]).ravel()
        s, l = _anchored_scan(xhat, x, w3, tau)
        if best is None or l < best[0]:
            best = (l, k, s)
    l, k, s = best
    t = gt[k] - s * pred[k]
    return AlignResult(align=SimilarityAlign(s, t, "3d"), objective=l, anchor_index=k)


def oracle_align_3d_full(pred, gt, weight, tau: float | None) -> AlignResult:
    """Unrestricted optimum over independent per-axis anchors (k1, k2, k3).

    O(N^4 log N)-class enumeration; capped at N=10. Used only to bound the
    approximation gap of the restricted search.
    """
    tau = check_tau(tau)
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    n = pred.shape[0]
    if n > _MAX_FULL:
        raise InputError(f"oracle_align_3d_full is capped at N={_MAX_FULL}")
    w3 = np.repeat(weight, 3)
    best = None
    for k1 in range(n):
        for k2 in range(n):
            for k3 in range(n):
                anchor_hat = np.array([pred[k1, 0], pred[k2, 1], pred[k3, 2]])
                anchor_gt = np.array([gt[k1, 0], gt[k2, 1], gt[k3, 2]])
                xhat = (pred - anchor_hat).ravel()
                x = (gt - anchor_gt).ravel()
                s, l = _anchored_scan(xhat, x, w3, tau)
                if best is None or l < best[0]:
                    best = (l, s, anchor_hat, anchor_gt, k3)
    l, s, anchor_hat, anchor_gt, k3 = best
    t = anchor_gt - s * anchor_hat
    return AlignResult(align=SimilarityAlign(s, t, "3d"), objective=l, anchor_index=k3)
