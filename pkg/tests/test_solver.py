import numpy as np
import pytest
from helpers import assert_ulp_close, random_cloud_pair, random_map_pair, random_residuals

import pointalign as pa
from pointalign import (
    DegenerateGeometryError,
    InputError,
    PointMap,
    WeightedResiduals,
    align_least_squares,
    align_median_baseline,
    align_scale_only,
    align_scale_shift_1d,
    align_scale_shift_3d,
    objective_value,
    solve_subproblem_truncated,
    solve_subproblem_untruncated,
)


class TestSubproblemUntruncated:
    def test_identity(self):
        sol = solve_subproblem_untruncated(WeightedResiduals([1, 2, 3], [1, 2, 3], [1, 1, 1]))
        assert sol.scale == 1.0 and sol.objective == 0.0

    def test_exact_scaling(self):
        sol = solve_subproblem_untruncated(WeightedResiduals([1, 2], [2, 4], [1, 1]))
        assert sol.scale == 2.0 and sol.objective == 0.0

    def test_breakpoint_search(self):
        # Brute force over breakpoints {1, 2, 4}: minimum at s = 2, l = 3.
        sol = solve_subproblem_untruncated(WeightedResiduals([1, 1, 1], [1, 2, 4], [1, 1, 1]))
        assert sol.scale == 2.0 and sol.objective == 3.0
        assert sol.breakpoint_index == 1

    def test_scale_is_breakpoint_ratio(self, rng):
        for _ in range(50):
            r = random_residuals(rng)
            sol = solve_subproblem_untruncated(r)
            if sol.degenerate:
                continue
            k = sol.breakpoint_index
            assert sol.scale == r.target[k] / r.pred[k]

    def test_degenerate_all_zero_pred(self):
        sol = solve_subproblem_untruncated(WeightedResiduals([0.0, 0.0], [1.0, -2.0], [1, 1]))
        assert sol.degenerate and sol.scale == 1.0 and sol.breakpoint_index == -1
        assert sol.objective == 3.0

    def test_sign_canonicalization_bitwise(self, rng):
        for _ in range(20):
            r = random_residuals(rng, n=17)
            flipped = WeightedResiduals(-r.pred, -r.target, r.weight)
            a = solve_subproblem_untruncated(r)
            b = solve_subproblem_untruncated(flipped)
            assert a.scale == b.scale and a.objective == b.objective

    def test_rejects_bad_inputs(self):
        with pytest.raises(InputError):
            WeightedResiduals([], [], [])
        with pytest.raises(InputError):
            WeightedResiduals([1.0], [1.0], [0.0])
        with pytest.raises(InputError):
            WeightedResiduals([1.0], [1.0], [-1.0])


class TestSubproblemTruncated:
    def test_huge_tau_matches_untruncated(self):
        r = WeightedResiduals([1, 1, 1], [1, 2, 4], [1, 1, 1])
        trunc = solve_subproblem_truncated(r, 1e6)
        untrunc = solve_subproblem_untruncated(r)
        assert trunc.scale == untrunc.scale
        assert_ulp_close(trunc.objective, untrunc.objective)

    def test_outlier_contributes_tau(self):
        r = WeightedResiduals([1, 1, 1, 1], [1.0, 1.1, 0.9, 100.0], [1, 1, 1, 1])
        sol = solve_subproblem_truncated(r, 1.0)
        assert sol.scale == 1.0
        assert_ulp_close(sol.objective, 1.2)

    def test_single_point_exact_fit(self):
        sol = solve_subproblem_truncated(WeightedResiduals([2.0], [6.0], [0.7]), 1.0)
        assert sol.scale == 3.0 and sol.objective == 0.0

    def test_rejects_bad_tau(self):
        r = WeightedResiduals([1.0], [1.0], [1.0])
        with pytest.raises(InputError):
            solve_subproblem_truncated(r, 0.0)
        with pytest.raises(InputError):
            solve_subproblem_truncated(r, -2.0)

    def test_objective_bounded_by_n_tau(self, rng):
        for _ in range(50):
            r = random_residuals(rng)
            tau = float(rng.uniform(0.1, 2.0))
            sol = solve_subproblem_truncated(r, tau)
            assert sol.objective <= len(r) * tau * (1.0 + 1e-12)

    def test_breakpoint_optimality(self, rng):
        # Returned scale is an exact ratio and no breakpoint beats it.
        for _ in range(100):
            r = random_residuals(rng, integer=bool(rng.integers(2)))
            tau = float(rng.uniform(0.2, 2.0))
            sol = solve_subproblem_truncated(r, tau)
            if sol.degenerate:
                continue
            k = sol.breakpoint_index
            assert sol.scale == r.target[k] / r.pred[k]
            nz = r.pred != 0.0
            for s in r.target[nz] / r.pred[nz]:
                l = objective_value(r.pred, r.target, r.weight, tau, s)
                assert l >= sol.objective or np.isclose(l, sol.objective, rtol=1e-12)

    def test_consistency_with_untruncated_when_tau_dominates(self, rng):
        for _ in range(50):
            r = random_residuals(rng)
            base = solve_subproblem_untruncated(r)
            if base.degenerate:
                continue
            residuals = r.weight * np.abs(base.scale * r.pred - r.target)
            tau = float(residuals.max()) * 1.5 + 1.0
            trunc = solve_subproblem_truncated(r, tau)
            assert trunc.scale == base.scale
            assert_ulp_close(trunc.objective, base.objective)

    def test_scale_equivariance_power_of_two(self, rng):
        for c in (0.5, 2.0, 4.0):
            r = random_residuals(rng, n=31)
            base = solve_subproblem_untruncated(r)
            if base.degenerate:
                continue
            scaled_target = solve_subproblem_untruncated(
                WeightedResiduals(r.pred, c * r.target, r.weight)
            )
            assert scaled_target.scale == c * base.scale
            scaled_pred = solve_subproblem_untruncated(
                WeightedResiduals(c * r.pred, r.target, r.weight)
            )
            assert scaled_pred.scale == base.scale / c
            # Truncated variant holds when weights co-scale with 1/c.
            tau = 1.0
            t_base = solve_subproblem_truncated(r, tau)
            t_scaled = solve_subproblem_truncated(
                WeightedResiduals(r.pred, c * r.target, r.weight / c), tau
            )
            if not t_base.degenerate:
                assert t_scaled.scale == c * t_base.scale

    def test_robustness_to_single_outlier(self):
        # Replacing one inlier with a gross outlier moves the objective by
        # at most tau and keeps the scale on an inlier breakpoint.
        pred = np.ones(8)
        target = np.array([1.0, 1.05, 0.95, 1.02, 0.98, 1.01, 0.99, 1.0])
        w = np.ones(8)
        tau = 1.0
        clean = solve_subproblem_truncated(WeightedResiduals(pred, target, w), tau)
        corrupted = target.copy()
        corrupted[7] = 500.0
        dirty = solve_subproblem_truncated(WeightedResiduals(pred, corrupted, w), tau)
        assert abs(dirty.objective - clean.objective) <= tau + 1e-12
        assert dirty.scale in set(target[:7])


class TestAlignScaleOnly:
    def test_identity(self, rng):
        pred, gt = random_map_pair(rng, scale=1.0, shift_z=0.0, noise=0.0)
        res = align_scale_only(pred, gt)
        assert res.align.scale == 1.0 and res.objective == 0.0

    def test_quarter_scale(self, rng):
        _, gt = random_map_pair(rng, noise=0.0)
        pred = PointMap(gt.points / 4.0)
        res = align_scale_only(pred, gt)
        assert res.align.scale == 4.0 and res.objective == 0.0
        assert np.all(res.align.shift == 0.0)

    def test_matches_exhaustive_breakpoints(self, rng):
        pred, gt = random_map_pair(rng, h=4, w=4, shift_z=0.0, noise=0.1)
        res = align_scale_only(pred, gt, tau=1.0)
        mask = pred.valid & gt.valid
        phat = pred.points[mask].ravel()
        p = gt.points[mask].ravel()
        w = np.repeat(1.0 / gt.points[mask][:, 2], 3)
        oracle = pa.oracle_subproblem(WeightedResiduals(phat, p, w), 1.0)
        assert_ulp_close(res.objective, oracle.objective)

    def test_rejects_empty_and_nonpositive_depth(self):
        pts = np.ones((2, 2, 3))
        with pytest.raises(InputError):
            align_scale_only(PointMap(pts, np.zeros((2, 2), bool)), PointMap(pts))
        bad = pts.copy()
        bad[0, 0, 2] = 0.0
        with pytest.raises(InputError):
            align_scale_only(PointMap(pts), PointMap(bad))


class TestAlignScaleShift1d:
    def test_identity(self, rng):
        pred, gt = random_map_pair(rng, scale=1.0, shift_z=0.0, noise=0.0)
        res = align_scale_shift_1d(pred, gt)
        assert res.align.scale == 1.0
        assert np.all(res.align.shift == 0.0)
        assert res.objective == 0.0

    def test_exact_affine_recovery(self, rng):
        pred, gt = random_map_pair(rng, scale=2.0, shift_z=5.0, noise=0.0)
        res = align_scale_shift_1d(pred, gt)
        assert res.align.scale == pytest.approx(2.0, rel=1e-12)
        assert res.align.shift[2] == pytest.approx(5.0, rel=1e-12)
        assert res.objective <= 1e-12

    def test_outlier_instance_matches_oracle(self, rng):
        pred, gt = random_map_pair(rng, h=3, w=4, noise=0.05, outliers=1)
        res = align_scale_shift_1d(pred, gt, tau=1.0)
        oracle = pa.oracle_align_1d(pred, gt, 1.0)
        assert_ulp_close(res.objective, oracle.objective)

    def test_anchor_coincides(self, rng):
        for _ in range(10):
            pred, gt = random_map_pair(rng, noise=0.1)
            res = align_scale_shift_1d(pred, gt)
            mask = pred.valid & gt.valid
            phat = pred.points[mask]
            p = gt.points[mask]
            k = res.anchor_index
            resid = res.align.scale * phat[k, 2] + res.align.shift[2] - p[k, 2]
            assert abs(resid) <= 8 * np.spacing(abs(p[k, 2]))

    def test_deterministic_across_thread_counts(self, rng):
        import numba

        pred, gt = random_map_pair(rng, h=6, w=6, noise=0.1)
        numba.set_num_threads(1)
        a = align_scale_shift_1d(pred, gt, tau=1.0)
        numba.set_num_threads(4)
        b = align_scale_shift_1d(pred, gt, tau=1.0)
        assert a.align.scale == b.align.scale
        assert a.align.shift[2] == b.align.shift[2]
        assert a.objective == b.objective
        assert a.anchor_index == b.anchor_index


class TestAlignScaleShift3d:
    def test_identity(self, rng):
        pts = rng.uniform(-1, 1, size=(10, 3))
        res = align_scale_shift_3d(pts, pts, np.ones(10))
        assert res.align.scale == 1.0
        assert np.all(res.align.shift == 0.0)

    def test_exact_affine_recovery(self, rng):
        pred = rng.uniform(-1, 1, size=(12, 3))
        gt = 0.5 * pred + np.array([1.0, -2.0, 3.0])
        res = align_scale_shift_3d(pred, gt, np.ones(12))
        assert res.align.scale == pytest.approx(0.5, rel=1e-12)
        np.testing.assert_allclose(res.align.shift, [1.0, -2.0, 3.0], rtol=1e-12)
        assert res.objective <= 1e-12

    def test_bracketed_by_oracles(self, rng):
        pred, gt, w = random_cloud_pair(rng, n=8)
        res = align_scale_shift_3d(pred, gt, w, tau=1.0)
        restricted = pa.oracle_align_3d_restricted(pred, gt, w, 1.0)
        full = pa.oracle_align_3d_full(pred, gt, w, 1.0)
        assert res.objective <= restricted.objective + 8 * np.spacing(restricted.objective)
        assert res.objective >= full.objective - 8 * np.spacing(full.objective)

    def test_anchor_coincides_componentwise(self, rng):
        pred, gt, w = random_cloud_pair(rng, n=10)
        res = align_scale_shift_3d(pred, gt, w, tau=None)
        k = res.anchor_index
        resid = res.align.scale * pred[k] + res.align.shift - gt[k]
        assert np.all(np.abs(resid) <= 8 * np.spacing(np.abs(gt[k]) + 1.0))

    def test_rejects_mismatched_inputs(self, rng):
        pts = rng.uniform(size=(4, 3))
        with pytest.raises(InputError):
            align_scale_shift_3d(pts, pts[:3], np.ones(4))
        with pytest.raises(InputError):
            align_scale_shift_3d(pts, pts, np.zeros(4))
        with pytest.raises(InputError):
            align_scale_shift_3d(np.empty((0, 3)), np.empty((0, 3)), np.empty(0))


class TestAlignAnchored1ch:
    def test_exact_affine_recovery(self, rng):
        z = rng.uniform(1.0, 5.0, size=20)
        zhat = (z - 0.4) / 1.7
        a, b, l, k = pa.align_anchored_1ch(zhat, z, 1.0 / z, tau=None)
        assert a == pytest.approx(1.7, rel=1e-12)
        assert b == pytest.approx(0.4, rel=1e-10)
        assert l <= 1e-12

    def test_matches_exhaustive_enumeration(self, rng):
        for trial in range(30):
            n = int(rng.integers(2, 10))
            z = rng.uniform(1.0, 5.0, size=n)
            zhat = (z - rng.uniform(-1, 1)) / rng.uniform(0.5, 2.0)
            zhat = zhat * (1.0 + rng.normal(0, 0.1, size=n))
            w = 1.0 / z
            tau = 1.0 if trial % 2 else None
            try:
                a, b, l, k = pa.align_anchored_1ch(zhat, z, w, tau)
            except DegenerateGeometryError:
                continue
            # Brute force over every (anchor, breakpoint) pair.
            best = np.inf
            for kk in range(n):
                dz = zhat - zhat[kk]
                dt = z - z[kk]
                for i in range(n):
                    if dz[i] == 0.0:
                        continue
                    s = dt[i] / dz[i]
                    r = w * np.abs(s * dz - dt)
                    if tau is not None:
                        r = np.minimum(r, tau)
                    best = min(best, float(np.sum(r)))
            assert l <= best + 8 * np.spacing(abs(best) + 1.0)
            assert abs(a * zhat[k] + b - z[k]) <= 8 * np.spacing(abs(z[k]) + 1.0)


class TestMedianBaseline:
    def test_single_axis_point_rejected(self):
        pts = np.zeros((1, 1, 3))
        pts[0, 0] = (0.0, 0.0, 5.0)
        pm = PointMap(pts)
        with pytest.raises(DegenerateGeometryError):
            align_median_baseline(pm, pm)

    def test_two_point_cloud(self):
        pts = np.array([[[1.0, 0.0, 1.0], [-1.0, 0.0, 3.0]]])
        pm = PointMap(pts)
        norm_pred, norm_gt = align_median_baseline(pm, pm)
        assert norm_pred.shift[2] == 2.0
        assert norm_pred.scale == 2.0

    def test_identical_maps_identical_normalizers(self, rng):
        pred, gt = random_map_pair(rng, scale=1.0, shift_z=0.0, noise=0.0)
        a, b = align_median_baseline(pred, gt)
        assert a.scale == b.scale and np.all(a.shift == b.shift)


class TestLeastSquares:
    def test_identity(self, rng):
        pred, gt = random_map_pair(rng, scale=1.0, shift_z=0.0, noise=0.0)
        res = align_least_squares(pred, gt)
        assert res.align.scale == pytest.approx(1.0, rel=1e-12)
        assert res.align.shift[2] == pytest.approx(0.0, abs=1e-12)

    def test_exact_affine_1d(self, rng):
        _, gt = random_map_pair(rng, noise=0.0)
        pred = PointMap((gt.points - np.array([0.0, 0.0, -1.0])) / 3.0)
        res = align_least_squares(pred, gt, shift_mode="1d")
        assert res.align.scale == pytest.approx(3.0, rel=1e-12)
        assert res.align.shift[2] == pytest.approx(-1.0, rel=1e-10)

    @pytest.mark.parametrize("mode", ["1d", "3d"])
    def test_gradient_vanishes(self, rng, mode):
        pred, gt = random_map_pair(rng, h=2, w=5, noise=0.2)
        res = align_least_squares(pred, gt, shift_mode=mode)
        mask = pred.valid & gt.valid
        phat, p = pred.points[mask], gt.points[mask]
        w = 1.0 / p[:, 2]

        def obj(s, t):
            r = s * phat + t - p
            return float(np.sum(w * np.sum(r * r, axis=1)))

        s0, t0 = res.align.scale, np.array(res.align.shift)
        h = 1e-6
        grad_s = (obj(s0 + h, t0) - obj(s0 - h, t0)) / (2 * h)
        assert abs(grad_s) < 1e-6
        dims = [2] if mode == "1d" else [0, 1, 2]
        for d in dims:
            dt = np.zeros(3)
            dt[d] = h
            grad_t = (obj(s0, t0 + dt) - obj(s0, t0 - dt)) / (2 * h)
            assert abs(grad_t) < 1e-6

    def test_singular_geometry_rejected(self):
        # All points identical: scale and shift are indistinguishable.
        pts = np.ones((2, 2, 3))
        with pytest.raises(DegenerateGeometryError):
            align_least_squares(PointMap(pts), PointMap(pts), shift_mode="3d")
