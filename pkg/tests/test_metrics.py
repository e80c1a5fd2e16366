import numpy as np
import pytest
from helpers import random_map_pair

import pointalign as pa
from pointalign import (
    DegenerateGeometryError,
    DepthMap,
    DisparityMap,
    InputError,
    PointMap,
    eval_depth,
    eval_disparity_affine,
    eval_fov,
    eval_point_affine,
    eval_point_local,
    eval_point_scale,
    macro_average,
    make_scene,
)
from pointalign.metrics import point_inlier_percentage


def dyadic_map_pair(rng, h=4, w=4):
    """Point maps on a 2^-16 grid: affine maps with dyadic (a, b) are exact."""
    pts = rng.uniform(-4.0, 4.0, size=(h, w, 3))
    pts = np.round(pts * 65536.0) / 65536.0
    pts[:, :, 2] = np.abs(pts[:, :, 2]) + 1.0
    gt = PointMap(pts)
    noise = np.round(rng.normal(0, 0.05, size=(h, w, 3)) * 65536.0) / 65536.0
    pred = PointMap(pts * 0.5 + noise)
    return pred, gt


class TestPointScale:
    def test_exact_scale_model(self, rng):
        _, gt = random_map_pair(rng, noise=0.0)
        pred = PointMap(7.0 * gt.points)
        report = eval_point_scale(pred, gt)
        assert report.rel == pytest.approx(0.0, abs=1e-10)
        assert report.delta1 == 100.0
        assert report.representation == "point-scale"

    def test_two_point_hand_instance(self):
        pts = np.zeros((1, 2, 3))
        pts[0, 0] = (1.0, 0.0, 2.0)
        pts[0, 1] = (0.0, 1.0, 4.0)
        gt = PointMap(pts)
        pred = PointMap(pts / 3.0)
        report = eval_point_scale(pred, gt)
        # Direct enumeration: both breakpoint ratios equal 3, exact fit.
        assert report.rel == 0.0 and report.delta1 == 100.0

    def test_rotated_prediction_vs_direct_enumeration(self):
        # A prediction rotated away from the truth cannot be absorbed by a
        # scale; metrics are computed on the scale-aligned points, and the
        # best scale comes from enumerating all six residual breakpoints.
        pts = np.zeros((1, 2, 3))
        pts[0, 0] = (1.0, 0.0, 2.0)
        pts[0, 1] = (0.0, 1.0, 4.0)
        gt = PointMap(pts)
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])  # 90 deg about z
        pred_pts = pts @ rot.T
        pred = PointMap(pred_pts)
        report = eval_point_scale(pred, gt)

        phat = pred_pts.reshape(-1, 3)
        p = pts.reshape(-1, 3)
        w = np.repeat(1.0 / p[:, 2], 3)
        ratios = [p.ravel()[i] / phat.ravel()[i] for i in range(6) if phat.ravel()[i] != 0.0]
        best_s = min(
            ratios, key=lambda s: float(np.sum(w * np.abs(s * phat.ravel() - p.ravel())))
        )
        aligned = best_s * phat
        rel = float(np.mean(np.linalg.norm(aligned - p, axis=1) / np.linalg.norm(p, axis=1))) * 100
        assert report.rel == pytest.approx(rel, rel=1e-12)
        assert report.rel > 0.0

    def test_boundary_is_not_inlier(self):
        # Aligned point at exactly 0.25 relative distance: strict <.
        aligned = np.array([[1.25, 0.0, 0.0]])
        gt = np.array([[1.0, 0.0, 0.0]])
        assert point_inlier_percentage(aligned, gt, 0.25) == 0.0
        assert point_inlier_percentage(aligned, gt, 0.2500001) == 100.0

    def test_delta_monotone_in_threshold(self, rng):
        pred, gt = random_map_pair(rng, h=6, w=6, noise=0.3)
        res = eval_point_affine(pred, gt)
        mask = pred.valid & gt.valid
        phat, p = pred.points[mask], gt.points[mask]
        align = pa.align_scale_shift_3d(phat, p, 1.0 / p[:, 2], None)
        aligned = align.align.apply(phat)
        rates = [point_inlier_percentage(aligned, p, t) for t in (0.1, 0.25, 0.5)]
        assert rates[0] <= rates[1] <= rates[2]
        del res


class TestPointAffine:
    def test_exact_affine_model(self, rng):
        _, gt = random_map_pair(rng, noise=0.0)
        pred = PointMap(2.0 * gt.points + np.array([1.0, 1.0, 1.0]))
        report = eval_point_affine(pred, gt)
        assert report.rel == pytest.approx(0.0, abs=1e-10)
        assert report.delta1 == 100.0

    def test_identity(self, rng):
        _, gt = random_map_pair(rng, noise=0.0)
        report = eval_point_affine(gt, gt)
        assert report.rel == 0.0 and report.delta1 == 100.0

    def test_small_instance_matches_oracle(self, rng):
        pts = rng.uniform(0.5, 3.0, size=(1, 6, 3))
        gt = PointMap(pts)
        pred = PointMap(pts * 0.8 + rng.normal(0, 0.05, pts.shape))
        report = eval_point_affine(pred, gt)
        phat = pred.points.reshape(-1, 3)
        p = gt.points.reshape(-1, 3)
        oracle = pa.oracle_align_3d_restricted(phat, p, 1.0 / p[:, 2], None)
        aligned = oracle.align.apply(phat)
        rel = float(np.mean(np.linalg.norm(aligned - p, axis=1) / np.linalg.norm(p, axis=1))) * 100
        assert report.rel == pytest.approx(rel, rel=1e-9)

    def test_bitwise_invariance_under_exact_affine(self, rng):
        pred, gt = dyadic_map_pair(rng)
        base = eval_point_affine(pred, gt)
        for a, b in [(2.0, (0.5, -1.0, 2.0)), (0.5, (0.0, 0.0, 0.0)), (4.0, (-2.0, 0.25, 1.0))]:
            moved = PointMap(a * pred.points + np.asarray(b), pred.valid)
            report = eval_point_affine(moved, gt)
            assert report.rel == base.rel
            assert report.delta1 == base.delta1


class TestPointLocal:
    def test_per_region_affine_is_exact(self):
        scene = make_scene("two-cluster", {"focal": 400.0})
        gt = scene.pointmap
        pred_pts = gt.points.copy().reshape(-1, 3)
        a, b = scene.regions
        pred_pts[a] = pred_pts[a] / 2.0 + np.array([0.1, 0.0, 0.5])
        pred_pts[b] = pred_pts[b] * 3.0 - np.array([0.0, 0.2, 1.0])
        pred = PointMap(pred_pts.reshape(gt.points.shape), gt.valid)
        report = eval_point_local(pred, gt, scene.regions)
        assert report.rel == pytest.approx(0.0, abs=1e-9)
        assert report.delta1 == 100.0

    def test_single_region_equals_affine(self, rng):
        pred, gt = random_map_pair(rng, h=4, w=4, noise=0.1)
        whole = [np.arange(16)]
        local = eval_point_local(pred, gt, whole)
        affine = eval_point_affine(pred, gt)
        assert local.rel == pytest.approx(affine.rel, rel=1e-12)
        assert local.delta1 == affine.delta1

    def test_two_region_toy_vs_per_region_oracle(self, rng):
        pred, gt = random_map_pair(rng, h=2, w=6, noise=0.08)
        regions = [np.arange(0, 6), np.arange(6, 12)]
        report = eval_point_local(pred, gt, regions)
        aligned_all, gt_all = [], []
        for idx in regions:
            phat = pred.points.reshape(-1, 3)[idx]
            p = gt.points.reshape(-1, 3)[idx]
            res = pa.oracle_align_3d_restricted(phat, p, 1.0 / p[:, 2], None)
            aligned_all.append(res.align.apply(phat))
            gt_all.append(p)
        aligned = np.concatenate(aligned_all)
        p = np.concatenate(gt_all)
        rel = float(np.mean(np.linalg.norm(aligned - p, axis=1) / np.linalg.norm(p, axis=1))) * 100
        assert report.rel == pytest.approx(rel, rel=1e-9)

    def test_empty_regions_skipped(self, rng):
        pred, gt = random_map_pair(rng, h=2, w=2, noise=0.0)
        report = eval_point_local(pred, gt, [np.array([0, 1]), np.array([], dtype=int)])
        assert report.n_regions_skipped == 1


class TestDepth:
    def test_exact_scale(self, rng):
        z = rng.uniform(1.0, 5.0, size=(4, 4))
        gt = DepthMap(z)
        pred = DepthMap(3.0 * z)
        report = eval_depth(pred, gt, "scale")
        assert report.rel == pytest.approx(0.0, abs=1e-12)
        assert report.delta1 == 100.0

    def test_boundary_ratio_not_inlier(self):
        # Majority exact so the alignment is the identity; one pixel at
        # exactly 1.3x stays an outlier under the strict 1.25 threshold.
        z = np.array([[1.0, 2.0, 4.0, 1.0, 2.0, 4.0, 1.0, 2.0]])
        zh = z.copy()
        zh[0, 0] = 1.3
        report = eval_depth(DepthMap(zh), DepthMap(z), "scale")
        assert report.delta1 == pytest.approx(100.0 * 7 / 8)

    def test_affine_recovery(self, rng):
        z = rng.uniform(1.0, 5.0, size=(4, 4))
        gt = DepthMap(z)
        pred = DepthMap((z - 0.75) / 2.0)
        report = eval_depth(pred, gt, "affine")
        assert report.rel == pytest.approx(0.0, abs=1e-10)
        assert report.delta1 == 100.0

    def test_small_instance_matches_oracle(self, rng):
        z = rng.uniform(1.0, 5.0, size=(1, 5))
        zh = 0.6 * z + rng.normal(0, 0.1, z.shape)
        report = eval_depth(DepthMap(zh), DepthMap(z), "scale")
        r = pa.WeightedResiduals(zh.ravel(), z.ravel(), 1.0 / z.ravel())
        oracle = pa.oracle_subproblem(r, None)
        aligned = oracle.scale * zh.ravel()
        rel = float(np.mean(np.abs(z.ravel() - aligned) / z.ravel())) * 100
        assert report.rel == pytest.approx(rel, rel=1e-9)

    def test_nonpositive_aligned_never_inlier(self):
        z = np.array([[1.0, 1.0, 1.0, 2.0]])
        zh = np.array([[1.0, 1.0, 1.0, -5.0]])
        report = eval_depth(DepthMap(zh), DepthMap(z), "scale")
        assert report.delta1 == 75.0
        assert np.isfinite(report.rel)


class TestDisparity:
    def test_exact_reciprocal(self, rng):
        z = rng.uniform(1.0, 5.0, size=(4, 4))
        report = eval_disparity_affine(DisparityMap(1.0 / z), DepthMap(z))
        assert report.rel == pytest.approx(0.0, abs=1e-10)
        assert report.delta1 == 100.0

    def test_affine_disparity_recovered(self, rng):
        z = rng.uniform(1.0, 5.0, size=(4, 4))
        d = 1.0 / z
        pred = DisparityMap(0.5 * d + 0.2)
        report = eval_disparity_affine(pred, DepthMap(z))
        assert report.rel == pytest.approx(0.0, abs=1e-9)

    def test_exact_recovery_on_binary_design(self):
        # dhat in {0, 1} makes the 2x2 normal equations exactly solvable
        # by Cramer's rule: planted dyadic (a, b) come back bitwise.
        a_true, b_true = 2.0, 0.4375
        dhat = np.array([[0.0, 1.0, 0.0, 1.0]])
        d = a_true * dhat + b_true
        z = 1.0 / d
        report = eval_disparity_affine(DisparityMap(dhat), DepthMap(z))
        assert report.rel == 0.0 and report.delta1 == 100.0

    def test_clamp_at_far_range(self, rng):
        from pointalign.metrics import align_disparity_affine

        # Many exact pixels plus a mild under-prediction at the farthest
        # one: its aligned disparity drops below 1/z_max and the clamp pins
        # the inverted depth to z_max exactly.
        z = rng.uniform(1.0, 5.0, size=25)
        z[7] = 5.0
        d = 1.0 / z
        dhat = d.copy()
        dhat[7] -= 0.02
        a, b, aligned_z = align_disparity_affine(dhat, d, z_max=5.0)
        assert a * dhat[7] + b < 1.0 / 5.0
        assert aligned_z[7] == 5.0
        assert np.all(aligned_z <= 5.0)

    def test_constant_disparity_rejected(self):
        z = np.array([[1.0, 2.0, 3.0, 4.0]])
        with pytest.raises(DegenerateGeometryError):
            eval_disparity_affine(DisparityMap(np.full((1, 4), 0.3)), DepthMap(z))


class TestFov:
    def test_identity(self):
        report = eval_fov([45.0, 60.0], [45.0, 60.0])
        assert report.mean == 0.0 and report.median == 0.0

    def test_two_errors(self):
        report = eval_fov([46.0, 63.0], [45.0, 60.0])
        assert report.mean == 2.0 and report.median == 2.0

    def test_median_robust_to_outlier(self):
        report = eval_fov([45.0, 46.0, 55.0], [45.0, 45.0, 45.0])
        assert report.mean == pytest.approx(11.0 / 3.0)
        assert report.median == 1.0

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            eval_fov([1.0], [1.0, 2.0])


class TestMacroAverage:
    def test_unweighted_mean(self, rng):
        p1, g1 = random_map_pair(rng, h=3, w=3, noise=0.1)
        p2, g2 = random_map_pair(rng, h=5, w=5, noise=0.2)
        r1 = eval_point_affine(p1, g1)
        r2 = eval_point_affine(p2, g2)
        merged = macro_average([r1, r2])
        assert merged.rel == pytest.approx((r1.rel + r2.rel) / 2)
        assert merged.n_pixels == r1.n_pixels + r2.n_pixels

    def test_mixed_representations_rejected(self, rng):
        p, g = random_map_pair(rng, noise=0.1)
        with pytest.raises(InputError):
            macro_average([eval_point_affine(p, g), eval_point_scale(p, g)])
