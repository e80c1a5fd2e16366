"""Shared fixture corpus: PMAP files generated by the primary package."""

import os

os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import numpy as np
import pytest

import pointalign as pa


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Per-family (pred.pmap, gt.pmap) pairs plus scene metadata."""
    root = tmp_path_factory.mktemp("corpus")
    rng = np.random.default_rng(77)
    entries = []
    for seed, family in enumerate(pa.FAMILIES):
        scene = pa.make_scene(family, {"focal": 640.0, "shift": 0.4}, seed=seed)
        gt = scene.pointmap
        pred_pts = (gt.points - np.array([0.0, 0.0, 0.9])) / 1.6
        pred_pts = pred_pts + rng.normal(0.0, 0.01, pred_pts.shape)
        gt_path = root / f"{family}_gt.pmap"
        pred_path = root / f"{family}_pred.pmap"
        pa.write_pointmap(gt_path, gt)
        pa.write_pmap(pred_path, pred_pts, gt.valid)
        entries.append(
            {
                "family": family,
                "gt_path": gt_path,
                "pred_path": pred_path,
                "gt": pa.read_pointmap(gt_path),
                "pred": pa.read_pointmap(pred_path),
                "scene": scene,
            }
        )
    return entries
