"""Command-line interface.

Subcommands: align, recover-camera, evaluate, losses, synth. Structured
results are JSON (stdout, or --out <file>); --figures <dir> additionally
renders report figures next to the JSON. Failures exit nonzero with a
machine-readable JSON error on stderr: 2 for input problems, 3 for
numerical failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import figures as figs
from .camera import fov_from_focal, recover_focal_shift
from .errors import InputError, PmapFormatError, PointalignError
from .losses import (
    DEFAULT_ANCHORS_PER_SCALE,
    DEFAULT_SCALES,
    DEFAULT_TRIM,
    loss_breakdown,
)
from .maps import ImageGrid, PointMap, downsample_pointmap
from .metrics import (
    eval_depth,
    eval_disparity_affine,
    eval_point_affine,
    eval_point_local,
    eval_point_scale,
)
from .pmap_io import (
    read_depth,
    read_disparity,
    read_pmap,
    read_pointmap,
    write_depth,
    write_pmap,
    write_pointmap,
)
from .scenes import FAMILIES, make_scene
from .solver import (
    DEFAULT_TAU,
    align_least_squares,
    align_median_baseline,
    align_scale_only,
    align_scale_shift_1d,
    align_scale_shift_3d,
    _joint_valid,
)


def _parse_tau(text: str):
    if text.lower() == "none":
        return None
    try:
        value = float(text)
    except ValueError:
        raise InputError(f"--tau expects a number or 'none', got {text!r}") from None
    return value


def _parse_resize(text: str):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise InputError(f"--resize expects HxW, got {text!r}") from None


def _resize_to(pm: PointMap, target):
    th = min(target[0], pm.height)
    tw = min(target[1], pm.width)
    return downsample_pointmap(pm, th, tw)


def _emit(args, payload) -> None:
    text = json.dumps(payload, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _figure_dir(args):
    if getattr(args, "figures", None):
        os.makedirs(args.figures, exist_ok=True)
        return args.figures
    return None


def _cmd_align(args):
    pred = _resize_to(read_pointmap(args.pred), _parse_resize(args.resize))
    gt = _resize_to(read_pointmap(args.gt), _parse_resize(args.resize))
    tau = _parse_tau(args.tau)

    if args.mode == "median":
        norm_pred, norm_gt = align_median_baseline(pred, gt)
        payload = {
            "mode": "median",
            "pred": {"scale": norm_pred.scale, "shift": norm_pred.shift.tolist()},
            "gt": {"scale": norm_gt.scale, "shift": norm_gt.shift.tolist()},
        }
        return payload

    if args.mode == "scale":
        res = align_scale_only(pred, gt, tau, args.weights)
    elif args.mode == "affine1d":
        res = align_scale_shift_1d(pred, gt, tau, args.weights)
    elif args.mode == "affine3d":
        phat, p, w = _joint_valid(pred, gt, args.weights)
        res = align_scale_shift_3d(phat, p, w, tau)
    else:  # lsq
        res = align_least_squares(pred, gt, args.lsq_shift, args.weights)

    n_pixels = int((pred.valid & gt.valid).sum())
    payload = {
        "mode": args.mode,
        "tau": tau,
        "scale": res.align.scale,
        "shift": res.align.shift.tolist(),
        "objective": res.objective,
        "anchor_index": res.anchor_index,
        "n_pixels": n_pixels,
    }
    fig_dir = _figure_dir(args)
    if fig_dir:
        phat, p, w = _joint_valid(pred, gt, args.weights)
        resid = w * np.abs(res.align.apply(phat) - p).sum(axis=1)
        payload["figures"] = [
            figs.save_histogram(
                resid,
                os.path.join(fig_dir, "align_residuals.png"),
                f"weighted L1 residuals ({args.mode})",
                xlabel="per-pixel residual",
            )
        ]
    return payload


def _cmd_recover_camera(args):
    src = read_pointmap(args.pointmap)
    pm = _resize_to(src, _parse_resize(args.resize))
    grid = ImageGrid(pm.height, pm.width)
    sol = recover_focal_shift(pm, grid)
    fov = fov_from_focal(sol.focal, grid)
    scale_u = src.width / pm.width
    scale_v = src.height / pm.height
    payload = {
        "focal": sol.focal,
        "shift_z": sol.shift_z,
        "iterations": sol.iterations,
        "final_residual": sol.final_residual,
        "fov_vertical_deg": fov.vertical,
        "fov_horizontal_deg": fov.horizontal,
        "grid": [pm.height, pm.width],
        "source": [src.height, src.width],
        # Focal in source-image pixels; only meaningful when the resize
        # kept the aspect ratio.
        "focal_source": sol.focal * scale_u if scale_u == scale_v else None,
    }
    return payload


def _load_regions(path):
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise InputError("regions file must hold a JSON list of pixel-index arrays")
    return [np.asarray(r, dtype=np.int64) for r in raw]


def _cmd_evaluate(args):
    repr_name = args.repr
    if repr_name in ("point-scale", "point-affine", "point-local"):
        pred = read_pointmap(args.pred)
        gt = read_pointmap(args.gt)
        if repr_name == "point-scale":
            report = eval_point_scale(pred, gt)
        elif repr_name == "point-affine":
            report = eval_point_affine(pred, gt)
        else:
            if not args.regions:
                raise InputError("point-local evaluation requires --regions")
            report = eval_point_local(pred, gt, _load_regions(args.regions))
    elif repr_name in ("depth-scale", "depth-affine"):
        report = eval_depth(read_depth(args.pred), read_depth(args.gt), repr_name.split("-")[1])
    else:  # disparity
        report = eval_disparity_affine(read_disparity(args.pred), read_depth(args.gt))
    payload = {
        "representation": report.representation,
        "rel": report.rel,
        "delta1": report.delta1,
        "n_pixels": report.n_pixels,
        "n_excluded": report.n_excluded,
        "n_regions_skipped": report.n_regions_skipped,
    }
    fig_dir = _figure_dir(args)
    if fig_dir:
        payload["figures"] = [
            figs.save_bar_chart(
                ["rel %", "delta1 %"],
                [report.rel, report.delta1],
                os.path.join(fig_dir, "metrics.png"),
                f"{report.representation} ({report.n_pixels} px)",
            )
        ]
    return payload


def _read_optional_scalar(path):
    if path is None:
        return None
    data = read_pmap(path)
    return data.values[:, :, 0]


def _cmd_losses(args):
    pred = read_pointmap(args.pred)
    gt = read_pointmap(args.gt)
    scales = tuple(float(s) for s in args.scales.split(","))
    gt_normals = None
    normals_valid = None
    if args.gt_normals:
        data = read_pmap(args.gt_normals)
        if data.channels != 3:
            raise InputError("--gt-normals must be a 3-channel PMAP")
        gt_normals = data.values
        normals_valid = data.mask
    breakdown = loss_breakdown(
        pred,
        gt,
        focal=args.focal,
        preset=args.preset,
        tau=_parse_tau(args.tau),
        trim_fraction=args.trim,
        anchors_per_scale=args.anchors,
        seed=args.seed,
        scales=scales,
        gt_normals=gt_normals,
        normals_valid=normals_valid,
        pred_mask=_read_optional_scalar(args.pred_mask),
        inf_mask=None if args.inf_mask is None else read_pmap(args.inf_mask).values[:, :, 0] > 0.5,
    )
    payload = {
        "global": breakdown.global_term,
        "local": None
        if breakdown.local_terms is None
        else {repr(k): v for k, v in breakdown.local_terms.items()},
        "normal": breakdown.normal_term,
        "mask": breakdown.mask_term,
        "total": breakdown.total,
    }
    fig_dir = _figure_dir(args)
    if fig_dir:
        labels = ["global"]
        values = [breakdown.global_term]
        if breakdown.local_terms:
            for k, v in breakdown.local_terms.items():
                labels.append(f"local {k:g}")
                values.append(v)
        for name, val in (("normal", breakdown.normal_term), ("mask", breakdown.mask_term)):
            if val is not None:
                labels.append(name)
                values.append(val)
        payload["figures"] = [
            figs.save_bar_chart(
                labels,
                values,
                os.path.join(fig_dir, "loss_breakdown.png"),
                "loss breakdown",
            )
        ]
    return payload


def _cmd_synth(args):
    params = {"height": args.height, "width": args.width}
    if args.focal is not None:
        params["focal"] = args.focal
    if args.shift is not None:
        params["shift"] = args.shift
    scene = make_scene(args.family, params, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = {
        "pointmap": os.path.join(args.out_dir, "pointmap.pmap"),
        "depth": os.path.join(args.out_dir, "depth.pmap"),
        "normals": os.path.join(args.out_dir, "normals.pmap"),
    }
    write_pointmap(paths["pointmap"], scene.pointmap)
    write_depth(paths["depth"], scene.depth)
    write_pmap(paths["normals"], scene.normals, scene.depth.valid)
    meta = {
        "family": scene.description,
        "focal": scene.focal,
        "shift_true": scene.shift_true,
        "height": scene.depth.height,
        "width": scene.depth.width,
        "seed": args.seed,
        "files": paths,
    }
    if scene.regions:
        regions_path = os.path.join(args.out_dir, "regions.json")
        with open(regions_path, "w") as fh:
            json.dump([r.tolist() for r in scene.regions], fh)
        meta["regions"] = regions_path
    with open(os.path.join(args.out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    return meta


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointalign",
        description="Robust point-map alignment, camera recovery, losses, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_align = sub.add_parser("align", help="align a predicted point map to ground truth")
    p_align.add_argument("pred")
    p_align.add_argument("gt")
    p_align.add_argument(
        "--mode",
        choices=("scale", "affine1d", "affine3d", "median", "lsq"),
        default="affine1d",
    )
    p_align.add_argument("--tau", default=str(DEFAULT_TAU))
    p_align.add_argument("--resize", default="64x64")
    p_align.add_argument("--weights", choices=("inv-z", "uniform"), default="inv-z")
    p_align.add_argument("--lsq-shift", choices=("1d", "3d"), default="1d")
    p_align.add_argument("--out")
    p_align.add_argument("--figures")
    p_align.set_defaults(func=_cmd_align)

    p_cam = sub.add_parser("recover-camera", help="recover focal length and z-shift")
    p_cam.add_argument("pointmap")
    p_cam.add_argument("--resize", default="64x64")
    p_cam.add_argument("--out")
    p_cam.set_defaults(func=_cmd_recover_camera)

    p_eval = sub.add_parser("evaluate", help="evaluation-protocol metrics")
    p_eval.add_argument("pred")
    p_eval.add_argument("gt")
    p_eval.add_argument(
        "--repr",
        choices=(
            "point-scale",
            "point-affine",
            "point-local",
            "depth-scale",
            "depth-affine",
            "disparity",
        ),
        required=True,
    )
    p_eval.add_argument("--regions")
    p_eval.add_argument("--out")
    p_eval.add_argument("--figures")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_loss = sub.add_parser("losses", help="training-loss reference values")
    p_loss.add_argument("pred")
    p_loss.add_argument("gt")
    p_loss.add_argument("--focal", type=float, required=True)
    p_loss.add_argument("--scales", default=",".join(repr(s) for s in DEFAULT_SCALES))
    p_loss.add_argument("--anchors", type=int, default=DEFAULT_ANCHORS_PER_SCALE)
    p_loss.add_argument("--seed", type=int, default=0)
    p_loss.add_argument("--trim", type=float, default=DEFAULT_TRIM)
    p_loss.add_argument("--tau", default=str(DEFAULT_TAU))
    p_loss.add_argument("--preset", choices=("synthetic", "sfm-recon", "lidar", "kinect"), default="synthetic")
    p_loss.add_argument("--gt-normals")
    p_loss.add_argument("--pred-mask")
    p_loss.add_argument("--inf-mask")
    p_loss.add_argument("--out")
    p_loss.add_argument("--figures")
    p_loss.set_defaults(func=_cmd_losses)

    p_synth = sub.add_parser("synth", help="generate synthetic fixtures")
    p_synth.add_argument("--family", choices=FAMILIES, required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", dest="out_dir", required=True)
    p_synth.add_argument("--height", type=int, default=64)
    p_synth.add_argument("--width", type=int, default=64)
    p_synth.add_argument("--focal", type=float)
    p_synth.add_argument("--shift", type=float)
    p_synth.set_defaults(func=_cmd_synth, out=None)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        payload = args.func(args)
    except PointalignError as exc:
        error = {"error": {"code": type(exc).__name__, "message": str(exc)}}
        if isinstance(exc, PmapFormatError):
            error["error"]["format_code"] = exc.code
        print(json.dumps(error), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(
            json.dumps({"error": {"code": "OSError", "message": str(exc)}}),
            file=sys.stderr,
        )
        return 2
    _emit(args, payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
