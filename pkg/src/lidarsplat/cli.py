"""Batch pipeline front-end: synth, sample, normals, depthmaps, render, train-toy, eval.

Every command is a single process, reads one JSON config (flags override
individual fields), fans all randomness out from one top-level seed, and is
byte-reproducible for fixed seed and inputs. Failures exit nonzero with a
machine-readable JSON error on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import complexity, synth
from .cameras import (
    CameraView,
    DepthMap,
    lidar_depth_map,
    load_cameras,
    write_cameras_json,
)
from .config import PipelineConfig, apply_overrides, dump_config, load_config
from .imgio import (
    ensure_dir,
    read_image_png,
    read_mask_png,
    read_pfm,
    write_heatmap_png,
    write_image_png,
    write_mask_png,
    write_pfm,
)
from .losses import ConfidenceMap, confidence_weights, depth_loss, psnr, ssim
from .pointcloud import load_pointcloud, save_pointcloud
from .render import render_frame
from .splats import (
    SplitSchedule,
    estimate_point_normals,
    init_gaussians_from_cloud,
    load_gaussian_set,
    save_gaussian_set,
)
from .training import init_train_state, train_loop

logger = logging.getLogger(__name__)


def _stage_seed(seed: int, stage: str) -> int:
    """Fan the top-level seed out per pipeline stage, deterministically."""
    tag = sum(ord(c) * 31**i for i, c in enumerate(stage)) % (2**31)
    return int(np.random.SeedSequence((seed, tag)).generate_state(1)[0])


def _load_pipeline_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for flag, dotted in (
        ("k", "allocation.k"),
        ("alpha", "allocation.alpha"),
        ("beta", "allocation.beta"),
        ("budget", "allocation.budget_m"),
        ("chunk_size", "allocation.chunk_size"),
        ("splat_radius", "depth.splat_radius_px"),
        ("z_tolerance", "depth.z_tolerance"),
        ("iters", "train.total_iters"),
        ("densify_interval", "train.densify_interval"),
        ("gate_mode", "train.curvature_gate_mode"),
        ("lr_mean", "train.lr_mean"),
        ("weight_mode", "train.weight_mode"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[dotted] = value
    return apply_overrides(cfg, overrides)


def _write_effective_config(cfg: PipelineConfig, outdir: Path) -> None:
    dump_config(cfg, outdir / "effective_config.json")


def _json_dump(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _histogram(values: np.ndarray, bins: int = 20) -> dict:
    counts, edges = np.histogram(values, bins=bins)
    return {"counts": counts.tolist(), "edges": [float(e) for e in edges]}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> None:
    cfg = _load_pipeline_config(args)
    outdir = ensure_dir(args.out)
    cloud = synth.make_scene(args.scene, side_points=args.side_points, seed=cfg.seed)
    save_pointcloud(cloud, outdir / "scene.ply")
    views = synth.ring_cameras(
        n_views=args.views,
        radius=args.camera_radius,
        height=args.camera_height,
        fx=args.focal,
        width=args.image_size,
        height_px=args.image_size,
    )
    write_cameras_json(views, outdir / "cameras.json")
    _write_effective_config(cfg, outdir)
    _json_dump(
        {
            "scene": args.scene,
            "points": cloud.count,
            "views": len(views),
            "has_colors": cloud.colors is not None,
        },
        outdir / "scene_meta.json",
    )


def cmd_sample(args) -> None:
    cfg = _load_pipeline_config(args)
    outdir = ensure_dir(args.out)
    t0 = time.perf_counter()
    cloud = load_pointcloud(args.input)
    alloc = cfg.allocation
    budget = min(alloc.budget_m, cloud.count) if args.clamp_budget else alloc.budget_m
    if budget > cloud.count:
        raise ValueError(f"budget M={budget} exceeds cloud size N={cloud.count}")
    field = complexity.compute_complexity_field(cloud, alloc)
    seed = _stage_seed(cfg.seed, "sample")
    picked = complexity.sample_indices(field.probabilities, budget, seed)
    save_pointcloud(cloud.select(picked), outdir / "sampled.ply")
    extra = {"curvature": field.curvature, "prob": field.probabilities}
    if field.texture is not None:
        extra["texture"] = field.texture
    save_pointcloud(cloud, outdir / "scores.ply", extra=extra)
    _write_effective_config(cfg, outdir)
    stats = {
        "n_input": cloud.count,
        "m_sampled": int(budget),
        "seed": cfg.seed,
        "curvature_hist": _histogram(field.curvature),
        "prob_hist": _histogram(field.probabilities),
        "runtime_seconds": time.perf_counter() - t0,
    }
    if field.texture is not None:
        stats["texture_hist"] = _histogram(field.texture)
    _json_dump(stats, outdir / "stats.json")


def cmd_normals(args) -> None:
    cfg = _load_pipeline_config(args)
    outdir = ensure_dir(args.out)
    cloud = load_pointcloud(args.input)
    viewpoint = None
    if args.viewpoint is not None:
        viewpoint = np.array([float(x) for x in args.viewpoint.split(",")])
        if viewpoint.shape != (3,):
            raise ValueError("--viewpoint must be 'x,y,z'")
    with_normals = estimate_point_normals(
        cloud, k=cfg.allocation.k, viewpoint=viewpoint, orient=args.orient
    )
    save_pointcloud(with_normals, outdir / "normals.ply")
    _write_effective_config(cfg, outdir)


def cmd_depthmaps(args) -> None:
    cfg = _load_pipeline_config(args)
    outdir = ensure_dir(args.out)
    cloud = load_pointcloud(args.input)
    views = load_cameras(args.cameras)
    manifest = {"views": []}
    empty = []
    for view in views:
        dm = lidar_depth_map(
            view,
            cloud,
            splat_radius_px=cfg.depth.splat_radius_px,
            z_tolerance=cfg.depth.z_tolerance,
        )
        write_pfm(outdir / f"{view.name}_depth.pfm", dm.depth)
        write_mask_png(outdir / f"{view.name}_mask.png", dm.valid)
        coverage = dm.coverage()
        if coverage == 0.0:
            empty.append(view.name)
            logger.warning("depthmaps: view %s covers no points", view.name)
        manifest["views"].append({"name": view.name, "coverage": coverage})
    if empty and len(empty) == len(views):
        raise ValueError(f"no view covers any point: {', '.join(empty)}")
    _json_dump(manifest, outdir / "manifest.json")
    _write_effective_config(cfg, outdir)


def cmd_render(args) -> None:
    cfg = _load_pipeline_config(args)
    outdir = ensure_dir(args.out)
    gset, _ = load_gaussian_set(args.checkpoint)
    views = load_cameras(args.cameras)
    for view in views:
        frame = render_frame(gset, view, weight_mode=cfg.train.weight_mode)
        write_pfm(outdir / f"{view.name}_depth.pfm", frame.depth.depth)
        write_mask_png(outdir / f"{view.name}_depth_mask.png", frame.depth.valid)
        write_image_png(outdir / f"{view.name}_color.png", frame.color)
        write_pfm(outdir / f"{view.name}_color.pfm", frame.color.mean(axis=2))
        if args.contributors:
            write_heatmap_png(outdir / f"{view.name}_contributors.png", frame.contributors)
    _write_effective_config(cfg, outdir)


def _load_views_with_data(
    views: list[CameraView], images_dir, depth_dir
) -> list[tuple[CameraView, np.ndarray | None, DepthMap | None]]:
    out = []
    for view in views:
        image = None
        if images_dir is not None:
            path = Path(images_dir) / f"{view.name}.png"
            if path.exists():
                image = read_image_png(path)
        lidar = None
        if depth_dir is not None:
            dpath = Path(depth_dir) / f"{view.name}_depth.pfm"
            mpath = Path(depth_dir) / f"{view.name}_mask.png"
            if dpath.exists() and mpath.exists():
                valid = read_mask_png(mpath)
                depth = read_pfm(dpath)
                lidar = DepthMap(depth=np.where(valid, depth, 0.0), valid=valid)
        out.append((view, image, lidar))
    return out


def cmd_train_toy(args) -> None:
    cfg = _load_pipeline_config(args)
    outdir = ensure_dir(args.out)
    cloud = load_pointcloud(args.input)
    views = load_cameras(args.cameras)

    if args.depth_dir is not None:
        triples = _load_views_with_data(views, args.images_dir, args.depth_dir)
    else:
        triples = []
        for view, image, _ in _load_views_with_data(views, args.images_dir, None):
            dm = lidar_depth_map(
                view,
                cloud,
                splat_radius_px=cfg.depth.splat_radius_px,
                z_tolerance=cfg.depth.z_tolerance,
            )
            triples.append((view, image, dm))
    # featureless fallback image so confidence weights stay defined
    triples = [
        (v, img if img is not None else np.full((v.height, v.width, 3), 0.5), dm)
        for v, img, dm in triples
    ]

    init_cloud = cloud
    if args.init_budget is not None and args.init_budget < cloud.count:
        probs = np.full(cloud.count, 1.0 / cloud.count)
        picked = complexity.sample_indices(probs, args.init_budget, _stage_seed(cfg.seed, "init"))
        init_cloud = cloud.select(picked)
    if init_cloud.count < 3:
        raise ValueError(f"initialization needs at least 3 points, got {init_cloud.count}")
    if init_cloud.normals is None:
        init_cloud = estimate_point_normals(init_cloud, k=min(16, init_cloud.count - 1))
    gset = init_gaussians_from_cloud(init_cloud)

    schedule = SplitSchedule(
        total_iters=max(cfg.train.total_iters, 1),
        theta_start=cfg.schedule.theta_start,
        theta_end=cfg.schedule.theta_end,
    )
    state = init_train_state(gset, schedule, seed=_stage_seed(cfg.seed, "train"))

    losses = []

    def track(st, loss):
        losses.append((st.t, loss, len(st.gset)))
        if args.checkpoint_every and st.t % args.checkpoint_every == 0:
            _save_checkpoint(st, outdir / f"checkpoint_{st.t:06d}.ply")

    state = train_loop(state, triples, cfg.train, on_iteration=track)
    _save_checkpoint(state, outdir / "checkpoint_final.ply")

    with open(outdir / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "gaussians"])
        for t, loss, g in losses:
            writer.writerow([t, repr(float(loss)), g])
    _write_effective_config(cfg, outdir)


def _save_checkpoint(state, path) -> None:
    save_gaussian_set(
        state.gset,
        path,
        sidecar={
            "iteration": state.t,
            "total_iters": state.schedule.total_iters,
            "theta_start": state.schedule.theta_start,
            "theta_end": state.schedule.theta_end,
            "seed": state.seed,
        },
    )


def cmd_eval(args) -> None:
    cfg = _load_pipeline_config(args)
    outdir = ensure_dir(args.out)
    gset, _ = load_gaussian_set(args.checkpoint)
    views = load_cameras(args.cameras)
    triples = _load_views_with_data(views, args.images_dir, args.depth_dir)

    rows = []
    for view, image, lidar in triples:
        frame = render_frame(gset, view, weight_mode=cfg.train.weight_mode)
        # metrics run on the 8-bit image actually delivered, not the raw floats
        color8 = np.round(np.clip(frame.color, 0.0, 1.0) * 255.0) / 255.0
        row = {"view": view.name, "psnr": None, "ssim": None, "depth_loss": None}
        if image is not None:
            row["psnr"] = psnr(color8, image)
            row["ssim"] = ssim(color8, image)
        if lidar is not None and lidar.valid.any():
            if image is not None:
                conf = confidence_weights(image, lidar.valid)
            else:
                # no image to derive confidence from: uniform weights
                conf = ConfidenceMap(weights=np.ones(lidar.shape), valid=lidar.valid)
            row["depth_loss"] = depth_loss(lidar, frame.depth, conf)
        rows.append(row)

    def fmt(x):
        if x is None:
            return ""
        if np.isinf(x):
            return "inf"
        return repr(float(x))

    with open(outdir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["view", "psnr", "ssim", "depth_loss"])
        for row in rows:
            writer.writerow([row["view"], fmt(row["psnr"]), fmt(row["ssim"]), fmt(row["depth_loss"])])
    payload = [
        {k: ("inf" if isinstance(v, float) and np.isinf(v) else v) for k, v in row.items()}
        for row in rows
    ]
    _json_dump({"views": payload}, outdir / "metrics.json")
    _write_effective_config(cfg, outdir)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None, help="top-level seed override")
    p.add_argument("--out", type=str, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidarsplat",
        description="LiDAR-centric Gaussian-splat toolkit (batch pipeline)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene + camera ring")
    _add_common(p)
    p.add_argument("--scene", choices=synth.SCENES, required=True)
    p.add_argument("--side-points", type=int, default=40, dest="side_points")
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--camera-radius", type=float, default=2.5, dest="camera_radius")
    p.add_argument("--camera-height", type=float, default=0.8, dest="camera_height")
    p.add_argument("--focal", type=float, default=48.0)
    p.add_argument("--image-size", type=int, default=48, dest="image_size")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="complexity-weighted budget sampling")
    _add_common(p)
    p.add_argument("--input", type=str, required=True)
    p.add_argument("--budget", "-M", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--chunk-size", type=int, default=None, dest="chunk_size")
    p.add_argument(
        "--clamp-budget",
        action="store_true",
        help="clamp the budget to the cloud size instead of erroring",
    )
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("normals", help="PCA normal estimation")
    _add_common(p)
    p.add_argument("--input", type=str, required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--viewpoint", type=str, default=None, help="x,y,z sign-orientation point")
    p.add_argument("--orient", choices=("toward", "away"), default="toward")
    p.set_defaults(func=cmd_normals)

    p = sub.add_parser("depthmaps", help="project the cloud into each view")
    _add_common(p)
    p.add_argument("--input", type=str, required=True)
    p.add_argument("--cameras", type=str, required=True)
    p.add_argument("--splat-radius", type=int, default=None, dest="splat_radius")
    p.add_argument("--z-tolerance", type=float, default=None, dest="z_tolerance")
    p.set_defaults(func=cmd_depthmaps)

    p = sub.add_parser("render", help="render a checkpoint into each view")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--cameras", type=str, required=True)
    p.add_argument("--contributors", action="store_true")
    p.add_argument("--weight-mode", choices=("transmittance", "raw"), default=None, dest="weight_mode")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train-toy", help="desk-scale finite-difference training")
    _add_common(p)
    p.add_argument("--input", type=str, required=True)
    p.add_argument("--cameras", type=str, required=True)
    p.add_argument("--images-dir", type=str, default=None, dest="images_dir")
    p.add_argument("--depth-dir", type=str, default=None, dest="depth_dir")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--densify-interval", type=int, default=None, dest="densify_interval")
    p.add_argument("--gate-mode", choices=("AND", "OR", "OFF"), default=None, dest="gate_mode")
    p.add_argument("--lr-mean", type=float, default=None, dest="lr_mean")
    p.add_argument("--init-budget", type=int, default=None, dest="init_budget")
    p.add_argument("--checkpoint-every", type=int, default=0, dest="checkpoint_every")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", help="PSNR/SSIM/depth-loss tables for a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--cameras", type=str, required=True)
    p.add_argument("--images-dir", type=str, default=None, dest="images_dir")
    p.add_argument("--depth-dir", type=str, default=None, dest="depth_dir")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # machine-readable failure contract
        payload = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(payload), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
