"""Command-line pipeline: synthesize, mask, train, apply, evaluate.

Dataset layout is one directory per frame::

    <dir>/frame_0000/depth.pfm       ground-truth depth
                     cloud.ply       ground-truth cloud (world frame)
                     scan.csv        2D laser scan
                     poses.txt       the frame's 5 rig poses (newest last)
                     map.ply         dense local map (world frame)
                     corrupted.ply   corrupted cloud (refinement input)

Commands exit 0 on success, 1 on usage errors, 2 on data errors. Given
identical configs and seeds every command writes bitwise-identical artifacts.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from .geometry import rasterize_depth
from .laser import build_laser_mask
from .metrics import depth_metrics, efs, emd_exact
from .refine import (
    RefinementModel,
    TrainConfig,
    apply_refinement,
    load_refinement_model,
    save_refinement_model,
    train_refinement,
)
from .spatial import build_confidence_grid
from .synth import CorruptionSpec, generate_dataset, rig_camera

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

DATASET_CONFIG = "dataset.cfg"

_REPORT_COLUMNS = ("abs_rel", "sq_rel", "rmse", "delta_1", "delta_2", "delta_3", "emd", "efs")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this pipeline reserves 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _frame_dirs(root: Path, limit: int | None = None):
    dirs = sorted(p for p in root.glob("frame_*") if p.is_dir())
    if not dirs:
        raise fio.FormatError(f"{root}: no frame_* directories found")
    if limit is not None:
        dirs = dirs[:limit]
    return dirs


def _resolve_config(args) -> fio.RunConfig:
    """--config wins; otherwise fall back to the dataset's own config."""
    if args.config:
        cfg = fio.load_config(args.config)
    else:
        candidate = Path(args.input or ".") / DATASET_CONFIG if hasattr(args, "input") else None
        if candidate and candidate.is_file():
            cfg = fio.load_config(candidate)
        else:
            cfg = fio.RunConfig().validate()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "frames", None) is not None:
        cfg.frames = args.frames
    return cfg.validate()


def _camera_for_frame(cfg: fio.RunConfig, frame_dir: Path):
    poses = fio.read_poses(frame_dir / "poses.txt")
    return rig_camera(
        poses[-1],
        cam_height=cfg.cam_height,
        width=cfg.image_width,
        height=cfg.image_height,
        focal=cfg.focal,
    )


def _grid_for_scan(cfg: fio.RunConfig, scan):
    return build_confidence_grid(scan, sigma=cfg.sigma, cell=cfg.cell, padding=cfg.grid_padding)


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    corruption = CorruptionSpec(
        tail_prob=cfg.tail_prob,
        tail_length=cfg.tail_length,
        misalign_sigma=cfg.misalign_sigma,
        seed=cfg.corruption_seed,
    )
    samples = generate_dataset(
        cfg.seed,
        cfg.frames,
        corruption,
        image_width=cfg.image_width,
        image_height=cfg.image_height,
        focal=cfg.focal,
        extent=cfg.extent,
        beams=cfg.beams,
        span=cfg.span,
        cam_height=cfg.cam_height,
        mount_height=cfg.mount_height,
        step=cfg.step,
        map_thresh=cfg.map_thresh,
    )
    for i, sample in enumerate(samples):
        frame = out / f"frame_{i:04d}"
        frame.mkdir(exist_ok=True)
        fio.write_pfm(frame / "depth.pfm", sample.gt_depth)
        fio.write_ply(frame / "cloud.ply", sample.gt_cloud)
        fio.write_scan(frame / "scan.csv", sample.scan)
        fio.write_poses(frame / "poses.txt", sample.rig_poses)
        fio.write_ply(frame / "map.ply", sample.local_map.cloud)
        fio.write_ply(frame / "corrupted.ply", sample.corrupted_cloud)
    fio.save_config(out / DATASET_CONFIG, cfg)
    print(f"wrote {len(samples)} frames to {out}")
    return EXIT_OK


def cmd_mask(args) -> int:
    cfg = _resolve_config(args)
    root = Path(args.input)
    out = Path(args.output) if args.output else root
    for frame_dir in _frame_dirs(root, args.frames):
        scan = fio.read_scan(frame_dir / "scan.csv")
        cam = _camera_for_frame(cfg, frame_dir)
        mask = build_laser_mask(cam, scan, below=cfg.below, above=cfg.above)
        target = out / frame_dir.name
        target.mkdir(parents=True, exist_ok=True)
        fio.write_pfm(target / "mask.pfm", mask)
    print(f"wrote masks for {root}")
    return EXIT_OK


def _load_training_samples(cfg: fio.RunConfig, root: Path, limit):
    samples = []
    for frame_dir in _frame_dirs(root, limit):
        cloud = fio.read_ply(frame_dir / "corrupted.ply")
        scan = fio.read_scan(frame_dir / "scan.csv")
        local_map = fio.read_ply(frame_dir / "map.ply")
        samples.append((cloud, scan, _grid_for_scan(cfg, scan), local_map))
    return samples


def cmd_refine_train(args) -> int:
    cfg = _resolve_config(args)
    root = Path(args.input)
    out = Path(args.output) if args.output else root
    out.mkdir(parents=True, exist_ok=True)
    samples = _load_training_samples(cfg, root, args.frames)
    model = RefinementModel.create(k=cfg.k, hidden=cfg.hidden, seed=cfg.model_seed)
    train_cfg = TrainConfig(
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.train_seed,
        optimizer=cfg.optimizer,
        grad_clip=cfg.grad_clip,
        offset_clamp=cfg.offset_clamp,
        reject_radius=cfg.reject_radius,
    )
    model, history = train_refinement(model, samples, train_cfg)
    save_refinement_model(out / "model.plrefine", model)
    with open(out / "loss_history.csv", "w") as f:
        f.write("epoch,loss\n")
        for epoch, loss in enumerate(history):
            f.write(f"{epoch},{loss:.17g}\n")
    print(f"trained {cfg.epochs} epochs: loss {history[0]:.6g} -> {history[-1]:.6g}")
    return EXIT_OK


def cmd_refine_apply(args) -> int:
    cfg = _resolve_config(args)
    root = Path(args.input)
    out = Path(args.output) if args.output else root
    model_path = Path(cfg.model_path) if cfg.model_path else root / "model.plrefine"
    model = load_refinement_model(model_path)
    for frame_dir in _frame_dirs(root, args.frames):
        cloud = fio.read_ply(frame_dir / "corrupted.ply")
        scan = fio.read_scan(frame_dir / "scan.csv")
        grid = _grid_for_scan(cfg, scan)
        refined = apply_refinement(
            model,
            cloud,
            scan,
            grid,
            offset_clamp=cfg.offset_clamp,
            reject_radius=cfg.reject_radius,
        )
        target = out / frame_dir.name
        target.mkdir(parents=True, exist_ok=True)
        fio.write_ply(target / "refined.ply", refined)
    print(f"wrote refined clouds for {root}")
    return EXIT_OK


def _metric_cell(value) -> str:
    return "NA" if value is None else f"{value:.6f}"


def _format_report(rows) -> str:
    header = ["method"] + list(_REPORT_COLUMNS)
    table = [header] + [[name] + [_metric_cell(v) for v in vals] for name, vals in rows]
    widths = [max(len(r[c]) for r in table) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    root = Path(args.input)
    out = Path(args.output) if args.output else root
    out.mkdir(parents=True, exist_ok=True)

    per_frame = {"corrupted": [], "refined": []}
    kv_lines = []
    for frame_dir in _frame_dirs(root, args.frames):
        gt_depth = fio.read_pfm(frame_dir / "depth.pfm")
        corrupted = fio.read_ply(frame_dir / "corrupted.ply")
        refined_path = frame_dir / "refined.ply"
        if not refined_path.is_file():
            raise fio.FormatError(f"{refined_path}: missing (run refine-apply first)")
        refined = fio.read_ply(refined_path)
        local_map = fio.read_ply(frame_dir / "map.ply")
        cam = _camera_for_frame(cfg, frame_dir)

        dm = depth_metrics(rasterize_depth(cam, corrupted), gt_depth)
        emd_c = emd_exact(corrupted, local_map, cap=cfg.emd_cap, seed=cfg.emd_seed)
        efs_c = efs(corrupted, local_map, max_dist=cfg.efs_max_dist).mean
        emd_r = emd_exact(refined, local_map, cap=cfg.emd_cap, seed=cfg.emd_seed)
        efs_r = efs(refined, local_map, max_dist=cfg.efs_max_dist).mean

        row_c = list(dm.as_tuple()) + [emd_c, efs_c]
        row_r = [None] * 6 + [emd_r, efs_r]
        per_frame["corrupted"].append(row_c)
        per_frame["refined"].append(row_r)
        for name, row in (("corrupted", row_c), ("refined", row_r)):
            for col, val in zip(_REPORT_COLUMNS, row):
                if val is not None:
                    kv_lines.append(f"{frame_dir.name}.{name}.{col}={val:.17g}")

    rows = []
    for name in ("corrupted", "refined"):
        stack = per_frame[name]
        means = []
        for c in range(len(_REPORT_COLUMNS)):
            vals = [row[c] for row in stack]
            means.append(None if vals[0] is None else float(np.mean(vals)))
        rows.append((name, means))
        for col, val in zip(_REPORT_COLUMNS, means):
            if val is not None:
                kv_lines.append(f"mean.{name}.{col}={val:.17g}")

    report = _format_report(rows)
    with open(out / "report.txt", "w") as f:
        f.write(report)
    with open(out / "metrics.kv", "w") as f:
        f.write("\n".join(kv_lines) + "\n")
    print(report, end="")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plrefine", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input, needs_output):
        p.add_argument("--config", help="run configuration file (key=value lines)")
        if needs_input:
            p.add_argument("--input", required=True, help="dataset directory")
        if needs_output:
            p.add_argument("--output", required=needs_output == "required", help="output directory")
        p.add_argument("--seed", type=int, help="override the dataset seed")
        p.add_argument("--frames", type=int, help="frame count (synth) or limit (others)")

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    common(p, needs_input=False, needs_output="required")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mask", help="rasterize laser band masks for each frame")
    common(p, needs_input=True, needs_output="optional")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("refine-train", help="train the refinement model on a dataset")
    common(p, needs_input=True, needs_output="optional")
    p.set_defaults(func=cmd_refine_train)

    p = sub.add_parser("refine-apply", help="apply a trained model to corrupted clouds")
    common(p, needs_input=True, needs_output="optional")
    p.set_defaults(func=cmd_refine_apply)

    p = sub.add_parser("eval", help="score corrupted vs refined clouds against local maps")
    common(p, needs_input=True, needs_output="optional")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (fio.FormatError, FileNotFoundError, NotADirectoryError, ValueError) as e:
        print(f"plrefine {args.command}: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
