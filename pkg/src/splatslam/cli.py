"""Command-line entry point.

Subcommands: ``run`` (full SLAM over a sequence directory), ``render``
(checkpoint + trajectory to image files), ``edit`` (apply an edit script to
a checkpoint), ``eval`` (score a finished run against ground truth), and
``synth`` (generate a synthetic sequence).  Every pipeline config key is
also a flag (e.g. ``--t_sem 0.5``); ``--config`` loads a file first and
flags override it.  Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import FIELD_NAMES, PipelineConfig, apply_overrides, load_config
from .errors import DataError, NumericError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_ABLATIONS = {
    "no-color": {"use_color": "false"},
    "no-depth": {"use_depth": "false"},
    "no-semantic": {"use_semantic": "false"},
    "no-silhouette": {"use_silhouette_mask": "false"},
    "no-geo": {"use_geo": "false"},
    "no-sem-filter": {"use_sem": "false"},
    "no-uncertainty": {"use_uncertainty": "false"},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for name in FIELD_NAMES:
        group.add_argument(f"--{name}", metavar="V", default=None)
    parser.add_argument("--config", type=Path, default=None,
                        help="config file; flags override its values")
    parser.add_argument("--ablate", action="append", default=[],
                        choices=sorted(_ABLATIONS), help="named ablation toggle")


def _build_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    for ab in args.ablate:
        overrides.update(_ABLATIONS[ab])
    for name in FIELD_NAMES:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return apply_overrides(cfg, overrides)


def _cmd_run(args) -> int:
    from .dataset import load_sequence
    from .pipeline import run_slam

    cfg = _build_config(args)
    seq = load_sequence(args.input, require_semantic=cfg.use_semantic)
    result = run_slam(seq, cfg, seed=args.seed, out_dir=args.output,
                      use_gt_poses=args.gt_poses,
                      checkpoint_every=args.checkpoint_every)
    result.manifest.input_path = str(args.input)
    result.manifest.save(Path(args.output) / "manifest.json")
    print(result.report.summary_table())
    print(f"map size: {result.gmap.count} gaussians")
    print(f"track fps: {result.manifest.track_fps:.2f}  "
          f"map fps: {result.manifest.map_fps:.2f}  "
          f"slam fps: {result.manifest.slam_fps:.2f}")
    return EXIT_OK


def _cmd_render(args) -> int:
    from .camera import load_trajectory
    from .dataset import _read_intrinsics
    from .rasterizer import export_channels, render
    from .scene import load_map

    gmap, _palette = load_map(args.checkpoint)
    intr, depth_scale = _read_intrinsics(Path(args.intrinsics))
    timestamps, poses = load_trajectory(args.poses)
    out_dir = Path(args.output)
    for ts, pose in zip(timestamps, poses):
        out = render(gmap, pose, intr)
        export_channels(out, out_dir, f"{ts:06d}", depth_scale=depth_scale)
    print(f"rendered {len(poses)} poses into {out_dir}")
    return EXIT_OK


def _cmd_edit(args) -> int:
    from .editor import apply_edit_script, load_edit_script
    from .scene import load_map, save_map

    gmap, palette = load_map(args.checkpoint)
    commands = load_edit_script(args.script, palette)
    edited = apply_edit_script(gmap, palette, commands)
    save_map(args.output, edited, palette)
    print(f"applied {len(commands)} commands: {gmap.count} -> {edited.count} gaussians")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .camera import load_trajectory
    from .dataset import load_sequence
    from .metrics import EvalReport, ate, depth_l1, miou, psnr, ssim
    from .rasterizer import render
    from .scene import load_map

    seq = load_sequence(args.gt)
    gmap, palette = load_map(Path(args.run) / "map_final.gsmap")
    _, poses = load_trajectory(Path(args.run) / "trajectory.txt")
    if len(poses) != len(seq.frames):
        raise DataError("run trajectory and ground-truth sequence differ in length")
    report = EvalReport()
    for t in range(0, len(seq.frames), args.every):
        frame = seq.frames[t]
        out = render(gmap, poses[t], seq.intrinsics)
        miou_val = miou(out.semantic, frame.semantic, palette) if palette else None
        report.add_frame(t, psnr(out.color, frame.color), ssim(out.color, frame.color),
                         depth_l1(out.depth, frame.depth), miou_val)
    if seq.gt_poses is not None:
        report.ate_mean_cm, report.ate_rmse_cm = ate(poses, seq.gt_poses)
    report.to_csv(Path(args.run) / "eval_vs_gt.csv")
    print(report.summary_table())
    return EXIT_OK


def _cmd_synth(args) -> int:
    from .dataset import generate_synthetic

    scene = generate_synthetic(seed=args.seed, frame_count=args.frames,
                               object_count=args.objects, style=args.style,
                               resolution=args.resolution,
                               depth_noise_std=args.depth_noise,
                               room_size=tuple(args.room),
                               arc_deg=args.arc, out_dir=args.output)
    print(f"generated {len(scene.frames)} frames, {scene.gmap.count} gaussians "
          f"-> {args.output}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _Parser(prog="splatslam",
                     description="Gaussian-splatting RGB-D SLAM toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="track and map a sequence directory")
    p_run.add_argument("input", type=Path, help="sequence directory")
    p_run.add_argument("output", type=Path, help="output directory")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--gt-poses", action="store_true",
                       help="inject ground-truth poses (tracking bypass)")
    p_run.add_argument("--checkpoint-every", type=int, default=0,
                       help="write a map checkpoint every N frames (0: final only)")
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_render = sub.add_parser("render", help="render a checkpoint along a trajectory")
    p_render.add_argument("checkpoint", type=Path)
    p_render.add_argument("poses", type=Path, help="trajectory file")
    p_render.add_argument("intrinsics", type=Path, help="intrinsics file")
    p_render.add_argument("output", type=Path)
    p_render.set_defaults(func=_cmd_render)

    p_edit = sub.add_parser("edit", help="apply an edit script to a checkpoint")
    p_edit.add_argument("checkpoint", type=Path)
    p_edit.add_argument("script", type=Path)
    p_edit.add_argument("output", type=Path, help="output checkpoint path")
    p_edit.set_defaults(func=_cmd_edit)

    p_eval = sub.add_parser("eval", help="score a run directory against ground truth")
    p_eval.add_argument("run", type=Path, help="run output directory")
    p_eval.add_argument("gt", type=Path, help="ground-truth sequence directory")
    p_eval.add_argument("--every", type=int, default=5)
    p_eval.set_defaults(func=_cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic sequence")
    p_synth.add_argument("output", type=Path)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--frames", type=int, default=60)
    p_synth.add_argument("--objects", type=int, default=4)
    p_synth.add_argument("--style", choices=["orbit", "line", "revisit"],
                         default="orbit")
    p_synth.add_argument("--resolution", type=int, default=64)
    p_synth.add_argument("--depth-noise", type=float, default=0.0)
    p_synth.add_argument("--room", type=float, nargs=3, default=[4.0, 4.0, 2.5])
    p_synth.add_argument("--arc", type=float, default=75.0)
    p_synth.set_defaults(func=_cmd_synth)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
