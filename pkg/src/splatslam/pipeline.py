"""Full SLAM run: strict per-frame alternation of tracking and mapping.

Frame 0 initializes the map at the identity pose; every later frame is
tracked against the frozen map, captured as a keyframe when the interval
hits, and mapped with its selected keyframes.  All randomness flows from the
single run seed through named sub-seeds, so two runs with the same manifest
inputs produce identical trajectories and checkpoints.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .camera import CameraPose, save_trajectory
from .config import PipelineConfig, resolve_tau
from .dataset import SequenceData
from .errors import DataError
from .keyframes import (KeyframeStore, SelectionDiagnostics, select_keyframes,
                        uncertainty, write_keyframe_csv)
from .mapper import make_map_optimizer, map_frame, write_mapping_stats_csv
from .metrics import EvalReport, ate, depth_l1, miou, psnr, ssim
from .rasterizer import render
from .scene import GaussianMap, save_map
from .tracker import track_frame

EVAL_EVERY = 5  # render metrics cadence, frames


@dataclass
class RunManifest:
    """Everything needed to reproduce a run on the same build."""

    config: dict
    input_path: str
    output_dir: str
    seed: int
    version: str = __version__
    frame_timings_ms: list[dict] = field(default_factory=list)
    track_fps: float = 0.0
    map_fps: float = 0.0
    slam_fps: float = 0.0
    tracking_failures: list[int] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2) + "\n")


@dataclass
class RunResult:
    poses: list[CameraPose]
    gmap: GaussianMap
    report: EvalReport
    manifest: RunManifest
    loss_rows: list[dict] = field(default_factory=list)


def run_slam(seq: SequenceData, cfg: PipelineConfig, seed: int = 0,
             out_dir: str | Path | None = None,
             use_gt_poses: bool = False,
             checkpoint_every: int = 0,
             eval_every: int = EVAL_EVERY) -> RunResult:
    """Run tracking and mapping over a loaded sequence.

    ``use_gt_poses`` bypasses tracking and injects the ground-truth poses
    (the sequence must carry them).  ``checkpoint_every`` > 0 additionally
    writes periodic map checkpoints.  Writes trajectory, checkpoints, eval
    report, loss/keyframe/mapping CSVs, and the manifest into ``out_dir``
    when given.
    """
    frames = seq.frames
    intr = seq.intrinsics
    palette = seq.palette
    if cfg.use_semantic and palette is None:
        raise DataError("semantic channel enabled but the sequence has no palette")
    if use_gt_poses and seq.gt_poses is None:
        raise DataError("ground-truth pose injection requested but none provided")
    tau = resolve_tau(cfg, len(frames))

    store = KeyframeStore(interval=cfg.keyframe_interval)
    opt_state = make_map_optimizer(cfg)
    gmap = GaussianMap()
    poses: list[CameraPose] = []
    manifest = RunManifest(config={k: getattr(cfg, k) for k in
                                   (f.name for f in dataclasses.fields(cfg))},
                           input_path="", output_dir=str(out_dir or ""), seed=seed)
    report = EvalReport()
    kf_diag = SelectionDiagnostics()
    mapping_rows: list[dict] = []
    loss_rows: list[dict] = []
    track_time = 0.0
    map_time = 0.0

    for t, frame in enumerate(frames):
        t0 = time.perf_counter()
        if t == 0:
            pose = seq.gt_poses[0].copy() if use_gt_poses else CameraPose.identity()
        elif use_gt_poses:
            pose = seq.gt_poses[t].copy()
        else:
            result = track_frame(gmap, frame, poses[-2:], cfg, intr)
            pose = result.pose
            if result.failed:
                manifest.tracking_failures.append(t)
            loss_rows.append({"frame": t, "stage": "track",
                              "loss": result.final_loss,
                              "masked_fraction": result.masked_pixel_fraction,
                              "converged": result.converged})
        t1 = time.perf_counter()
        poses.append(pose)

        store.add(frame, pose, tau)
        selected = select_keyframes(store, frame, pose, gmap, palette, cfg, intr,
                                    seed, diagnostics=kf_diag)
        u_t = uncertainty(t, tau) if cfg.use_uncertainty else 1.0
        gmap, stats = map_frame(gmap, frame, pose, selected, cfg, intr,
                                opt_state, palette, current_uncertainty=u_t)
        t2 = time.perf_counter()
        track_time += t1 - t0
        map_time += t2 - t1
        manifest.frame_timings_ms.append({"frame": t, "track_ms": (t1 - t0) * 1e3,
                                          "map_ms": (t2 - t1) * 1e3})
        mapping_rows.append({"frame": t, "gaussians_added": stats.gaussians_added,
                             "map_size": gmap.count, "final_loss": stats.final_loss,
                             "depth_term": stats.depth_term,
                             "color_term": stats.color_term,
                             "semantic_term": stats.semantic_term,
                             "keyframes_used": len(selected)})
        loss_rows.append({"frame": t, "stage": "map", "loss": stats.final_loss,
                          "masked_fraction": 1.0, "converged": True})

        if out_dir is not None and checkpoint_every and (t + 1) % checkpoint_every == 0:
            save_map(Path(out_dir) / f"map_{t:06d}.gsmap", gmap, palette)

    # training-view metrics against the finished map, every eval_every frames
    for t in range(0, len(frames), eval_every):
        frame = frames[t]
        out = render(gmap, poses[t], intr)
        miou_val = None
        if cfg.use_semantic and palette is not None:
            miou_val = miou(out.semantic, frame.semantic, palette)
        report.add_frame(
            frame=t,
            psnr_db=psnr(out.color, frame.color) if cfg.use_color else float("nan"),
            ssim_val=ssim(out.color, frame.color) if cfg.use_color else float("nan"),
            depth_cm=depth_l1(out.depth, frame.depth),
            miou_val=miou_val)

    if seq.gt_poses is not None:
        report.ate_mean_cm, report.ate_rmse_cm = ate(poses, seq.gt_poses)

    n = len(frames)
    manifest.track_fps = (n - 1) / track_time if track_time > 0 else float("inf")
    manifest.map_fps = n / map_time if map_time > 0 else float("inf")
    total = track_time + map_time
    manifest.slam_fps = n / total if total > 0 else float("inf")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_trajectory(out_dir / "trajectory.txt", poses,
                        [f.timestamp for f in frames])
        save_map(out_dir / "map_final.gsmap", gmap, palette)
        report.to_csv(out_dir / "eval.csv")
        (out_dir / "eval_summary.txt").write_text(report.summary_table() + "\n")
        write_keyframe_csv(out_dir / "keyframes.csv", kf_diag)
        write_mapping_stats_csv(out_dir / "mapping.csv", mapping_rows)
        write_mapping_stats_csv(out_dir / "losses.csv", loss_rows)
        manifest.save(out_dir / "manifest.json")
    return RunResult(poses=poses, gmap=gmap, report=report, manifest=manifest,
                     loss_rows=loss_rows)
