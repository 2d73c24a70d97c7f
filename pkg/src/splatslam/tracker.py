"""Per-frame camera pose estimation against a frozen map.

The pose is initialized by constant-velocity extrapolation, then refined by
a fixed number of render / masked-L1-loss / backward / step iterations with
every Gaussian attribute frozen (the same backward pass runs with attribute
accumulation disabled, so tracking and mapping share one derivative path).
The best iterate by loss is returned rather than the last one: first-order
steps can overshoot late in the optimization.

Frames whose initial silhouette mask covers less than 1% of the pixels are
declared tracking failures and keep the motion-predicted pose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraPose, Intrinsics, apply_pose_step, predict_pose
from .config import PipelineConfig
from .dataset import Frame
from .errors import NumericError
from .losses import tracking_loss
from .optim import make_state
from .rasterizer import backward, render
from .scene import GaussianMap

MIN_MASK_FRACTION = 0.01


@dataclass
class TrackResult:
    pose: CameraPose
    final_loss: float
    iterations_used: int
    masked_pixel_fraction: float
    converged: bool
    failed: bool = False


def track_frame(gmap: GaussianMap, frame: Frame, prev_poses: list[CameraPose],
                cfg: PipelineConfig, intr: Intrinsics) -> TrackResult:
    """Estimate the pose of ``frame`` against the current map.

    ``prev_poses`` holds the latest one or two estimated poses (earliest
    first); with two, the initialization extrapolates at constant velocity.
    The map is read-only throughout.
    """
    if gmap.count == 0:
        raise ValueError("cannot track against an empty map")
    if not prev_poses:
        raise ValueError("tracking needs at least one previous pose")
    if len(prev_poses) >= 2:
        pose = predict_pose(prev_poses[-1], prev_poses[-2])
    else:
        pose = prev_poses[-1].copy()
    predicted = pose.copy()

    n_pixels = intr.width * intr.height
    state = make_state({"cam_translation": cfg.lr_cam_translation,
                        "cam_rotation": cfg.lr_cam_rotation})

    best_pose = pose.copy()
    best_loss = np.inf
    best_fraction = 0.0
    initial_loss = None
    for it in range(cfg.iters_track):
        out = render(gmap, pose, intr)
        try:
            loss = tracking_loss(out, frame, cfg)
        except NumericError:
            if it == 0:
                return TrackResult(pose=predicted, final_loss=float("inf"),
                                   iterations_used=0, masked_pixel_fraction=0.0,
                                   converged=False, failed=True)
            break
        fraction = loss.masked_pixel_count / n_pixels
        if it == 0:
            initial_loss = loss.total
            if fraction < MIN_MASK_FRACTION:
                return TrackResult(pose=predicted, final_loss=loss.total,
                                   iterations_used=0, masked_pixel_fraction=fraction,
                                   converged=False, failed=True)
        if loss.total < best_loss:
            best_loss = loss.total
            best_pose = pose.copy()
            best_fraction = fraction
        grads = backward(gmap, pose, intr, out, loss.pixel_grads,
                         want_map_grads=False)
        pose = apply_pose_step(pose, grads.d_translation, grads.d_rotation,
                               cfg.lr_cam_translation, cfg.lr_cam_rotation, state)
    return TrackResult(pose=best_pose, final_loss=best_loss,
                       iterations_used=cfg.iters_track,
                       masked_pixel_fraction=best_fraction,
                       converged=bool(best_loss < initial_loss))
