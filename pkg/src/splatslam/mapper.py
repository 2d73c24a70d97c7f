"""Map reconstruction: densification plus multi-view attribute optimization.

Each mapped frame first builds a densification mask (pixels the map cannot
yet explain: silhouette below the mapping threshold, or observed depth
clearly in front of the rendered surface) and spawns one Gaussian per masked
pixel.  The five attribute groups are then optimized for a fixed number of
iterations, cycling round-robin through the current frame and its selected
keyframes, each view weighted by its uncertainty.  Camera poses are never
touched here.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraPose, Intrinsics
from .config import PipelineConfig
from .dataset import Frame
from .keyframes import KeyframeRecord
from .losses import mapping_loss
from .optim import OptimizerState, step
from .rasterizer import backward, render
from .scene import GaussianMap, SemanticPalette, concatenate, spawn_from_pixels

REASON_NONE = 0
REASON_LOW_SILHOUETTE = 1
REASON_NEW_GEOMETRY = 2

MAP_GROUPS = ("positions", "log_radii", "opacity_logits", "colors", "semantic_colors")


@dataclass
class DensifyMask:
    """Pixel mask with the clause that fired (low silhouette wins ties)."""

    mask: np.ndarray
    reason: np.ndarray

    def count(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass
class MapStats:
    gaussians_added: int = 0
    final_loss: float = float("nan")
    depth_term: float = float("nan")
    color_term: float = float("nan")
    semantic_term: float = float("nan")
    iteration_losses: list[float] = field(default_factory=list)


def densify_mask(out, frame: Frame, cfg: PipelineConfig) -> DensifyMask:
    """Pixels needing new Gaussians.

    A valid-depth pixel is masked when the rendered silhouette is below the
    mapping threshold, or when the observed depth sits in front of the
    rendered depth by more than ``depth_add_margin`` (relative), which
    signals new geometry occluding the current map.
    """
    if out.depth.shape != frame.depth.shape:
        raise ValueError("render/frame dimensions must match")
    valid = np.isfinite(frame.depth) & (frame.depth > 0)
    low_sil = valid & (out.silhouette < cfg.t_sil_map)
    in_front = valid & (frame.depth < out.depth) \
        & ((out.depth - frame.depth) > cfg.depth_add_margin * frame.depth)
    reason = np.zeros(frame.depth.shape, dtype=np.uint8)
    reason[in_front] = REASON_NEW_GEOMETRY
    reason[low_sil] = REASON_LOW_SILHOUETTE
    return DensifyMask(mask=low_sil | in_front, reason=reason)


def map_params(gmap: GaussianMap) -> dict[str, np.ndarray]:
    return {"positions": gmap.positions, "log_radii": gmap.log_radii,
            "opacity_logits": gmap.opacity_logits, "colors": gmap.colors,
            "semantic_colors": gmap.semantic_colors}


def make_map_optimizer(cfg: PipelineConfig) -> OptimizerState:
    from .optim import make_state
    return make_state({"positions": cfg.lr_pos, "log_radii": cfg.lr_logscale,
                       "opacity_logits": cfg.lr_opacity_logit,
                       "colors": cfg.lr_color, "semantic_colors": cfg.lr_semantic})


def map_frame(gmap: GaussianMap, frame: Frame, pose: CameraPose,
              selected: list[KeyframeRecord], cfg: PipelineConfig,
              intr: Intrinsics, opt_state: OptimizerState,
              palette: SemanticPalette, current_uncertainty: float = 1.0,
              ) -> tuple[GaussianMap, MapStats]:
    """Densify from the current view, then optimize attributes over all views.

    Returns the updated map (the input map object is not mutated) and the
    per-frame stats.  The view schedule is deterministic: current frame,
    then the selected keyframes, round-robin.
    """
    stats = MapStats()
    out = render(gmap, pose, intr) if gmap.count else None
    if out is None:
        mask = DensifyMask(mask=frame.valid_depth(),
                           reason=np.where(frame.valid_depth(),
                                           REASON_LOW_SILHOUETTE, REASON_NONE).astype(np.uint8))
    else:
        mask = densify_mask(out, frame, cfg)
    if mask.count():
        delta = spawn_from_pixels(frame, pose, intr, mask.mask, palette)
        gmap = concatenate(gmap, delta)
        for group in MAP_GROUPS:
            opt_state.extend(group, delta.count)
        stats.gaussians_added = delta.count
    else:
        gmap = gmap.copy()

    views = [(frame, pose, current_uncertainty)] + \
        [(r.frame, r.pose, r.uncertainty if cfg.use_uncertainty else 1.0)
         for r in selected]

    params = map_params(gmap)
    for it in range(cfg.iters_map):
        vframe, vpose, vweight = views[it % len(views)]
        out = render(gmap, vpose, intr)
        loss = mapping_loss(out, vframe, vweight, cfg)
        stats.iteration_losses.append(loss.total)
        grads = backward(gmap, vpose, intr, out, loss.pixel_grads)
        gmap_grads = {"positions": grads.d_positions, "log_radii": grads.d_log_radii,
                      "opacity_logits": grads.d_opacity_logits,
                      "colors": grads.d_colors, "semantic_colors": grads.d_semantic_colors}
        params = step(params, gmap_grads, opt_state)
        # colors live in [0,1]; project back after the unconstrained step
        np.clip(params["colors"], 0.0, 1.0, out=params["colors"])
        np.clip(params["semantic_colors"], 0.0, 1.0, out=params["semantic_colors"])
        gmap = GaussianMap(**params)
        params = map_params(gmap)

    final = render(gmap, pose, intr)
    loss = mapping_loss(final, frame, current_uncertainty, cfg)
    stats.final_loss = loss.total
    stats.depth_term = loss.depth_term
    stats.color_term = loss.color_term
    stats.semantic_term = loss.semantic_term
    return gmap, stats


def write_mapping_stats_csv(path: str | Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
