"""Keyframe capture, two-level geometric + semantic selection, and
uncertainty weighting.

Keyframes are captured at a fixed frame interval.  For mapping, candidates
associated with the current frame pass two filters: a geometric one (enough
of the current view's surface must project into the keyframe) and a semantic
one (keyframes whose label image nearly duplicates the current one are
dropped, preferring diverse viewpoints).  Survivors are uniformly subsampled
to the keyframe budget with a seeded generator.  Each keyframe carries the
uncertainty weight U(t) = exp(-tau * t): later frames inherit more
accumulated tracking drift, so their observations count for less during map
optimization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraPose, Intrinsics
from .config import PipelineConfig
from .dataset import Frame
from .metrics import miou
from .scene import GaussianMap, SemanticPalette

SAMPLE_PIXELS = 512
_EDGE_TOL = 1e-6  # float guard so a point re-projecting onto its own pixel counts


def uncertainty(t: float, tau: float) -> float:
    """U(t) = exp(-tau t); tau = 0 disables the weighting."""
    if t < 0 or tau < 0:
        raise ValueError("t and tau must be non-negative")
    return float(np.exp(-tau * t))


@dataclass
class KeyframeRecord:
    frame: Frame
    pose: CameraPose
    timestamp: int
    uncertainty: float


@dataclass
class KeyframeStore:
    """Keyframes captured at constant intervals, in timestamp order."""

    interval: int
    records: list[KeyframeRecord] = field(default_factory=list)

    def should_capture(self, timestamp: int) -> bool:
        return timestamp % self.interval == 0

    def add(self, frame: Frame, pose: CameraPose, tau: float) -> KeyframeRecord | None:
        if not self.should_capture(frame.timestamp):
            return None
        if self.records and frame.timestamp <= self.records[-1].timestamp:
            raise ValueError("keyframe timestamps must be strictly increasing")
        rec = KeyframeRecord(frame=frame, pose=pose.copy(), timestamp=frame.timestamp,
                             uncertainty=uncertainty(frame.timestamp, tau))
        self.records.append(rec)
        return rec


def overlap_ratio(samples: np.ndarray, kf_pose: CameraPose, intr: Intrinsics) -> float:
    """Fraction of world points that project inside the keyframe's view."""
    samples = np.asarray(samples, dtype=float).reshape(-1, 3)
    if len(samples) == 0:
        raise ValueError("overlap_ratio needs a nonempty sample set")
    xc = kf_pose.transform(samples)
    d = xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * xc[:, 0] / d + intr.cx
        v = intr.fy * xc[:, 1] / d + intr.cy
    inside = (d > 0) & (u >= -_EDGE_TOL) & (u < intr.width) \
        & (v >= -_EDGE_TOL) & (v < intr.height)
    return float(np.count_nonzero(inside)) / float(len(samples))


def surface_samples(frame: Frame, pose: CameraPose, intr: Intrinsics,
                    rendered_depth: np.ndarray, rng: np.random.Generator,
                    n_samples: int = SAMPLE_PIXELS) -> np.ndarray:
    """World points behind randomly sampled pixels of the current view.

    Each sampled pixel's rendered depth (the expected surface along that ray)
    is back-projected into world coordinates; pixels the map does not cover
    yet are skipped.  Well defined even where many Gaussians overlap.
    """
    h, w = rendered_depth.shape
    idx = rng.integers(0, h * w, size=n_samples)
    rows, cols = idx // w, idx % w
    z = rendered_depth[rows, cols]
    keep = z > 1e-6
    rows, cols, z = rows[keep], cols[keep], z[keep]
    if len(z) == 0:
        return np.zeros((0, 3))
    x_cam = np.stack([(cols - intr.cx) / intr.fx * z,
                      (rows - intr.cy) / intr.fy * z, z], axis=1)
    r = pose.rotation_matrix()
    return (x_cam - pose.translation) @ r


@dataclass
class SelectionDiagnostics:
    rows: list[dict] = field(default_factory=list)


def select_keyframes(store: KeyframeStore, frame: Frame, pose: CameraPose,
                     gmap: GaussianMap, palette: SemanticPalette | None,
                     cfg: PipelineConfig, intr: Intrinsics, seed: int,
                     rendered_depth: np.ndarray | None = None,
                     diagnostics: SelectionDiagnostics | None = None) -> list[KeyframeRecord]:
    """Keyframes associated with the current frame, filtered and subsampled.

    Steps: sample surface points of the current view; drop keyframes with
    geometric overlap below ``t_geo``; drop keyframes whose label image
    overlaps the current one with mIoU above ``t_sem``; uniformly subsample
    the survivors down to ``max_keyframes``.  Deterministic for a fixed seed.
    The record matching the current timestamp is never a candidate (the
    current frame always participates in mapping on its own).
    """
    candidates = [r for r in store.records if r.timestamp != frame.timestamp]
    if not candidates:
        return []
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5E1E, int(frame.timestamp)]))

    samples = np.zeros((0, 3))
    if cfg.use_geo and gmap.count > 0:
        if rendered_depth is None:
            from .rasterizer import render_channel_toggled
            rendered_depth = render_channel_toggled(
                gmap, pose, intr, use_color=False, use_semantic=False).depth
        samples = surface_samples(frame, pose, intr, rendered_depth, rng)

    current_labels = None
    if cfg.use_sem and cfg.use_semantic and palette is not None:
        current_labels = palette.nearest_ids(frame.semantic)

    survivors = []
    for rec in candidates:
        eta = np.nan
        overlap_miou = np.nan
        keep = True
        if cfg.use_geo and len(samples) > 0:
            eta = overlap_ratio(samples, rec.pose, intr)
            keep = eta >= cfg.t_geo
        if keep and current_labels is not None:
            overlap_miou = miou(palette.nearest_ids(rec.frame.semantic),
                                current_labels, palette)
            keep = overlap_miou <= cfg.t_sem
        if diagnostics is not None:
            diagnostics.rows.append({
                "frame": frame.timestamp, "keyframe": rec.timestamp,
                "eta": eta, "miou": overlap_miou,
                "uncertainty": rec.uncertainty, "selected": keep})
        if keep:
            survivors.append(rec)

    if len(survivors) > cfg.max_keyframes:
        chosen = rng.choice(len(survivors), size=cfg.max_keyframes, replace=False)
        survivors = [survivors[i] for i in sorted(chosen)]
    return survivors


def write_keyframe_csv(path: str | Path, diagnostics: SelectionDiagnostics) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["frame", "keyframe", "eta", "miou",
                                                "uncertainty", "selected"])
        writer.writeheader()
        writer.writerows(diagnostics.rows)
