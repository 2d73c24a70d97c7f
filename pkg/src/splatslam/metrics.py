"""Evaluation metrics: PSNR, SSIM, depth L1, trajectory error, and mIoU.

Conventions worth pinning down: PSNR is capped at a 99 dB sentinel (exact
matches would be infinite); depth L1 is reported in centimeters over pixels
where both maps are valid; ATE compares camera centers and by default does
not align the trajectories (the pipeline anchors the first pose to the
identity), with an optional closed-form rigid alignment; mIoU averages IoU
over the labels present in the ground truth, excluding the background label.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraPose
from .scene import SemanticPalette

PSNR_CAP_DB = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for unit-range images, capped at 99 dB."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("image dimensions must match")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM, sharing the loss module's kernel (one definition system-wide)."""
    from .losses import ssim_value_and_grad
    return ssim_value_and_grad(a, b, want_grad=False)[0]


def depth_l1(a: np.ndarray, b: np.ndarray) -> float:
    """Mean |a - b| in centimeters over jointly valid pixels."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("depth dimensions must match")
    valid = np.isfinite(a) & (a > 0) & np.isfinite(b) & (b > 0)
    if not np.any(valid):
        raise ValueError("no jointly valid depth pixels")
    return float(np.abs(a[valid] - b[valid]).mean()) * 100.0


def _centers(traj) -> np.ndarray:
    out = []
    for p in traj:
        out.append(p.camera_center() if isinstance(p, CameraPose) else np.asarray(p, dtype=float))
    return np.stack(out)


def _rigid_align(src: np.ndarray, dst: np.ndarray):
    """Closed-form least-squares rotation + translation mapping src onto dst."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = mu_d - r @ mu_s
    return r, t


def ate(est, gt, align: bool = False) -> tuple[float, float]:
    """(mean, RMSE) of per-frame translation errors, in centimeters.

    Accepts poses or plain 3-vectors of camera centers.  With ``align`` the
    estimate is first mapped onto the ground truth by the closed-form rigid
    least-squares fit.
    """
    if len(est) != len(gt):
        raise ValueError("trajectory lengths must match")
    if len(est) == 0:
        raise ValueError("empty trajectories")
    p_est = _centers(est)
    p_gt = _centers(gt)
    if align:
        r, t = _rigid_align(p_est, p_gt)
        p_est = p_est @ r.T + t
    err = np.linalg.norm(p_est - p_gt, axis=1)
    return float(err.mean()) * 100.0, float(np.sqrt(np.mean(err ** 2))) * 100.0


def miou(pred, gt, palette: SemanticPalette) -> float:
    """Mean IoU over ground-truth labels, background excluded.

    ``pred`` and ``gt`` may be integer label images or RGB semantic images
    (snapped to the palette first).  Labels absent from the ground truth are
    ignored; a label present in the ground truth but nowhere in the
    prediction scores 0 for that label.
    """
    pred = _as_labels(pred, palette)
    gt = _as_labels(gt, palette)
    if pred.shape != gt.shape:
        raise ValueError("label image dimensions must match")
    background = palette.background_id
    labels = [int(l) for l in np.unique(gt) if int(l) != background]
    if not labels:
        raise ValueError("ground truth contains no foreground labels")
    ious = []
    for lid in labels:
        p = pred == lid
        g = gt == lid
        union = np.count_nonzero(p | g)
        inter = np.count_nonzero(p & g)
        ious.append(inter / union if union else 0.0)
    return float(np.mean(ious))


def _as_labels(img, palette: SemanticPalette) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[-1] == 3:
        return palette.nearest_ids(img.astype(float))
    return img.astype(np.int64)


@dataclass
class EvalReport:
    """Per-frame render metrics plus trajectory-level errors."""

    rows: list[dict] = field(default_factory=list)  # frame, psnr, ssim, depth_l1, miou
    ate_mean_cm: float = float("nan")
    ate_rmse_cm: float = float("nan")

    def add_frame(self, frame: int, psnr_db: float, ssim_val: float,
                  depth_cm: float, miou_val: float | None) -> None:
        self.rows.append({"frame": frame, "psnr": psnr_db, "ssim": ssim_val,
                          "depth_l1": depth_cm, "miou": miou_val})

    def aggregate(self, key: str) -> float:
        vals = [r[key] for r in self.rows if r[key] is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["frame", "psnr", "ssim",
                                                    "depth_l1", "miou"])
            writer.writeheader()
            for row in self.rows:
                out = dict(row)
                if out["miou"] is None:
                    out["miou"] = "n/a"
                writer.writerow(out)

    def summary_table(self) -> str:
        def fmt(v, unit=""):
            return "   n/a" if v is None or np.isnan(v) else f"{v:6.3f}{unit}"

        lines = [
            "metric              value",
            "-------------------------",
            f"PSNR [dB]          {fmt(self.aggregate('psnr'))}",
            f"SSIM               {fmt(self.aggregate('ssim'))}",
            f"Depth L1 [cm]      {fmt(self.aggregate('depth_l1'))}",
        ]
        miou_avg = self.aggregate("miou")
        lines.append(f"mIoU               {fmt(miou_avg)}")
        lines.append(f"ATE mean [cm]      {fmt(self.ate_mean_cm)}")
        lines.append(f"ATE RMSE [cm]      {fmt(self.ate_rmse_cm)}")
        return "\n".join(lines)
