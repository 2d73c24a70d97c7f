"""Tracking and mapping losses with per-pixel gradients for the backward pass.

The tracking loss is a silhouette-masked pixel sum of per-channel L1 terms;
mapping combines an L1 depth sum with a weighted L1/(1-SSIM) image loss on
the color and semantic channels, all scaled by the view's uncertainty weight.
Stored term fields already include the uncertainty factor, so
``total = lambda_d * depth_term + lambda_c * color_term + lambda_s * semantic_term``
recomposes exactly for both stages.

SSIM uses an 11x11 Gaussian window (stddev 1.5), constants C1 = 0.01^2 and
C2 = 0.03^2 on unit dynamic range, and is evaluated over valid window
positions only (windows fully inside the image).  The L1 subgradient at an
exactly-zero residual is taken as 0, so a perfect render has an identically
zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .errors import NumericError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class PixelGrads:
    """One gradient image per rendered channel; the rasterizer's backward input."""

    color: np.ndarray
    depth: np.ndarray
    semantic: np.ndarray
    silhouette: np.ndarray

    @staticmethod
    def zeros(height: int, width: int) -> "PixelGrads":
        return PixelGrads(color=np.zeros((height, width, 3)),
                          depth=np.zeros((height, width)),
                          semantic=np.zeros((height, width, 3)),
                          silhouette=np.zeros((height, width)))


@dataclass
class LossBreakdown:
    """Scalar losses plus their per-pixel gradients.

    Term fields carry the uncertainty factor (1 for tracking), so the total
    is exactly the lambda-weighted sum of the stored terms.
    """

    total: float
    depth_term: float
    color_term: float
    semantic_term: float
    pixel_grads: PixelGrads
    masked_pixel_count: int


def _gauss_kernel_1d() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=float)
    k = np.exp(-(x ** 2) / (2.0 * SSIM_SIGMA ** 2))
    return k / k.sum()


_K1D = _gauss_kernel_1d()


def _corr_valid(img: np.ndarray) -> np.ndarray:
    """Separable Gaussian correlation, valid region only."""
    from numpy.lib.stride_tricks import sliding_window_view
    tmp = sliding_window_view(img, SSIM_WINDOW, axis=0) @ _K1D
    return sliding_window_view(tmp, SSIM_WINDOW, axis=1) @ _K1D


def _corr_adjoint(v: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Adjoint of :func:`_corr_valid`: zero-pad and correlate (kernel is symmetric)."""
    pad = SSIM_WINDOW - 1
    padded = np.zeros((v.shape[0] + 2 * pad, v.shape[1] + 2 * pad))
    padded[pad:pad + v.shape[0], pad:pad + v.shape[1]] = v
    out = _corr_valid(padded)
    assert out.shape == out_shape
    return out


def _ssim_single(x: np.ndarray, y: np.ndarray, want_grad: bool):
    """Mean SSIM over valid windows of one channel, plus d(meanSSIM)/dx."""
    mu_x = _corr_valid(x)
    mu_y = _corr_valid(y)
    xx = _corr_valid(x * x)
    yy = _corr_valid(y * y)
    xy = _corr_valid(x * y)
    var_x = xx - mu_x ** 2
    var_y = yy - mu_y ** 2
    cov = xy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * cov + SSIM_C2
    b1 = mu_x ** 2 + mu_y ** 2 + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    mean = float(s.mean())
    if not want_grad:
        return mean, None
    u = np.full(s.shape, 1.0 / s.size)
    us = u * s
    # partials of S wrt the window statistics, routed through the adjoint
    t_mu = us * (2.0 * mu_y / a1 - 2.0 * mu_x / b1 - 2.0 * mu_y / a2 + 2.0 * mu_x / b2)
    t_xx = -us / b2
    t_xy = 2.0 * us / a2
    grad = (_corr_adjoint(t_mu, x.shape)
            + 2.0 * x * _corr_adjoint(t_xx, x.shape)
            + y * _corr_adjoint(t_xy, x.shape))
    return mean, grad


def ssim_value_and_grad(rendered: np.ndarray, target: np.ndarray,
                        want_grad: bool = True):
    """Mean SSIM (channel-averaged for RGB) and its gradient w.r.t. ``rendered``."""
    rendered = np.asarray(rendered, dtype=float)
    target = np.asarray(target, dtype=float)
    if rendered.shape != target.shape:
        raise ValueError("image dimensions must match")
    if rendered.shape[0] < SSIM_WINDOW or rendered.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels per side")
    if rendered.ndim == 2:
        return _ssim_single(rendered, target, want_grad)
    values = []
    grad = np.zeros_like(rendered) if want_grad else None
    for c in range(rendered.shape[2]):
        v, g = _ssim_single(rendered[..., c], target[..., c], want_grad)
        values.append(v)
        if want_grad:
            grad[..., c] = g / rendered.shape[2]
    return float(np.mean(values)), grad


def weighted_ssim_l1(rendered: np.ndarray, target: np.ndarray, alpha: float):
    """alpha * mean L1  +  (1 - alpha) * (1 - SSIM), with the gradient.

    Returns ``(value, grad)`` where ``grad`` has the shape of ``rendered``.
    """
    rendered = np.asarray(rendered, dtype=float)
    target = np.asarray(target, dtype=float)
    if rendered.shape != target.shape:
        raise ValueError("image dimensions must match")
    diff = rendered - target
    l1 = float(np.abs(diff).mean())
    grad = alpha * np.sign(diff) / diff.size
    if alpha < 1.0:
        ssim_mean, ssim_grad = ssim_value_and_grad(rendered, target)
        value = alpha * l1 + (1.0 - alpha) * (1.0 - ssim_mean)
        grad = grad - (1.0 - alpha) * ssim_grad
    else:
        value = l1
    return value, grad


def tracking_loss(out, frame, cfg: PipelineConfig) -> LossBreakdown:
    """Masked L1 pixel sum over the depth, color, and semantic channels.

    The mask keeps pixels whose rendered silhouette exceeds the tracking
    threshold (well-explained by the map) and whose observed depth is valid.
    The silhouette ablation drops the threshold and keeps only the depth
    validity condition.  Raises if the mask is empty: the loss is undefined
    there and the caller falls back to the predicted pose.
    """
    if out.depth.shape != frame.depth.shape:
        raise ValueError("render/frame dimensions must match")
    h, w = frame.depth.shape
    valid = np.isfinite(frame.depth) & (frame.depth > 0)
    if cfg.use_silhouette_mask:
        mask = (out.silhouette > cfg.t_sil_track) & valid
    else:
        mask = valid
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise NumericError("tracking mask is empty")
    lam_d, lam_c, lam_s = cfg.lambdas("track")
    grads = PixelGrads.zeros(h, w)
    m3 = mask[:, :, None]

    depth_term = color_term = semantic_term = 0.0
    if cfg.use_depth:
        diff = out.depth - frame.depth
        depth_term = float(np.abs(np.where(mask, diff, 0.0)).sum())
        grads.depth = lam_d * np.where(mask, np.sign(diff), 0.0)
    if cfg.use_color:
        diff = out.color - frame.color
        color_term = float(np.abs(np.where(m3, diff, 0.0)).sum())
        grads.color = lam_c * np.where(m3, np.sign(diff), 0.0)
    if cfg.use_semantic:
        diff = out.semantic - frame.semantic
        semantic_term = float(np.abs(np.where(m3, diff, 0.0)).sum())
        grads.semantic = lam_s * np.where(m3, np.sign(diff), 0.0)
    total = lam_d * depth_term + lam_c * color_term + lam_s * semantic_term
    return LossBreakdown(total=total, depth_term=depth_term, color_term=color_term,
                         semantic_term=semantic_term, pixel_grads=grads,
                         masked_pixel_count=count)


def mapping_loss(out, frame, uncertainty: float, cfg: PipelineConfig) -> LossBreakdown:
    """Uncertainty-weighted mapping loss.

    Depth: L1 summed over valid-depth pixels.  Color and semantic: the
    weighted L1/SSIM image loss over the full frame.  Every term and every
    gradient scales linearly with ``uncertainty``.
    """
    if out.depth.shape != frame.depth.shape:
        raise ValueError("render/frame dimensions must match")
    if not (0.0 < uncertainty <= 1.0):
        raise ValueError("uncertainty must lie in (0, 1]")
    h, w = frame.depth.shape
    lam_d, lam_c, lam_s = cfg.lambdas("map")
    grads = PixelGrads.zeros(h, w)
    valid = np.isfinite(frame.depth) & (frame.depth > 0)
    count = int(np.count_nonzero(valid))

    depth_term = color_term = semantic_term = 0.0
    if cfg.use_depth:
        diff = out.depth - frame.depth
        depth_term = uncertainty * float(np.abs(np.where(valid, diff, 0.0)).sum())
        grads.depth = uncertainty * lam_d * np.where(valid, np.sign(diff), 0.0)
    if cfg.use_color:
        value, grad = weighted_ssim_l1(out.color, frame.color, cfg.alpha_ssim)
        color_term = uncertainty * value
        grads.color = uncertainty * lam_c * grad
    if cfg.use_semantic:
        value, grad = weighted_ssim_l1(out.semantic, frame.semantic, cfg.alpha_ssim)
        semantic_term = uncertainty * value
        grads.semantic = uncertainty * lam_s * grad
    total = lam_d * depth_term + lam_c * color_term + lam_s * semantic_term
    return LossBreakdown(total=total, depth_term=depth_term, color_term=color_term,
                         semantic_term=semantic_term, pixel_grads=grads,
                         masked_pixel_count=count)
