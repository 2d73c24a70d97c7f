"""Differentiable multi-channel splatting: forward render and analytic backward.

Forward pass
------------
Every Gaussian is projected to the image plane (center, pixel radius, camera
depth).  Pixels within ``cutoff_sigma * r2d`` of the projected center receive
a contribution with 2D influence

    f = sigma * exp(-|p - mu2d|^2 / (2 r2d^2)),   clamped to [0, 0.9999],

and each pixel composites its contributors front to back, sorted by camera
depth (storage index breaks exact ties):

    C = sum_i c_i f_i prod_{j<i} (1 - f_j)

The same weights composite appearance color, depth, semantic color, and the
silhouette (the value-1 channel, i.e. accumulated opacity).  The clamp keeps
every (1 - f) strictly positive so transmittances and gradients stay finite.

Contributor pairs are built by expanding per-Gaussian pixel bounding boxes
with the Gaussians pre-sorted by depth, then stably bucketing pairs by pixel;
each pixel then composites sequentially over its own segment.  A pixel's
output bits therefore depend only on its own sorted contributor list, which
makes renders bit-identical under storage permutations (no depth ties) and
under edits that do not touch the pixel's contributors.

Backward pass
-------------
Exact chain rule through compositing, the 2D influence, the projection, and
the rigid transform, treating the depth ordering and the footprint cutoff as
fixed topology.  Per-pixel loss gradients enter as one image per channel; out
come gradients for every Gaussian attribute plus the 6-dof camera pose: the
translation, and a rotation tangent that pivots camera coordinates about the
camera center (x_cam -> exp([phi]x) x_cam), matching the pose-step update.
Each pixel segment is walked back to front carrying the suffix mass, so the
accumulation order is fixed and gradients are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio
from ._kernels import build_sorted_pairs, composite_backward, composite_forward
from .camera import CameraPose, Intrinsics
from .errors import NumericError
from .scene import GaussianMap

INFLUENCE_CLAMP = 0.9999
DEFAULT_CUTOFF_SIGMA = 3.0
PREVIEW_MIN_TRANSMITTANCE = 1e-4


@dataclass
class RenderAux:
    """Retained compositing state for the backward pass.

    Pair arrays are sorted by (pixel, depth); ``trans`` is the transmittance
    in front of each contribution.  The per-Gaussian projection cache holds
    camera-frame positions and splatted quantities for the whole map.
    """

    pix: np.ndarray
    gidx: np.ndarray
    f: np.ndarray
    gexp: np.ndarray
    clamped: np.ndarray
    trans: np.ndarray
    xc: np.ndarray
    mu2d: np.ndarray
    r2d: np.ndarray
    depth: np.ndarray
    visible: np.ndarray
    map_count: int = 0
    pose_quat: np.ndarray = field(default_factory=lambda: np.zeros(4))
    pose_t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    cutoff_sigma: float = DEFAULT_CUTOFF_SIGMA
    preview: bool = False


@dataclass
class RenderOutput:
    """Composited channels plus retained per-pixel state."""

    color: np.ndarray       # H x W x 3 in [0,1]
    depth: np.ndarray       # H x W, meters
    semantic: np.ndarray    # H x W x 3 in [0,1]
    silhouette: np.ndarray  # H x W in [0,1]
    aux: RenderAux | None = None


@dataclass
class GradientSet:
    """Gradients for every Gaussian attribute group and the camera pose."""

    d_positions: np.ndarray
    d_log_radii: np.ndarray
    d_opacity_logits: np.ndarray
    d_colors: np.ndarray
    d_semantic_colors: np.ndarray
    d_translation: np.ndarray
    d_rotation: np.ndarray


def _project_all(gmap: GaussianMap, pose: CameraPose, intr: Intrinsics):
    """Camera-frame positions and splatted 2D quantities for every Gaussian."""
    r = pose.rotation_matrix()
    xc = gmap.positions @ r.T + pose.translation
    depth = xc[:, 2]
    visible = depth > 1e-8
    safe_d = np.where(visible, depth, 1.0)
    mu2d = np.stack([intr.fx * xc[:, 0] / safe_d + intr.cx,
                     intr.fy * xc[:, 1] / safe_d + intr.cy], axis=1)
    r2d = intr.fx * np.exp(gmap.log_radii) / safe_d
    mu2d[~visible] = 0.0
    r2d = np.where(visible, r2d, 0.0)
    return xc, depth, visible, mu2d, r2d


def _build_pairs(mu2d, r2d, depth, visible, sigma, cutoff_sigma, width, height):
    """Sorted (gaussian, pixel) contributor pairs plus their 2D influences.

    Gaussians go in depth order (storage index breaks exact ties), bounding
    boxes are scanned against the circular cutoff, and a stable counting sort
    by pixel leaves the list pixel-major with depth ascending per pixel.
    """
    cut = cutoff_sigma * r2d
    x0f = np.ceil(mu2d[:, 0] - cut)
    x1f = np.floor(mu2d[:, 0] + cut)
    y0f = np.ceil(mu2d[:, 1] - cut)
    y1f = np.floor(mu2d[:, 1] + cut)
    overlaps = visible & (x1f >= 0) & (x0f <= width - 1) & (y1f >= 0) & (y0f <= height - 1)
    x0 = np.clip(x0f, 0, width - 1).astype(np.int64)
    x1 = np.clip(x1f, 0, width - 1).astype(np.int64)
    y0 = np.clip(y0f, 0, height - 1).astype(np.int64)
    y1 = np.clip(y1f, 0, height - 1).astype(np.int64)
    order = np.argsort(depth, kind="stable")
    ids = order[overlaps[order]]
    if len(ids) == 0:
        return (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0),
                np.zeros(0), np.zeros(0, dtype=bool))
    return build_sorted_pairs(ids, x0, x1, y0, y1, mu2d, r2d, sigma,
                              cutoff_sigma, INFLUENCE_CLAMP, width,
                              width * height)


def render(gmap: GaussianMap, pose: CameraPose, intr: Intrinsics,
           cutoff_sigma: float = DEFAULT_CUTOFF_SIGMA,
           preview: bool = False) -> RenderOutput:
    """Render all four channels.  Deterministic for fixed inputs.

    ``preview=True`` stops compositing a pixel once its transmittance falls
    below 1e-4; it is for quick looks only, never for optimization (the
    differentiable path composites every contributor).
    """
    return render_channel_toggled(gmap, pose, intr, cutoff_sigma=cutoff_sigma,
                                  preview=preview)


def render_channel_toggled(gmap: GaussianMap, pose: CameraPose, intr: Intrinsics,
                           use_color: bool = True, use_depth: bool = True,
                           use_semantic: bool = True, use_silhouette: bool = True,
                           cutoff_sigma: float = DEFAULT_CUTOFF_SIGMA,
                           preview: bool = False) -> RenderOutput:
    """Render with per-channel toggles; disabled channels come back as zeros.

    All channels share projection, sorting, influence, and transmittance
    work, and each accumulates independently, so an enabled channel is
    bit-identical no matter how the others are toggled.
    """
    if not (use_color or use_depth or use_semantic or use_silhouette):
        raise ValueError("at least one channel must be enabled")
    gmap.validate_finite()
    xc, depth, visible, mu2d, r2d = _project_all(gmap, pose, intr)
    sigma = 1.0 / (1.0 + np.exp(-gmap.opacity_logits))
    pixel, gauss, f, gexp, clamped = _build_pairs(
        mu2d, r2d, depth, visible, sigma, cutoff_sigma, intr.width, intr.height)
    h, w = intr.height, intr.width
    color, sem, dep, sil, trans = composite_forward(
        pixel, gauss, f, gmap.colors, gmap.semantic_colors, depth, h * w,
        use_color, use_depth, use_semantic, use_silhouette,
        preview, PREVIEW_MIN_TRANSMITTANCE)
    aux = RenderAux(pix=pixel, gidx=gauss, f=f, gexp=gexp, clamped=clamped,
                    trans=trans, xc=xc, mu2d=mu2d, r2d=r2d, depth=depth,
                    visible=visible, map_count=gmap.count,
                    pose_quat=pose.quat.copy(), pose_t=pose.translation.copy(),
                    cutoff_sigma=cutoff_sigma, preview=preview)
    return RenderOutput(color=color.reshape(h, w, 3), depth=dep.reshape(h, w),
                        semantic=sem.reshape(h, w, 3), silhouette=sil.reshape(h, w),
                        aux=aux)


def backward(gmap: GaussianMap, pose: CameraPose, intr: Intrinsics,
             output: RenderOutput, loss_grads,
             want_map_grads: bool = True) -> GradientSet:
    """Pull per-pixel channel gradients back to Gaussian attributes and pose.

    ``loss_grads`` carries one gradient image per channel (see
    :class:`splatslam.losses.PixelGrads`).  ``output`` must come from
    :func:`render` on the same map/pose/intrinsics; a stale aux is rejected.
    With ``want_map_grads=False`` only the pose gradient is accumulated,
    which is all tracking needs.
    """
    aux = output.aux
    if aux is None:
        raise ValueError("output has no retained compositing state")
    if aux.map_count != gmap.count or not np.array_equal(aux.pose_quat, pose.quat) \
            or not np.array_equal(aux.pose_t, pose.translation):
        raise ValueError("aux state does not match the given map/pose")
    n = gmap.count
    grads = GradientSet(
        d_positions=np.zeros((n, 3)), d_log_radii=np.zeros(n),
        d_opacity_logits=np.zeros(n), d_colors=np.zeros((n, 3)),
        d_semantic_colors=np.zeros((n, 3)), d_translation=np.zeros(3),
        d_rotation=np.zeros(3))
    if len(aux.pix) == 0 or n == 0:
        return grads

    g_sigma, g_mux, g_muy, g_r2d, g_dval, g_colors, g_sem = composite_backward(
        aux.pix, aux.gidx, aux.f, aux.gexp, aux.trans, aux.clamped,
        gmap.colors, gmap.semantic_colors, aux.depth,
        np.ascontiguousarray(loss_grads.color.reshape(-1, 3)),
        np.ascontiguousarray(loss_grads.semantic.reshape(-1, 3)),
        np.ascontiguousarray(loss_grads.depth.reshape(-1)),
        np.ascontiguousarray(loss_grads.silhouette.reshape(-1)),
        aux.mu2d, aux.r2d, intr.width, n, want_map_grads)

    # chain through projection; all factors here are per-Gaussian constants
    vis = aux.visible
    zc = np.where(vis, aux.depth, 1.0)
    radius = np.exp(gmap.log_radii)
    g_xc = np.zeros((n, 3))
    g_xc[:, 0] = g_mux * intr.fx / zc
    g_xc[:, 1] = g_muy * intr.fy / zc
    g_xc[:, 2] = (-g_mux * intr.fx * aux.xc[:, 0] / zc ** 2
                  - g_muy * intr.fy * aux.xc[:, 1] / zc ** 2
                  - g_r2d * intr.fx * radius / zc ** 2
                  + g_dval)
    g_xc[~vis] = 0.0

    # rotation tangent pivots about the camera center: x_cam -> exp([phi]x) x_cam
    grads.d_translation = g_xc.sum(axis=0)
    grads.d_rotation = np.cross(aux.xc, g_xc).sum(axis=0)

    if want_map_grads:
        grads.d_positions = g_xc @ pose.rotation_matrix()
        grads.d_log_radii = g_r2d * aux.r2d
        sigma = 1.0 / (1.0 + np.exp(-gmap.opacity_logits))
        grads.d_opacity_logits = g_sigma * sigma * (1.0 - sigma)
        grads.d_colors = g_colors
        grads.d_semantic_colors = g_sem

    for arr in (grads.d_positions, grads.d_translation, grads.d_rotation):
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite gradients in backward pass")
    return grads


def export_channels(output: RenderOutput, directory: str | Path, stem: str,
                    depth_scale: float = 1.0 / 5000.0) -> list[Path]:
    """Write the four channels as image files.

    Color and semantic go out as 8-bit RGB, the silhouette as 8-bit gray,
    and depth as 16-bit gray in units of ``depth_scale`` meters (default
    0.2 mm per unit).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, writer, img in (
        ("color", imageio.save_rgb8, output.color),
        ("semantic", imageio.save_rgb8, output.semantic),
        ("silhouette", imageio.save_gray8, output.silhouette),
        ("depth", imageio.save_gray16, output.depth / depth_scale),
    ):
        path = directory / f"{stem}_{name}.png"
        writer(path, img)
        paths.append(path)
    return paths
