"""Shared test fixtures and scene builders."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from splatslam.camera import CameraPose, Intrinsics
from splatslam.scene import GaussianMap


def small_intrinsics(size: int = 16, focal: float | None = None) -> Intrinsics:
    focal = focal if focal is not None else float(size)
    return Intrinsics(fx=focal, fy=focal * 1.04, cx=(size - 1) / 2.0,
                      cy=(size - 1) / 2.0, width=size, height=size)


def random_scene(seed: int, n: int = 20, intr: Intrinsics | None = None,
                 depth_gap: float = 0.02) -> tuple[GaussianMap, Intrinsics]:
    """A random well-separated scene for gradient and compositing tests.

    Depths are spread out so no two Gaussians tie (the depth sort is then
    storage-order independent) and opacities stay clear of the influence
    clamp, keeping the rendered function smooth around the sample point.
    """
    rng = np.random.default_rng(seed)
    intr = intr or small_intrinsics()
    z = np.linspace(1.5, 4.0, n) + rng.uniform(-0.3, 0.3, n) * (2.5 / n)
    z.sort()
    z += np.arange(n) * depth_gap  # enforce pairwise gaps
    half_x = 0.5 * intr.width / intr.fx
    half_y = 0.5 * intr.height / intr.fy
    pos = np.stack([
        rng.uniform(-0.9 * half_x, 0.9 * half_x, n) * z,
        rng.uniform(-0.9 * half_y, 0.9 * half_y, n) * z,
        z,
    ], axis=1)
    # pixel radii roughly in [0.8, 2.5]
    r2d = rng.uniform(0.8, 2.5, n)
    radii = r2d * z / intr.fx
    gmap = GaussianMap(
        positions=pos,
        log_radii=np.log(radii),
        opacity_logits=rng.uniform(-2.0, 2.0, n),
        colors=rng.uniform(0.05, 0.95, (n, 3)),
        semantic_colors=rng.uniform(0.05, 0.95, (n, 3)),
    )
    return gmap, intr


def random_pose(seed: int, max_angle: float = 0.15, max_shift: float = 0.1) -> CameraPose:
    from splatslam.camera import quat_exp
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    q = quat_exp(axis * rng.uniform(0, max_angle))
    return CameraPose(q, rng.uniform(-max_shift, max_shift, 3))


@dataclasses.dataclass
class ChannelGrads:
    """Stand-in for losses.PixelGrads in low-level rasterizer tests."""

    color: np.ndarray
    depth: np.ndarray
    semantic: np.ndarray
    silhouette: np.ndarray


def random_channel_grads(seed: int, intr: Intrinsics) -> ChannelGrads:
    rng = np.random.default_rng(seed)
    h, w = intr.height, intr.width
    return ChannelGrads(
        color=rng.normal(size=(h, w, 3)),
        depth=rng.normal(size=(h, w)),
        semantic=rng.normal(size=(h, w, 3)),
        silhouette=rng.normal(size=(h, w)),
    )


def render_dot(gmap, pose, intr, grads, cutoff_sigma):
    """<loss_grads, render(...)>: the linear objective used for FD checks."""
    from splatslam.rasterizer import render
    out = render(gmap, pose, intr, cutoff_sigma=cutoff_sigma)
    return ((grads.color * out.color).sum() + (grads.depth * out.depth).sum()
            + (grads.semantic * out.semantic).sum()
            + (grads.silhouette * out.silhouette).sum())


def max_relative_error(analytic: np.ndarray, fd: np.ndarray,
                       floor: float = 1e-6) -> float:
    return float((np.abs(analytic - fd) / np.maximum(np.abs(fd), floor)).max())


def check_scene_gradients(seed: int, n: int = 20, h: float = 1e-4,
                          cutoff_sigma: float = 8.0) -> float:
    """Worst relative error of every analytic gradient group vs central FD.

    The objective is a random linear functional of all four channels.  The
    wide cutoff keeps the differenced objective continuous (the footprint
    truncation jump is far below double precision there); everything else is
    the production render path.
    """
    from splatslam.camera import quat_exp, quat_multiply, quat_normalize
    from splatslam.optim import finite_diff_grad
    from splatslam.rasterizer import backward, render

    gmap, intr = random_scene(seed, n=n)
    grads_img = random_channel_grads(seed + 1, intr)
    pose = random_pose(seed + 2)
    out = render(gmap, pose, intr, cutoff_sigma=cutoff_sigma)
    analytic = backward(gmap, pose, intr, out, grads_img)
    worst = 0.0
    for attr in ("positions", "log_radii", "opacity_logits", "colors",
                 "semantic_colors"):
        base = getattr(gmap, attr).copy()

        def objective(flat, attr=attr, shape=base.shape):
            m = gmap.copy()
            setattr(m, attr, flat.reshape(shape))
            return render_dot(m, pose, intr, grads_img, cutoff_sigma)

        fd = finite_diff_grad(objective, base, h)
        worst = max(worst, max_relative_error(getattr(analytic, "d_" + attr), fd))

    def pose_objective(v):
        # rotation pivots about the camera center: x' = exp([v_r]x)(Rx + t) + v_t
        from splatslam.camera import quat_to_matrix
        dq = quat_exp(v[3:])
        perturbed = type(pose)(
            quat_normalize(quat_multiply(dq, pose.quat)),
            quat_to_matrix(dq) @ pose.translation + v[:3])
        return render_dot(gmap, perturbed, intr, grads_img, cutoff_sigma)

    fd_pose = finite_diff_grad(pose_objective, np.zeros(6), h)
    analytic_pose = np.concatenate([analytic.d_translation, analytic.d_rotation])
    worst = max(worst, max_relative_error(analytic_pose, fd_pose))
    return worst


@pytest.fixture(scope="session")
def desk_scene():
    """A small synthetic room shared by the heavier integration tests.

    The arc keeps per-frame motion at the regime the 60-frame default
    sequence uses.
    """
    from splatslam.dataset import generate_synthetic
    return generate_synthetic(seed=7, frame_count=12, resolution=48,
                              object_count=3, style="orbit", arc_deg=12.0)
