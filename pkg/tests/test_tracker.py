import dataclasses
import math

import numpy as np
import pytest

from splatslam.camera import (CameraPose, quat_conjugate, quat_exp, quat_log,
                              quat_multiply, quat_normalize, quat_to_matrix)
from splatslam.config import PipelineConfig
from splatslam.rasterizer import render
from splatslam.tracker import track_frame
from splatslam.dataset import Frame, generate_synthetic
from splatslam.scene import GaussianMap


def perturb_pose(pose: CameraPose, center_shift, rotvec) -> CameraPose:
    """Move the camera center and turn the view (about-center rotation)."""
    dq = quat_exp(rotvec)
    q2 = quat_normalize(quat_multiply(dq, pose.quat))
    t2 = quat_to_matrix(dq) @ pose.translation
    return CameraPose(q2, t2 - quat_to_matrix(q2) @ np.asarray(center_shift))


def pose_errors(a: CameraPose, b: CameraPose):
    e_t = float(np.linalg.norm(a.camera_center() - b.camera_center()))
    e_r = float(np.linalg.norm(quat_log(quat_multiply(a.quat, quat_conjugate(b.quat)))))
    return e_t, math.degrees(e_r)


@pytest.fixture(scope="module")
def track_scene():
    return generate_synthetic(seed=11, frame_count=8, resolution=64)


def _frame_from_map(scene, t):
    """A frame the map can reproduce exactly (its own render)."""
    out = render(scene.gmap, scene.trajectory[t], scene.intrinsics)
    return Frame(color=out.color.copy(), depth=out.depth.copy(),
                 semantic=out.semantic.copy(), timestamp=t)


def test_exact_fixed_point(track_scene):
    """Initialized at the truth with a self-rendered frame: loss 0, pose kept."""
    scene = track_scene
    cfg = PipelineConfig()
    t = 2
    frame = _frame_from_map(scene, t)
    true_pose = scene.trajectory[t]
    res = track_frame(scene.gmap, frame, [true_pose], cfg, scene.intrinsics)
    assert res.final_loss == 0.0
    e_t, e_r = pose_errors(res.pose, true_pose)
    assert e_t < 1e-12 and e_r < 1e-10
    assert res.iterations_used == cfg.iters_track


def test_recovers_small_translation(track_scene):
    scene = track_scene
    cfg = PipelineConfig()
    t = 3
    true_pose = scene.trajectory[t]
    frame = _frame_from_map(scene, t)
    init = perturb_pose(true_pose, [0.01, 0.0, 0.0], [0.0, 0.0, 0.0])
    res = track_frame(scene.gmap, frame, [init], cfg, scene.intrinsics)
    e_t, e_r = pose_errors(res.pose, true_pose)
    assert e_t < 1e-3
    assert res.converged


def test_recovers_small_rotation(track_scene):
    scene = track_scene
    cfg = PipelineConfig()
    t = 4
    true_pose = scene.trajectory[t]
    frame = _frame_from_map(scene, t)
    init = perturb_pose(true_pose, [0, 0, 0], np.radians([0.0, 2.0, 0.0]))
    res = track_frame(scene.gmap, frame, [init], cfg, scene.intrinsics)
    e_t, e_r = pose_errors(res.pose, true_pose)
    assert e_r < 0.1


def test_map_is_untouched(track_scene):
    scene = track_scene
    cfg = dataclasses.replace(PipelineConfig(), iters_track=5)
    before = {k: getattr(scene.gmap, k).copy()
              for k in ("positions", "log_radii", "opacity_logits", "colors",
                        "semantic_colors")}
    track_frame(scene.gmap, scene.frames[1], [scene.trajectory[0]], cfg,
                scene.intrinsics)
    for k, v in before.items():
        np.testing.assert_array_equal(getattr(scene.gmap, k), v)


def test_best_iterate_never_worse_than_initial(track_scene):
    scene = track_scene
    cfg = dataclasses.replace(PipelineConfig(), iters_track=10,
                              lr_cam_translation=0.05, lr_cam_rotation=0.05)
    # absurd learning rate: steps overshoot, keep-best must protect the result
    t = 5
    init = perturb_pose(scene.trajectory[t], [0.005, 0, 0], [0, 0, 0])
    from splatslam.losses import tracking_loss
    out = render(scene.gmap, init, scene.intrinsics)
    initial_loss = tracking_loss(out, scene.frames[t], cfg).total
    res = track_frame(scene.gmap, scene.frames[t], [init], cfg, scene.intrinsics)
    assert res.final_loss <= initial_loss


def test_failure_on_empty_view():
    """A map fully behind the camera: no mask, predicted pose kept, flagged."""
    cfg = PipelineConfig()
    rng = np.random.default_rng(0)
    n = 20
    gmap = GaussianMap(positions=np.stack([rng.uniform(-1, 1, n),
                                           rng.uniform(-1, 1, n),
                                           rng.uniform(-3.0, -1.0, n)], axis=1),
                       log_radii=np.full(n, math.log(0.05)),
                       opacity_logits=np.full(n, 3.0),
                       colors=rng.uniform(size=(n, 3)),
                       semantic_colors=rng.uniform(size=(n, 3)))
    from tests.conftest import small_intrinsics
    intr = small_intrinsics(16)
    frame = Frame(color=np.zeros((16, 16, 3)), depth=np.full((16, 16), 2.0),
                  semantic=np.zeros((16, 16, 3)), timestamp=1)
    prev = CameraPose.identity()
    res = track_frame(gmap, frame, [prev], cfg, intr)
    assert res.failed
    assert res.iterations_used == 0
    assert res.pose == prev


def test_constant_velocity_initialization(track_scene):
    """With two previous poses the tracker starts from the extrapolation."""
    scene = track_scene
    cfg = dataclasses.replace(PipelineConfig(), iters_track=1)
    t = 4
    res = track_frame(scene.gmap, scene.frames[t],
                      [scene.trajectory[t - 2], scene.trajectory[t - 1]],
                      cfg, scene.intrinsics)
    from splatslam.camera import predict_pose
    predicted = predict_pose(scene.trajectory[t - 1], scene.trajectory[t - 2])
    # after a single iteration the best iterate is the evaluated init
    e_t, _ = pose_errors(res.pose, predicted)
    assert e_t < 0.05


def test_silhouette_mask_ablation_does_not_help(track_scene):
    """With an incomplete map, dropping the visibility mask cannot improve
    median pose error (coverage-gap pixels then pollute the loss)."""
    scene = track_scene
    # an incomplete map: drop everything within a cone of view 6's center ray
    keep = np.ones(scene.gmap.count, dtype=bool)
    pose6 = scene.trajectory[6]
    xc = scene.gmap.positions @ pose6.rotation_matrix().T + pose6.translation
    frac = np.linalg.norm(xc[:, :2], axis=1) / np.maximum(xc[:, 2], 1e-9)
    keep[(xc[:, 2] > 0) & (frac < 0.25)] = False
    partial = scene.gmap.subset(np.flatnonzero(keep))

    frame6 = _frame_from_map(scene, 6)
    cfg_full = PipelineConfig()
    cfg_nomask = dataclasses.replace(cfg_full, use_silhouette_mask=False)
    rng = np.random.default_rng(5)
    errs = {"full": [], "nomask": []}
    for trial in range(6):
        shift = rng.normal(size=3)
        shift *= rng.uniform(0.002, 0.008) / np.linalg.norm(shift)
        init = perturb_pose(pose6, shift, rng.normal(size=3) * 0.005)
        for name, cfg in (("full", cfg_full), ("nomask", cfg_nomask)):
            res = track_frame(partial, frame6, [init], cfg, scene.intrinsics)
            errs[name].append(pose_errors(res.pose, pose6)[0])
    assert np.median(errs["nomask"]) >= np.median(errs["full"]) - 1e-4
