"""Pinhole camera model and SE(3) poses.

Poses are stored world-to-camera (rotation as a unit quaternion plus a
translation), matching the extrinsics that appear in the point splatting
formula.  Camera-to-world quantities are derived on demand for trajectory
export.  Rotation is optimized in tangent space: a small rotation vector
``phi`` perturbs the pose on the left, ``R <- exp([phi]x) @ R``, which keeps
the quaternion exactly unit-norm after every step.

Image coordinates place pixel centers at integer positions, so the pixel at
row ``i``, column ``j`` has continuous coordinates ``(x, y) = (j, i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

# ---------------------------------------------------------------------------
# quaternions, stored (w, x, y, z)
# ---------------------------------------------------------------------------


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float) / np.linalg.norm(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product; rotation composition R(a @ b) = R(a) R(b)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def quat_exp(phi: np.ndarray) -> np.ndarray:
    """Unit quaternion for the rotation vector ``phi`` (angle = |phi|, radians)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        # second-order series keeps exp/log inverses consistent near zero
        half = 0.5 * angle
        w = 1.0 - half * half / 2.0
        xyz = 0.5 * phi
    else:
        half = 0.5 * angle
        w = math.cos(half)
        xyz = math.sin(half) / angle * phi
    return quat_normalize(np.concatenate(([w], xyz)))


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion (inverse of :func:`quat_exp`)."""
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    norm_xyz = np.linalg.norm(q[1:])
    if norm_xyz < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * math.atan2(norm_xyz, q[0])
    return angle / norm_xyz * q[1:]


# ---------------------------------------------------------------------------
# intrinsics and poses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters; ``fx`` doubles as the focal length used to splat radii."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DataError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise DataError("image dimensions must be >= 1")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DataError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])


@dataclass
class CameraPose:
    """World-to-camera transform: ``x_cam = R @ x_world + t``."""

    quat: np.ndarray = field(default_factory=quat_identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.quat = quat_normalize(np.asarray(self.quat, dtype=float))
        self.translation = np.asarray(self.translation, dtype=float).copy()

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose()

    @staticmethod
    def from_camera_center(quat: np.ndarray, center: np.ndarray) -> "CameraPose":
        """Pose with a given world-to-camera rotation and camera center in world."""
        q = quat_normalize(quat)
        r = quat_to_matrix(q)
        return CameraPose(q, -r @ np.asarray(center, dtype=float))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) into the camera frame."""
        r = self.rotation_matrix()
        return np.asarray(points, dtype=float) @ r.T + self.translation

    def camera_center(self) -> np.ndarray:
        r = self.rotation_matrix()
        return -r.T @ self.translation

    def camera_to_world(self) -> tuple[np.ndarray, np.ndarray]:
        """(quat, translation) of the inverse transform, for trajectory export."""
        return quat_conjugate(self.quat), self.camera_center()

    def copy(self) -> "CameraPose":
        return CameraPose(self.quat.copy(), self.translation.copy())

    def __eq__(self, other):
        return (isinstance(other, CameraPose)
                and np.array_equal(self.quat, other.quat)
                and np.array_equal(self.translation, other.translation))


@dataclass(frozen=True)
class SplatPoint:
    """A 3D point splatted to the image plane; ``behind`` flags depth <= 0."""

    mu2d: np.ndarray
    r2d: float
    depth: float
    behind: bool


def splat_point(pose: CameraPose, intr: Intrinsics, mu: np.ndarray, radius: float) -> SplatPoint:
    """Project a sphere center and radius with the standard point rendering formula.

    Returns image coordinates ``mu2d = (fx x/d + cx, fy y/d + cy)``, the
    splatted pixel radius ``r2d = fx * radius / d`` and the camera depth
    ``d``.  A point with ``d <= 0`` is flagged, not raised; callers cull.
    """
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)):
        raise ValueError("point must be finite")
    xc = pose.transform(mu)
    d = float(xc[2])
    if d <= 0.0:
        return SplatPoint(np.full(2, np.nan), math.nan, d, True)
    mu2d = np.array([intr.fx * xc[0] / d + intr.cx, intr.fy * xc[1] / d + intr.cy])
    return SplatPoint(mu2d, intr.fx * radius / d, d, False)


def predict_pose(prev: CameraPose, prev2: CameraPose) -> CameraPose:
    """Constant-velocity extrapolation from the two latest poses.

    Translation is extrapolated linearly; rotation re-applies the relative
    rotation prev2 -> prev once more onto prev.  (A naive additive update of
    the extrinsics matrix would leave the group, so relative composition is
    used instead.)
    """
    t = 2.0 * prev.translation - prev2.translation
    q_rel = quat_multiply(prev.quat, quat_conjugate(prev2.quat))
    q = quat_normalize(quat_multiply(q_rel, prev.quat))
    return CameraPose(q, t)


def apply_pose_step(pose: CameraPose, grad_translation: np.ndarray,
                    grad_rotation_tangent: np.ndarray, lr_t: float, lr_r: float,
                    state=None) -> CameraPose:
    """One descent step on the pose.

    With ``state`` (an :class:`splatslam.optim.OptimizerState` holding groups
    ``cam_translation`` and ``cam_rotation``) the update rule is the adaptive
    moment step; without it, a plain gradient step.

    The rotation tangent pivots about the camera center: a step ``d`` maps
    camera coordinates through ``exp([d]x)``, so both the quaternion and the
    stored translation pick up the rotation and the camera center stays put.
    (Rotating with the translation held fixed would pivot about a point |t|
    away, welding the rotation coordinates to a translation of the camera
    center; that artificial coupling makes pose refinement crawl.)  The
    quaternion is renormalized after composition.
    """
    gt = np.asarray(grad_translation, dtype=float)
    gr = np.asarray(grad_rotation_tangent, dtype=float)
    if not (np.all(np.isfinite(gt)) and np.all(np.isfinite(gr))):
        raise ValueError("pose gradients must be finite")
    if state is None:
        step_t = lr_t * gt
        step_r = lr_r * gr
    else:
        from .optim import step as optim_step
        params = {"cam_translation": pose.translation.copy(),
                  "cam_rotation": np.zeros(3)}
        out = optim_step(params, {"cam_translation": gt, "cam_rotation": gr}, state)
        step_t = pose.translation - out["cam_translation"]
        step_r = -out["cam_rotation"]
    dq = quat_exp(-step_r)
    new_q = quat_normalize(quat_multiply(dq, pose.quat))
    new_t = quat_to_matrix(dq) @ pose.translation - step_t
    return CameraPose(new_q, new_t)


# ---------------------------------------------------------------------------
# trajectory file: one line per frame, "index tx ty tz qx qy qz qw",
# giving the camera-to-world transform
# ---------------------------------------------------------------------------


def save_trajectory(path: str | Path, poses: list[CameraPose],
                    timestamps: list[int] | None = None) -> None:
    timestamps = timestamps if timestamps is not None else list(range(len(poses)))
    lines = []
    for ts, pose in zip(timestamps, poses):
        q_cw, t_cw = pose.camera_to_world()
        w, x, y, z = q_cw
        fields = [f"{ts}"] + [f"{v:.17g}" for v in (*t_cw, x, y, z, w)]
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path: str | Path) -> tuple[list[int], list[CameraPose]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"trajectory file not found: {path}")
    timestamps, poses = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise DataError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        ts = int(float(parts[0]))
        tx, ty, tz, qx, qy, qz, qw = map(float, parts[1:])
        q_cw = np.array([qw, qx, qy, qz])
        # stored camera-to-world; invert back to world-to-camera
        q_wc = quat_conjugate(quat_normalize(q_cw))
        r_wc = quat_to_matrix(q_wc)
        poses.append(CameraPose(q_wc, -r_wc @ np.array([tx, ty, tz])))
        timestamps.append(ts)
    return timestamps, poses
