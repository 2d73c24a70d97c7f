"""Sequence loading/export and the synthetic room generator.

Sequence directory layout::

    sequence/
      intrinsics.txt     # key = value: fx fy cx cy width height depth_scale
      palette.txt        # one label per line: id name r g b
      color/000000.png   # 8-bit RGB
      depth/000000.png   # 16-bit single channel, depth_scale meters per unit
      semantic/000000.png
      gt_poses.txt       # optional; trajectory format (index tx ty tz qx qy qz qw)

Depth unit defaults to 1/5000 m, a common RGB-D convention.  The synthetic
generator builds a room of axis-aligned textured boxes, samples every face
into Gaussians, renders the frames with the package renderer, and (optionally)
exports them in the directory format, so the whole pipeline can be exercised
without any external dataset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraPose, Intrinsics, quat_conjugate, quat_multiply, quat_to_matrix
from .camera import load_trajectory, save_trajectory
from .errors import DataError
from .scene import GaussianMap, SemanticPalette
from . import imageio

DEFAULT_DEPTH_SCALE = 1.0 / 5000.0

# background + room surfaces + distinct object colors
_PALETTE_COLORS = np.array([
    [0.0, 0.0, 0.0],     # background
    [0.72, 0.72, 0.70],  # wall
    [0.45, 0.31, 0.18],  # floor
    [0.85, 0.10, 0.10],
    [0.10, 0.70, 0.15],
    [0.12, 0.25, 0.90],
    [0.95, 0.85, 0.10],
    [0.85, 0.15, 0.85],
    [0.10, 0.85, 0.85],
    [0.95, 0.55, 0.10],
    [0.55, 0.10, 0.85],
])


@dataclass
class Frame:
    """One RGB-D observation with semantic colors and a frame index."""

    color: np.ndarray
    depth: np.ndarray
    semantic: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        self.color = np.asarray(self.color, dtype=float)
        self.depth = np.asarray(self.depth, dtype=float)
        self.semantic = np.asarray(self.semantic, dtype=float)
        h, w = self.depth.shape
        if self.color.shape != (h, w, 3) or self.semantic.shape != (h, w, 3):
            raise DataError("frame channels must share dimensions")

    def valid_depth(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)


@dataclass
class SequenceData:
    intrinsics: Intrinsics
    frames: list[Frame]
    gt_poses: list[CameraPose] | None
    palette: SemanticPalette | None
    depth_scale: float = DEFAULT_DEPTH_SCALE


@dataclass
class SyntheticScene:
    """Ground truth for a generated sequence: map, labels, trajectory, frames."""

    gmap: GaussianMap
    labels: np.ndarray  # true label id of every Gaussian
    palette: SemanticPalette
    trajectory: list[CameraPose]
    intrinsics: Intrinsics
    frames: list[Frame]
    object_labels: list[int] = field(default_factory=list)
    # analytic box geometry in the generator's own frame (the exposed
    # trajectory and map are re-anchored to camera 0; frame depths were cast
    # before anchoring, which is equivalent)
    room_box: tuple | None = None
    object_boxes: list[tuple] = field(default_factory=list)


# ---------------------------------------------------------------------------
# directory I/O
# ---------------------------------------------------------------------------


def _write_intrinsics(path: Path, intr: Intrinsics, depth_scale: float) -> None:
    lines = [f"fx = {intr.fx:.17g}", f"fy = {intr.fy:.17g}",
             f"cx = {intr.cx:.17g}", f"cy = {intr.cy:.17g}",
             f"width = {intr.width}", f"height = {intr.height}",
             f"depth_scale = {depth_scale:.17g}"]
    path.write_text("\n".join(lines) + "\n")


def _read_intrinsics(path: Path) -> tuple[Intrinsics, float]:
    if not path.is_file():
        raise DataError(f"intrinsics file not found: {path}")
    values = {}
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, raw = line.partition("=")
        values[key.strip()] = float(raw.strip())
    try:
        intr = Intrinsics(fx=values["fx"], fy=values["fy"], cx=values["cx"],
                          cy=values["cy"], width=int(values["width"]),
                          height=int(values["height"]))
    except KeyError as exc:
        raise DataError(f"{path}: missing intrinsics key {exc}") from None
    return intr, values.get("depth_scale", DEFAULT_DEPTH_SCALE)


def export_sequence(directory: str | Path, intr: Intrinsics, frames: list[Frame],
                    poses: list[CameraPose] | None, palette: SemanticPalette | None,
                    depth_scale: float = DEFAULT_DEPTH_SCALE) -> Path:
    directory = Path(directory)
    for sub in ("color", "depth", "semantic"):
        (directory / sub).mkdir(parents=True, exist_ok=True)
    _write_intrinsics(directory / "intrinsics.txt", intr, depth_scale)
    if palette is not None:
        palette.save_text(directory / "palette.txt")
    if poses is not None:
        save_trajectory(directory / "gt_poses.txt", poses,
                        [f.timestamp for f in frames])
    for frame in frames:
        name = f"{frame.timestamp:06d}.png"
        imageio.save_rgb8(directory / "color" / name, frame.color)
        imageio.save_gray16(directory / "depth" / name, frame.depth / depth_scale)
        imageio.save_rgb8(directory / "semantic" / name, frame.semantic)
    return directory


def load_sequence(directory: str | Path, require_semantic: bool = True) -> SequenceData:
    """Load a sequence directory; frames are ordered by filename index."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"sequence directory not found: {directory}")
    intr, depth_scale = _read_intrinsics(directory / "intrinsics.txt")
    color_dir, depth_dir, sem_dir = (directory / s for s in ("color", "depth", "semantic"))
    for sub, needed in ((color_dir, True), (depth_dir, True), (sem_dir, require_semantic)):
        if needed and not sub.is_dir():
            raise DataError(f"missing channel directory: {sub}")
    color_files = sorted(color_dir.glob("*.png"))
    if not color_files:
        raise DataError(f"no color frames in {color_dir}")
    frames = []
    for cpath in color_files:
        name = cpath.name
        index = int(cpath.stem)
        dpath = depth_dir / name
        if not dpath.is_file():
            raise DataError(f"depth frame missing for {name}")
        color = imageio.load_rgb8(cpath)
        depth = imageio.load_gray16(dpath) * depth_scale
        if color.shape[:2] != depth.shape:
            raise DataError(f"{name}: color/depth dimensions differ")
        spath = sem_dir / name
        if spath.is_file():
            semantic = imageio.load_rgb8(spath)
            if semantic.shape[:2] != depth.shape:
                raise DataError(f"{name}: semantic dimensions differ")
        elif require_semantic:
            raise DataError(f"semantic frame missing for {name} "
                            "(disable the semantic channel to load without it)")
        else:
            semantic = np.zeros(color.shape)
        frames.append(Frame(color=color, depth=depth, semantic=semantic, timestamp=index))
    if len({f.timestamp for f in frames}) != len(frames):
        raise DataError("duplicate frame indices")
    palette = None
    if (directory / "palette.txt").is_file():
        palette = SemanticPalette.load_text(directory / "palette.txt")
    gt_poses = None
    if (directory / "gt_poses.txt").is_file():
        _, gt_poses = load_trajectory(directory / "gt_poses.txt")
        if len(gt_poses) != len(frames):
            raise DataError("gt_poses.txt length does not match the frame count")
    return SequenceData(intrinsics=intr, frames=frames, gt_poses=gt_poses,
                        palette=palette, depth_scale=depth_scale)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


def _look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """World-to-camera pose looking from eye to target, +z forward, +y down."""
    z_cam = np.asarray(target, dtype=float) - eye
    z_cam = z_cam / np.linalg.norm(z_cam)
    x_cam = np.cross(z_cam, np.asarray(up, dtype=float))
    norm = np.linalg.norm(x_cam)
    if norm < 1e-9:  # looking straight along up: pick an arbitrary right vector
        x_cam = np.array([1.0, 0.0, 0.0])
    else:
        x_cam = x_cam / norm
    y_cam = np.cross(z_cam, x_cam)
    r = np.stack([x_cam, y_cam, z_cam])
    return CameraPose(_matrix_to_quat(r), -r @ np.asarray(eye, dtype=float))


def _matrix_to_quat(r: np.ndarray) -> np.ndarray:
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        return np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                         (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    i = int(np.argmax(np.diag(r)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = math.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2.0
    q = np.zeros(4)
    q[0] = (r[k, j] - r[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (r[j, i] + r[i, j]) / s
    q[1 + k] = (r[k, i] + r[i, k]) / s
    return q / np.linalg.norm(q)


def _sample_box_faces(rng, lo, hi, spacing, skip_bottom=False):
    """Jittered grid samples (points + outward normals) on the faces of a box."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    points = []
    for axis in range(3):
        for side, coord in ((0, lo[axis]), (1, hi[axis])):
            if skip_bottom and axis == 2 and side == 0:
                continue
            u_axis, v_axis = [a for a in range(3) if a != axis]
            nu = max(2, int(round((hi[u_axis] - lo[u_axis]) / spacing)))
            nv = max(2, int(round((hi[v_axis] - lo[v_axis]) / spacing)))
            us = np.linspace(lo[u_axis], hi[u_axis], nu)
            vs = np.linspace(lo[v_axis], hi[v_axis], nv)
            uu, vv = np.meshgrid(us, vs)
            pts = np.zeros((uu.size, 3))
            pts[:, u_axis] = uu.ravel()
            pts[:, v_axis] = vv.ravel()
            pts[:, axis] = coord
            jitter = rng.uniform(-0.25 * spacing, 0.25 * spacing, (uu.size, 3))
            jitter[:, axis] = 0.0
            points.append(pts + jitter)
    return np.concatenate(points)


def _texture(points: np.ndarray, base: np.ndarray, rng) -> np.ndarray:
    """Deterministic smooth texture plus a little per-Gaussian jitter."""
    phase = np.sin(5.1 * points[:, 0]) * np.sin(4.3 * points[:, 1] + 1.7) \
        * np.sin(3.7 * points[:, 2] + 0.6)
    scale = 0.72 + 0.22 * (0.5 + 0.5 * phase) + rng.uniform(-0.06, 0.06, len(points))
    return np.clip(base[None, :] * scale[:, None], 0.0, 1.0)


def _exact_depth(pose: CameraPose, intr: Intrinsics, room_lo, room_hi,
                 boxes) -> np.ndarray:
    """Ray-cast depth of the axis-aligned box scene, exact per pixel.

    The camera sits inside the room box; each pixel ray exits the room at
    some parameter and may first hit an object box.  Rays are parameterized
    so the parameter equals camera-frame depth directly.
    """
    h, w = intr.height, intr.width
    jj, ii = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    dirs_cam = np.stack([(jj - intr.cx) / intr.fx,
                         (ii - intr.cy) / intr.fy,
                         np.ones_like(jj)], axis=-1).reshape(-1, 3)
    r = pose.rotation_matrix()
    origin = pose.camera_center()
    dirs = dirs_cam @ r  # world directions; parameter s gives camera depth s
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs
    lo_o = np.asarray(room_lo) - origin
    hi_o = np.asarray(room_hi) - origin
    # exit of the room interior: nearest positive crossing of the far slab
    exit_s = np.where(dirs > 0, hi_o * inv, lo_o * inv)
    exit_s[~np.isfinite(exit_s)] = np.inf
    depth = exit_s.min(axis=1)
    for lo, hi in boxes:
        t1 = (np.asarray(lo) - origin) * inv
        t2 = (np.asarray(hi) - origin) * inv
        near = np.minimum(t1, t2).max(axis=1)
        far = np.maximum(t1, t2).min(axis=1)
        hit = (near <= far) & (near > 0)
        depth = np.where(hit & (near < depth), near, depth)
    return depth.reshape(h, w)


def _anchor_to_first(gmap: GaussianMap, labels, poses: list[CameraPose]):
    """Re-express the world in the first camera's frame so pose 0 is identity."""
    q0, t0 = poses[0].quat.copy(), poses[0].translation.copy()
    r0 = quat_to_matrix(q0)
    gmap = GaussianMap(gmap.positions @ r0.T + t0, gmap.log_radii,
                       gmap.opacity_logits, gmap.colors, gmap.semantic_colors)
    new_poses = []
    for p in poses:
        q = quat_multiply(p.quat, quat_conjugate(q0))
        r = quat_to_matrix(q)
        new_poses.append(CameraPose(q, p.translation - r @ t0))
    return gmap, new_poses


def generate_synthetic(seed: int, room_size=(4.0, 4.0, 2.5), object_count: int = 4,
                       frame_count: int = 60, style: str = "orbit",
                       resolution: int = 64, depth_noise_std: float = 0.0,
                       footprint_px: float = 2.0, arc_deg: float = 75.0,
                       out_dir: str | Path | None = None,
                       depth_scale: float = DEFAULT_DEPTH_SCALE,
                       depth_source: str = "geometric") -> SyntheticScene:
    """Build a textured box room, a smooth trajectory, and rendered frames.

    Trajectory styles: ``orbit`` sweeps an arc around the room center,
    ``line`` dollies sideways, and ``revisit`` runs the orbit out and back so
    the first and last frames observe the same objects.  Deterministic per
    seed; the first pose is the identity (the world is anchored to it).

    ``depth_source`` picks the frames' depth channel: ``geometric`` casts
    exact rays against the box scene (like a real depth sensor),
    ``composited`` uses the splat-rendered depth (a world the renderer can
    reproduce exactly).
    """
    from .rasterizer import render  # deferred: rasterizer imports scene types

    if frame_count < 1 or object_count < 0:
        raise DataError("frame_count must be >= 1 and object_count >= 0")
    room = np.asarray(room_size, dtype=float)
    if np.any(room <= 0):
        raise DataError("room dimensions must be positive (zero-volume room)")
    if object_count > len(_PALETTE_COLORS) - 3:
        raise DataError(f"at most {len(_PALETTE_COLORS) - 3} objects supported")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xD5]))

    intr = Intrinsics(fx=float(resolution), fy=float(resolution),
                      cx=(resolution - 1) / 2.0, cy=(resolution - 1) / 2.0,
                      width=resolution, height=resolution)
    hx, hy, hz = room[0] / 2.0, room[1] / 2.0, room[2]
    d_ref = 0.55 * float(np.max(room))
    spacing = footprint_px * d_ref / intr.fx
    r2d_ratio = 0.75  # pixel radius at d_ref = 0.75 * footprint spacing

    ids = [0, 1, 2] + [3 + k for k in range(object_count)]
    names = ["background", "wall", "floor"] + [f"object{k}" for k in range(object_count)]
    palette = SemanticPalette(np.array(ids), names, _PALETTE_COLORS[:len(ids)].copy())

    points, labels = [], []
    # room shell: floor gets its own label, the rest is wall
    floor = _sample_box_faces(rng, (-hx, -hy, -spacing), (hx, hy, 0.0), spacing)
    floor = floor[floor[:, 2] >= -1e-9]  # keep the top face only
    points.append(floor)
    labels.append(np.full(len(floor), 2))
    shell = _sample_box_faces(rng, (-hx, -hy, 0.0), (hx, hy, hz), spacing, skip_bottom=True)
    # interior of the shell: keep side walls and ceiling
    keep = shell[:, 2] > 1e-9
    shell = shell[keep]
    points.append(shell)
    labels.append(np.full(len(shell), 1))

    object_labels = []
    object_boxes = []
    for k in range(object_count):
        angle = 2.0 * math.pi * (k / max(object_count, 1)) + rng.uniform(-0.25, 0.25)
        rad = rng.uniform(0.35, 0.75) * min(hx, hy)
        cx_, cy_ = rad * math.cos(angle), rad * math.sin(angle)
        size = rng.uniform(0.25, 0.45, 3) * min(hx, hy)
        z0 = 0.01
        lo = (cx_ - size[0] / 2, cy_ - size[1] / 2, z0)
        hi = (cx_ + size[0] / 2, cy_ + size[1] / 2, z0 + size[2])
        pts = _sample_box_faces(rng, lo, hi, spacing * 0.8, skip_bottom=True)
        points.append(pts)
        labels.append(np.full(len(pts), 3 + k))
        object_labels.append(3 + k)
        object_boxes.append((np.array(lo), np.array(hi)))

    points = np.concatenate(points)
    labels = np.concatenate(labels).astype(np.int64)

    colors = np.zeros((len(points), 3))
    for lid in np.unique(labels):
        sel = labels == lid
        colors[sel] = _texture(points[sel], palette.color_for(int(lid)), rng)
    # break exact depth ties between co-planar samples
    points = points + rng.uniform(-0.004, 0.004, points.shape)

    radius_at_ref = r2d_ratio * spacing
    gmap = GaussianMap(
        positions=points,
        log_radii=np.log(np.full(len(points), radius_at_ref)),
        opacity_logits=np.log(0.97 / 0.03) * np.ones(len(points)),
        colors=colors,
        semantic_colors=palette.colors_of(labels),
    )

    # trajectory
    orbit_r = 0.42 * min(hx, hy) + 0.55
    height = 0.55 * hz
    target = np.array([0.0, 0.0, 0.45 * hz])
    arc = math.radians(arc_deg)
    poses = []
    for t in range(frame_count):
        if style == "orbit":
            theta = arc * t / max(frame_count - 1, 1)
        elif style == "revisit":
            half = (frame_count - 1) / 2.0
            theta = arc * (t / half if t <= half else (frame_count - 1 - t) / half)
        elif style == "line":
            theta = 0.0
        else:
            raise DataError(f"unknown trajectory style {style!r}")
        if style == "line":
            span = 0.8 * min(hx, hy)
            eye = np.array([-span / 2 + span * t / max(frame_count - 1, 1),
                            -0.4 * hy, height])
        else:
            eye = np.array([orbit_r * math.cos(theta), orbit_r * math.sin(theta), height])
        poses.append(_look_at(eye, target))

    room_lo = np.array([-hx, -hy, 0.0])
    room_hi = np.array([hx, hy, hz])
    raw_poses = poses
    gmap, poses = _anchor_to_first(gmap, labels, poses)

    if depth_source not in ("geometric", "composited"):
        raise DataError(f"unknown depth_source {depth_source!r}")
    noise_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA0]))
    frames = []
    for t, pose in enumerate(poses):
        out = render(gmap, pose, intr)
        if depth_source == "geometric":
            # camera depth is frame-independent, so pre-anchor poses can cast
            depth = _exact_depth(raw_poses[t], intr, room_lo, room_hi, object_boxes)
        else:
            depth = out.depth.copy()
        if depth_noise_std > 0:
            depth = np.maximum(depth + noise_rng.normal(0.0, depth_noise_std, depth.shape),
                               1e-3)
        semantic = palette.snap_colors(out.semantic)
        frames.append(Frame(color=out.color.copy(), depth=depth,
                            semantic=semantic, timestamp=t))

    scene = SyntheticScene(gmap=gmap, labels=labels, palette=palette,
                           trajectory=poses, intrinsics=intr, frames=frames,
                           object_labels=object_labels,
                           room_box=(room_lo, room_hi),
                           object_boxes=object_boxes)
    if out_dir is not None:
        export_sequence(out_dir, intr, frames, poses, palette, depth_scale)
    return scene


def visible_labels(scene: SyntheticScene, pose: CameraPose, min_count: int = 5) -> set[int]:
    """Labels with at least ``min_count`` Gaussians projecting into the view."""
    r = pose.rotation_matrix()
    xc = scene.gmap.positions @ r.T + pose.translation
    d = xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = scene.intrinsics.fx * xc[:, 0] / d + scene.intrinsics.cx
        v = scene.intrinsics.fy * xc[:, 1] / d + scene.intrinsics.cy
    inside = (d > 0) & (u >= -1e-6) & (u < scene.intrinsics.width) \
        & (v >= -1e-6) & (v < scene.intrinsics.height)
    out = set()
    for lid in np.unique(scene.labels):
        if np.count_nonzero(inside & (scene.labels == lid)) >= min_count:
            out.add(int(lid))
    return out
