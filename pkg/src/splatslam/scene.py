"""The Gaussian map: storage, label palette, spawning, and label-based selection.

Storage is structure-of-arrays so the renderer can stream each attribute
independently.  Opacity lives in logit space and radius in log space; both
stay in their valid ranges by construction no matter what the optimizer does.
Semantic colors are continuous RGB optimized jointly with appearance; a
discrete label is recovered only when needed, by snapping to the nearest
palette color.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraPose, Intrinsics
from .errors import DataError

# Spawned Gaussians start nearly opaque.  With a one-pixel footprint the
# composited depth of a freshly spawned surface is (1 - T_residual) * depth;
# the initial opacity keeps that residual small enough that a spawn
# immediately re-renders its source depth to well under a millimeter at room
# scale (image corners, with fewer overlapping neighbors, are the binding
# case), which a mid-range opacity cannot do.
INITIAL_OPACITY = 0.998

_CHECKPOINT_MAGIC = b"GSMAP\x00"
_CHECKPOINT_VERSION = 1


def logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class SemanticPalette:
    """Ordered label table: (id, name, RGB in [0,1]^3); entry 0 is background."""

    ids: np.ndarray
    names: list[str]
    colors: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.colors = np.asarray(self.colors, dtype=float)
        if len(self.ids) != len(self.names) or len(self.ids) != len(self.colors):
            raise DataError("palette fields must have equal length")
        if len(np.unique(self.ids)) != len(self.ids):
            raise DataError("palette label ids must be unique")
        if len(np.unique(self.colors.round(9), axis=0)) != len(self.colors):
            raise DataError("palette colors must be pairwise distinct")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def background_id(self) -> int:
        return int(self.ids[0])

    def color_for(self, label_id: int) -> np.ndarray:
        idx = np.flatnonzero(self.ids == label_id)
        if len(idx) == 0:
            raise DataError(f"unknown label id {label_id}")
        return self.colors[idx[0]].copy()

    def id_for_name(self, name: str) -> int:
        for i, n in enumerate(self.names):
            if n == name:
                return int(self.ids[i])
        raise DataError(f"unknown label name {name!r}")

    def nearest_ids(self, rgb: np.ndarray) -> np.ndarray:
        """Snap RGB values (..., 3) to the id of the nearest palette color."""
        flat = np.asarray(rgb, dtype=float).reshape(-1, 3)
        d2 = ((flat[:, None, :] - self.colors[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d2, axis=1)  # ties resolve to the lowest palette index
        return self.ids[idx].reshape(np.asarray(rgb).shape[:-1])

    def snap_colors(self, rgb: np.ndarray) -> np.ndarray:
        """Replace RGB values (..., 3) with their nearest palette color."""
        labels = self.nearest_ids(rgb)
        return self.colors_of(labels)

    def colors_of(self, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels)
        lookup = {int(i): c for i, c in zip(self.ids, self.colors)}
        out = np.zeros(labels.shape + (3,))
        for lid, color in lookup.items():
            out[labels == lid] = color
        return out

    def to_text(self) -> str:
        lines = ["# id name r g b"]
        for lid, name, c in zip(self.ids, self.names, self.colors):
            lines.append(f"{lid} {name} {c[0]:.17g} {c[1]:.17g} {c[2]:.17g}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "SemanticPalette":
        ids, names, colors = [], [], []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise DataError(f"bad palette line: {line!r}")
            ids.append(int(parts[0]))
            names.append(parts[1])
            colors.append([float(v) for v in parts[2:5]])
        return SemanticPalette(np.array(ids), names, np.array(colors))

    def save_text(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @staticmethod
    def load_text(path: str | Path) -> "SemanticPalette":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"palette file not found: {path}")
        return SemanticPalette.from_text(path.read_text())


@dataclass
class GaussianMap:
    """Isotropic Gaussians: position, log radius, opacity logit, two RGB channels."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    log_radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    opacity_logits: np.ndarray = field(default_factory=lambda: np.zeros(0))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    semantic_colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.log_radii = np.asarray(self.log_radii, dtype=float).reshape(-1)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=float).reshape(-1)
        self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
        self.semantic_colors = np.asarray(self.semantic_colors, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        for name in ("log_radii", "opacity_logits", "colors", "semantic_colors"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length != positions length")

    @property
    def count(self) -> int:
        return len(self.positions)

    def radii(self) -> np.ndarray:
        return np.exp(self.log_radii)

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def validate_finite(self) -> None:
        for name in ("positions", "log_radii", "opacity_logits", "colors", "semantic_colors"):
            if not np.all(np.isfinite(getattr(self, name))):
                from .errors import NumericError
                raise NumericError(f"non-finite values in map attribute {name}")

    def copy(self) -> "GaussianMap":
        return GaussianMap(self.positions.copy(), self.log_radii.copy(),
                           self.opacity_logits.copy(), self.colors.copy(),
                           self.semantic_colors.copy())

    def subset(self, indices: np.ndarray) -> "GaussianMap":
        return GaussianMap(self.positions[indices], self.log_radii[indices],
                           self.opacity_logits[indices], self.colors[indices],
                           self.semantic_colors[indices])


def concatenate(a: GaussianMap, b: GaussianMap) -> GaussianMap:
    return GaussianMap(
        np.concatenate([a.positions, b.positions]),
        np.concatenate([a.log_radii, b.log_radii]),
        np.concatenate([a.opacity_logits, b.opacity_logits]),
        np.concatenate([a.colors, b.colors]),
        np.concatenate([a.semantic_colors, b.semantic_colors]),
    )


def influence_3d(gmap: GaussianMap, index: int, x: np.ndarray) -> float:
    """3D influence of one Gaussian at point ``x``: sigma * exp(-|x-mu|^2 / (2 r^2))."""
    if not 0 <= index < gmap.count:
        raise IndexError(f"gaussian index {index} out of range [0, {gmap.count})")
    diff = np.asarray(x, dtype=float) - gmap.positions[index]
    r = np.exp(gmap.log_radii[index])
    sigma = sigmoid(gmap.opacity_logits[index])
    return float(sigma * np.exp(-np.dot(diff, diff) / (2.0 * r * r)))


def spawn_from_pixels(frame, pose: CameraPose, intr: Intrinsics,
                      mask: np.ndarray, palette: SemanticPalette) -> GaussianMap:
    """New Gaussians for the masked pixels of an observation.

    Each masked pixel contributes one Gaussian: position is the unprojected
    pixel center at the observed depth in world coordinates, appearance color
    is the pixel RGB, semantic color snaps to the nearest palette entry, and
    the radius ``depth / fx`` gives a one-pixel footprint at that depth.
    Returns the delta map only; callers concatenate it onto the scene.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != frame.depth.shape:
        raise ValueError("mask dimensions must match the frame")
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        return GaussianMap()
    z = frame.depth[rows, cols].astype(float)
    if np.any(~np.isfinite(z)) or np.any(z <= 0):
        raise DataError("masked pixels must have valid positive depth")
    x_cam = np.stack([(cols - intr.cx) / intr.fx * z,
                      (rows - intr.cy) / intr.fy * z,
                      z], axis=1)
    r_wc = pose.rotation_matrix().T
    positions = (x_cam - pose.translation) @ r_wc.T
    colors = frame.color[rows, cols].astype(float)
    semantic = palette.snap_colors(frame.semantic[rows, cols])
    return GaussianMap(
        positions=positions,
        log_radii=np.log(z / intr.fx),
        opacity_logits=np.full(len(rows), logit(INITIAL_OPACITY)),
        colors=colors,
        semantic_colors=semantic,
    )


def select_by_labels(gmap: GaussianMap, palette: SemanticPalette,
                     labels) -> np.ndarray:
    """Indices of Gaussians whose snapped semantic label is in ``labels``."""
    labels = set(int(l) for l in labels)
    known = set(int(i) for i in palette.ids)
    unknown = labels - known
    if unknown:
        raise DataError(f"unknown label ids: {sorted(unknown)}")
    if gmap.count == 0 or not labels:
        return np.zeros(0, dtype=np.int64)
    snapped = palette.nearest_ids(gmap.semantic_colors)
    return np.flatnonzero(np.isin(snapped, sorted(labels)))


# ---------------------------------------------------------------------------
# checkpoint file: little-endian binary, header + palette + attribute arrays
# ---------------------------------------------------------------------------


def save_map(path: str | Path, gmap: GaussianMap, palette: SemanticPalette) -> None:
    """Write a map checkpoint.

    Layout (all little-endian): magic ``GSMAP\\0``, u16 version, u64 count,
    u32 palette size, then per palette entry (i32 id, u32 name length, UTF-8
    name, 3 x f64 color), then the attribute arrays in order: positions
    (count x 3), log radii, opacity logits, colors (count x 3), semantic
    colors (count x 3), each f64.
    """
    buf = io.BytesIO()
    buf.write(_CHECKPOINT_MAGIC)
    buf.write(struct.pack("<H", _CHECKPOINT_VERSION))
    buf.write(struct.pack("<Q", gmap.count))
    buf.write(struct.pack("<I", len(palette)))
    for lid, name, color in zip(palette.ids, palette.names, palette.colors):
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<iI", int(lid), len(encoded)))
        buf.write(encoded)
        buf.write(np.asarray(color, dtype="<f8").tobytes())
    for arr in (gmap.positions, gmap.log_radii, gmap.opacity_logits,
                gmap.colors, gmap.semantic_colors):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_map(path: str | Path) -> tuple[GaussianMap, SemanticPalette]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    buf = io.BytesIO(raw)
    if buf.read(len(_CHECKPOINT_MAGIC)) != _CHECKPOINT_MAGIC:
        raise DataError(f"not a map checkpoint: {path}")
    (version,) = struct.unpack("<H", buf.read(2))
    if version != _CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack("<Q", buf.read(8))
    (n_palette,) = struct.unpack("<I", buf.read(4))
    ids, names, colors = [], [], []
    for _ in range(n_palette):
        lid, name_len = struct.unpack("<iI", buf.read(8))
        names.append(buf.read(name_len).decode("utf-8"))
        ids.append(lid)
        colors.append(np.frombuffer(buf.read(24), dtype="<f8"))
    palette = SemanticPalette(np.array(ids), names, np.array(colors))

    def read_array(shape):
        n = int(np.prod(shape))
        data = buf.read(8 * n)
        if len(data) != 8 * n:
            raise DataError(f"truncated checkpoint: {path}")
        return np.frombuffer(data, dtype="<f8").reshape(shape).astype(float)

    gmap = GaussianMap(
        positions=read_array((count, 3)),
        log_radii=read_array((count,)),
        opacity_logits=read_array((count,)),
        colors=read_array((count, 3)),
        semantic_colors=read_array((count, 3)),
    )
    return gmap, palette
