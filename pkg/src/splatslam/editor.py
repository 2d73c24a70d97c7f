"""Label-driven scene manipulation: remove or rigidly move Gaussian groups.

Groups are selected by semantic label.  A removal deletes the group; a
transform rotates the group about a pivot (its centroid by default) and
translates it.  Radii, opacities, and colors never change: isotropic
Gaussians are rotation-invariant, so moving their centers is the whole
transform.  Unselected Gaussians stay bit-identical.

Edit scripts are one command per line::

    remove <label>[,<label>...]
    transform <label>[,...] t=<x,y,z> r=<ax,ay,az,deg> [pivot=<x,y,z>]

Labels may be palette names or numeric ids.  ``r`` is an axis-angle rotation
(axis normalized internally, angle in degrees); ``t`` and ``r`` are both
optional in a transform.  Commands apply in order; a failing command aborts
the script and the input map is returned unmodified.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import quat_exp, quat_normalize, quat_to_matrix
from .errors import DataError
from .scene import GaussianMap, SemanticPalette, select_by_labels


@dataclass
class EditCommand:
    """One edit: either a removal or a rigid transform of a label group."""

    labels: tuple[int, ...]
    action: str  # "remove" | "transform"
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pivot: np.ndarray | None = None  # None: group centroid

    def __post_init__(self):
        if self.action not in ("remove", "transform"):
            raise ValueError(f"unknown edit action {self.action!r}")
        self.rotation = quat_normalize(self.rotation)
        self.translation = np.asarray(self.translation, dtype=float)


def apply_edit(gmap: GaussianMap, palette: SemanticPalette,
               cmd: EditCommand) -> GaussianMap:
    """Apply one command, returning a new map; the input is untouched.

    An empty selection is a warning, not an error: the map comes back
    unchanged (modulo copy).
    """
    selected = select_by_labels(gmap, palette, cmd.labels)
    if len(selected) == 0:
        warnings.warn(f"edit selected no gaussians for labels {cmd.labels}")
        return gmap.copy()
    if cmd.action == "remove":
        keep = np.ones(gmap.count, dtype=bool)
        keep[selected] = False
        return gmap.subset(np.flatnonzero(keep))
    out = gmap.copy()
    pivot = cmd.pivot if cmd.pivot is not None else gmap.positions[selected].mean(axis=0)
    r = quat_to_matrix(cmd.rotation)
    moved = (gmap.positions[selected] - pivot) @ r.T + pivot + cmd.translation
    out.positions[selected] = moved
    return out


def apply_edit_script(gmap: GaussianMap, palette: SemanticPalette,
                      commands: list[EditCommand]) -> GaussianMap:
    """Apply commands in order.  Grouped labels transform rigidly together
    about their joint centroid.  The first failure aborts; since edits are
    pure, the caller's map is unmodified in that case."""
    out = gmap
    for cmd in commands:
        out = apply_edit(out, palette, cmd)
    return out if commands else gmap.copy()


def _resolve_labels(spec: str, palette: SemanticPalette) -> tuple[int, ...]:
    labels = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        if token.lstrip("-").isdigit():
            labels.append(int(token))
        else:
            labels.append(palette.id_for_name(token))
    if not labels:
        raise DataError("edit command names no labels")
    return tuple(labels)


def _parse_vector(text: str, expect: int, what: str) -> np.ndarray:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != expect:
        raise DataError(f"{what} needs {expect} comma-separated numbers, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise DataError(f"bad number in {what}: {text!r}") from None


def parse_edit_script(text: str, palette: SemanticPalette) -> list[EditCommand]:
    commands = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        verb = parts[0].lower()
        if verb == "remove":
            if len(parts) != 2:
                raise DataError(f"line {lineno}: remove takes exactly one label list")
            commands.append(EditCommand(labels=_resolve_labels(parts[1], palette),
                                        action="remove"))
        elif verb == "transform":
            if len(parts) < 2:
                raise DataError(f"line {lineno}: transform needs a label list")
            labels = _resolve_labels(parts[1], palette)
            translation = np.zeros(3)
            rotation = np.array([1.0, 0, 0, 0])
            pivot = None
            for token in parts[2:]:
                key, _, value = token.partition("=")
                if key == "t":
                    translation = _parse_vector(value, 3, "t")
                elif key == "r":
                    vec = _parse_vector(value, 4, "r")
                    axis = vec[:3]
                    norm = np.linalg.norm(axis)
                    if norm == 0:
                        raise DataError(f"line {lineno}: zero rotation axis")
                    rotation = quat_exp(axis / norm * math.radians(vec[3]))
                elif key == "pivot":
                    pivot = _parse_vector(value, 3, "pivot")
                else:
                    raise DataError(f"line {lineno}: unknown transform field {key!r}")
            commands.append(EditCommand(labels=labels, action="transform",
                                        rotation=rotation, translation=translation,
                                        pivot=pivot))
        else:
            raise DataError(f"line {lineno}: unknown edit command {verb!r}")
    return commands


def load_edit_script(path: str | Path, palette: SemanticPalette) -> list[EditCommand]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"edit script not found: {path}")
    return parse_edit_script(path.read_text(), palette)
