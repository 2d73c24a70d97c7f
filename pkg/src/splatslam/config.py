"""Pipeline hyperparameters: defaults, file loading, and CLI overrides.

The config file is a flat ``key = value`` text format, one entry per line.
``#`` starts a comment, blank lines are ignored.  Booleans are ``true`` /
``false``; the uncertainty decay coefficient ``tau`` additionally accepts
``auto``, meaning "derive from the sequence length at run start" (decay to
0.5 over half the sequence).  Unknown keys are rejected so typos cannot
silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

# (low, high, low_inclusive, high_inclusive) for range-checked fields.
_RANGES = {
    "t_sil_track": (0.0, 1.0, False, False),
    "t_sil_map": (0.0, 1.0, False, False),
    "alpha_ssim": (0.0, 1.0, True, True),
    "t_geo": (0.0, 1.0, True, True),
    "t_sem": (0.0, 1.0, True, True),
    "depth_add_margin": (0.0, math.inf, True, False),
}

_POSITIVE = (
    "lambda_d_track", "lambda_c_track", "lambda_s_track",
    "lambda_d_map", "lambda_c_map", "lambda_s_map",
)

_LEARNING_RATES = (
    "lr_cam_translation", "lr_cam_rotation", "lr_pos", "lr_color",
    "lr_semantic", "lr_opacity_logit", "lr_logscale",
)


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the tracking/mapping pipeline, with paper-profile defaults.

    The defaults correspond to the room-scale indoor profile
    (40 tracking / 60 mapping iterations per frame).
    """

    # Silhouette visibility thresholds.
    t_sil_track: float = 0.99
    t_sil_map: float = 0.5

    # Loss term weights, tracking profile.
    lambda_d_track: float = 1.0
    lambda_c_track: float = 0.5
    lambda_s_track: float = 0.05

    # Loss term weights, mapping profile.
    lambda_d_map: float = 1.0
    lambda_c_map: float = 0.5
    lambda_s_map: float = 0.1

    # L1 / (1 - SSIM) mix for the image losses used in mapping.
    alpha_ssim: float = 0.8

    # Keyframe selection.
    t_geo: float = 0.05
    t_sem: float = 0.7
    keyframe_interval: int = 5
    max_keyframes: int = 25

    # Uncertainty decay; None means auto: decay to 0.5 over half the sequence.
    tau: float | None = None

    # Optimization schedule.
    iters_track: int = 40
    iters_map: int = 60

    # Per-group learning rates.
    lr_cam_translation: float = 2e-3
    lr_cam_rotation: float = 2e-3
    lr_pos: float = 1e-4
    lr_color: float = 2.5e-3
    lr_semantic: float = 2.5e-3
    lr_opacity_logit: float = 0.05
    lr_logscale: float = 1e-3

    # Densification: observed depth must be this much (relative) in front of
    # the rendered depth to count as new geometry.
    depth_add_margin: float = 0.05

    # Channel toggles (ablations): drop a channel's loss terms everywhere.
    use_color: bool = True
    use_depth: bool = True
    use_semantic: bool = True
    use_silhouette_mask: bool = True

    # Keyframe-criteria toggles (ablations).
    use_geo: bool = True
    use_sem: bool = True
    use_uncertainty: bool = True

    def __post_init__(self):
        for key, (lo, hi, lo_inc, hi_inc) in _RANGES.items():
            v = getattr(self, key)
            ok_lo = v >= lo if lo_inc else v > lo
            ok_hi = v <= hi if hi_inc else v < hi
            if not (ok_lo and ok_hi):
                raise ConfigError(f"{key} = {v} out of range")
        for key in _POSITIVE:
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} = {getattr(self, key)} must be >= 0")
        for key in _LEARNING_RATES:
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} = {getattr(self, key)} must be > 0")
        for key in ("iters_track", "iters_map"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} = {getattr(self, key)} must be >= 1")
        if self.keyframe_interval < 1:
            raise ConfigError(f"keyframe_interval = {self.keyframe_interval} must be >= 1")
        if self.max_keyframes < 0:
            raise ConfigError(f"max_keyframes = {self.max_keyframes} must be >= 0")
        if self.tau is not None and self.tau < 0:
            raise ConfigError(f"tau = {self.tau} must be >= 0 (or auto)")

    def lambdas(self, stage: str) -> tuple[float, float, float]:
        """(depth, color, semantic) weights for ``stage`` in {"track", "map"}."""
        if stage == "track":
            return self.lambda_d_track, self.lambda_c_track, self.lambda_s_track
        if stage == "map":
            return self.lambda_d_map, self.lambda_c_map, self.lambda_s_map
        raise ValueError(f"unknown stage {stage!r}")


FIELD_NAMES = tuple(f.name for f in dataclasses.fields(PipelineConfig))
_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    ftype = _FIELD_TYPES[key]
    if ftype == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if ftype == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    # floats (tau additionally accepts "auto" -> None)
    if key == "tau" and raw.lower() in ("auto", "none"):
        return None
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def parse_config_text(text: str, source: str = "<string>") -> dict:
    """Parse config text into a {field: value} dict, validating keys."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in FIELD_NAMES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def load_config(path: str | Path) -> PipelineConfig:
    """Load a config file; file values override the defaults."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = parse_config_text(path.read_text(), source=str(path))
    return PipelineConfig(**values)


def apply_overrides(cfg: PipelineConfig, overrides: dict[str, str]) -> PipelineConfig:
    """Apply string-valued overrides (e.g. from CLI flags) on top of ``cfg``."""
    parsed = {}
    for key, raw in overrides.items():
        if key not in FIELD_NAMES:
            raise ConfigError(f"unknown config key {key!r}")
        parsed[key] = _parse_value(key, raw)
    return dataclasses.replace(cfg, **parsed)


def format_config(cfg: PipelineConfig) -> str:
    lines = []
    for name in FIELD_NAMES:
        v = getattr(cfg, name)
        if v is None:
            v = "auto"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(format_config(cfg))


def resolve_tau(cfg: PipelineConfig, num_frames: int) -> float:
    """Effective decay coefficient for a run.

    ``tau = auto`` decays the keyframe weight to 0.5 over half the sequence;
    the uncertainty-weighting ablation forces tau = 0 (weight 1 everywhere).
    """
    if not cfg.use_uncertainty:
        return 0.0
    if cfg.tau is not None:
        return cfg.tau
    half = max(num_frames, 2) / 2.0
    return math.log(2.0) / half
