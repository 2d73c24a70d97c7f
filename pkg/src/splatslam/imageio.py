"""PNG helpers: 8-bit RGB, 8-bit gray, and 16-bit gray round trips."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


def save_rgb8(path: str | Path, img: np.ndarray) -> None:
    """Save an HxWx3 float image in [0,1] as 8-bit RGB PNG."""
    data = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def load_rgb8(path: str | Path) -> np.ndarray:
    img = _open(path).convert("RGB")
    return np.asarray(img, dtype=float) / 255.0


def save_gray8(path: str | Path, img: np.ndarray) -> None:
    data = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def load_gray8(path: str | Path) -> np.ndarray:
    img = _open(path).convert("L")
    return np.asarray(img, dtype=float) / 255.0


def save_gray16(path: str | Path, values: np.ndarray) -> None:
    """Save integer-valued data (already scaled to sensor units) as 16-bit PNG."""
    data = np.clip(np.round(np.asarray(values)), 0, 65535).astype(np.uint16)
    Image.fromarray(data).save(path)


def load_gray16(path: str | Path) -> np.ndarray:
    img = _open(path)
    arr = np.asarray(img)
    if arr.dtype not in (np.uint16, np.int32, np.uint8):
        raise DataError(f"{path}: expected a single-channel integer image, got {arr.dtype}")
    if arr.ndim != 2:
        raise DataError(f"{path}: expected a single-channel image")
    return arr.astype(float)


def _open(path: str | Path) -> Image.Image:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image not found: {path}")
    try:
        return Image.open(path)
    except Exception as exc:
        raise DataError(f"unreadable image {path}: {exc}") from exc
