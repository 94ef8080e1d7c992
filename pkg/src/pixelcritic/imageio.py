"""8-bit PNG reading and writing for float images in [0, 1]."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image


def to_bytes(image: np.ndarray) -> np.ndarray:
    """``round(v * 255)`` with halves rounded up, as uint8."""
    v = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def from_bytes(raw: np.ndarray) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / 255.0


def write_png(path: str | os.PathLike, image: np.ndarray) -> None:
    raw = to_bytes(image)
    if raw.ndim == 3 and raw.shape[2] == 1:
        raw = raw[..., 0]
    # uint8 HxW maps to mode "L", HxWx3 to "RGB"
    Image.fromarray(raw).save(path, format="PNG")


def read_png(path: str | os.PathLike) -> np.ndarray:
    """Float image: ``H x W`` for grayscale files, ``H x W x 3`` otherwise."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return from_bytes(np.array(im))


def write_label(path: str | os.PathLike, label: np.ndarray) -> None:
    """Binary label map as a single-channel PNG with values {0, 255}."""
    raw = np.where(np.asarray(label) > 0, 255, 0).astype(np.uint8)
    Image.fromarray(raw).save(path, format="PNG")


def read_label(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        raw = np.array(im.convert("L"))
    return (raw >= 128).astype(np.uint8)
