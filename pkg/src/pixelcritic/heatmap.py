"""Error-map overlays: blend an image with a blue (P=0) to red (P=1) ramp."""

from __future__ import annotations

import numpy as np

from .autograd import DimensionError
from .imageio import write_png

__all__ = ["colormap", "overlay", "write_heatmap"]


def colormap(errmap: np.ndarray) -> np.ndarray:
    """Linear ramp ``(P, 0, 1 - P)``; returns ``N x M x 3``."""
    p = np.clip(np.asarray(errmap, dtype=np.float64), 0.0, 1.0)
    return np.stack([p, np.zeros_like(p), 1.0 - p], axis=-1)


def overlay(image: np.ndarray, errmap: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """``(1 - alpha) * image + alpha * colormap(P)``; grey images are expanded to RGB."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[-1] == 1:
        image = image[..., 0]
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=-1)
    errmap = np.asarray(errmap, dtype=np.float64)
    if image.shape[:2] != errmap.shape or image.shape[-1] != 3:
        raise DimensionError(f"image {image.shape} and error map {errmap.shape} do not match")
    if alpha == 0.0:
        return image.copy()
    return (1.0 - alpha) * image + alpha * colormap(errmap)


def write_heatmap(path, image: np.ndarray, errmap: np.ndarray, alpha: float = 0.5) -> None:
    write_png(path, overlay(image, errmap, alpha))
