"""Procedural stand-in for real and generated image distributions.

A "real" scene is a smooth two-colour background gradient, one to three
flat shapes from the class's palette and shape family, and a fine stripe
texture. A "generated" scene is drawn from the same sampler and then
degraded: Gaussian blur and a hue rotation grow with the corruption level,
and with probability ``mode_collapse`` the shape layout is replaced by the
class's single canonical layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = [
    "ToyWorldConfig",
    "Shape",
    "class_palette",
    "canonical_layout",
    "make_toy_pair",
    "toy_real",
    "toy_generated",
    "toy_layouts",
    "layout_mask",
    "render_scene",
    "toy_images",
]

FAMILIES = ("disc", "square", "diamond")


@dataclass(frozen=True)
class ToyWorldConfig:
    corruption: float = 0.0
    mode_collapse: float = 0.0
    class_id: int = 0
    seed: int = 0
    size: int = 64
    max_shapes: int = 3
    texture_amplitude: float = 0.06
    texture_period: float = 3.0
    blur_sigma_max: float = 2.0
    hue_shift_max: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.corruption <= 1.0:
            raise ValueError(f"corruption must be in [0, 1], got {self.corruption}")
        if not 0.0 <= self.mode_collapse <= 1.0:
            raise ValueError(f"mode_collapse must be in [0, 1], got {self.mode_collapse}")
        if self.size < 8:
            raise ValueError(f"size must be >= 8, got {self.size}")
        if self.max_shapes < 1:
            raise ValueError("max_shapes must be >= 1")


@dataclass(frozen=True)
class Shape:
    kind: str
    cy: float
    cx: float
    radius: float
    color: int


def class_palette(class_id: int):
    """Background colours (2, 3), shape colours (3, 3) and shape family of a class."""
    rng = np.random.default_rng([int(class_id), 0xC1A55])
    background = rng.uniform(0.25, 0.75, size=(2, 3))
    shapes = rng.uniform(0.15, 0.85, size=(3, 3))
    return background, shapes, FAMILIES[int(class_id) % len(FAMILIES)]


def _sample_layout(rng: np.random.Generator, size: int, family: str, count: int) -> list[Shape]:
    return [
        Shape(
            kind=family,
            cy=float(rng.uniform(0.15, 0.85) * size),
            cx=float(rng.uniform(0.15, 0.85) * size),
            radius=float(rng.uniform(0.08, 0.2) * size),
            color=int(rng.integers(3)),
        )
        for _ in range(count)
    ]


def canonical_layout(class_id: int, size: int, max_shapes: int = 3) -> list[Shape]:
    """The single layout a fully mode-collapsed generator emits for a class."""
    _, _, family = class_palette(class_id)
    rng = np.random.default_rng([int(class_id), 0xCA40])
    return _sample_layout(rng, size, family, max_shapes)


def _coverage(shape: Shape, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    dy, dx = yy - shape.cy, xx - shape.cx
    if shape.kind == "disc":
        dist = np.sqrt(dy * dy + dx * dx)
    elif shape.kind == "square":
        dist = np.maximum(np.abs(dy), np.abs(dx))
    else:
        dist = (np.abs(dy) + np.abs(dx)) / np.sqrt(2.0)
    # one-pixel anti-aliased edge
    return np.clip(shape.radius - dist + 0.5, 0.0, 1.0)


def layout_mask(layout: list[Shape], size: int) -> np.ndarray:
    """Union coverage of a layout's shapes, in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size))
    for shape in layout:
        mask = np.maximum(mask, _coverage(shape, yy, xx))
    return mask


@dataclass
class _SceneDraw:
    layout: list[Shape]
    gradient_angle: float
    texture_angle: float
    texture_phase: float


def _draw_scene(rng: np.random.Generator, cfg: ToyWorldConfig, family: str) -> _SceneDraw:
    count = int(rng.integers(1, cfg.max_shapes + 1))
    layout = _sample_layout(rng, cfg.size, family, count)
    return _SceneDraw(
        layout=layout,
        gradient_angle=float(rng.uniform(0, 2 * np.pi)),
        texture_angle=float(rng.uniform(0, np.pi)),
        texture_phase=float(rng.uniform(0, 2 * np.pi)),
    )


def render_scene(draw: _SceneDraw, cfg: ToyWorldConfig) -> np.ndarray:
    n = cfg.size
    background, colors, _ = class_palette(cfg.class_id)
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)

    ca, sa = np.cos(draw.gradient_angle), np.sin(draw.gradient_angle)
    t = xx * ca + yy * sa
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    image = (1.0 - t)[..., None] * background[0] + t[..., None] * background[1]

    for shape in draw.layout:
        cov = _coverage(shape, yy, xx)[..., None]
        image = (1.0 - cov) * image + cov * colors[shape.color]

    ct, st = np.cos(draw.texture_angle), np.sin(draw.texture_angle)
    phase = 2 * np.pi * (xx * ct + yy * st) / cfg.texture_period + draw.texture_phase
    image = image + cfg.texture_amplitude * np.sin(phase)[..., None]
    return np.clip(image, 0.0, 1.0)


def _hue_rotate(image: np.ndarray, angle: float) -> np.ndarray:
    """Rotate colours about the grey axis (Rodrigues rotation)."""
    k = np.ones(3) / np.sqrt(3.0)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
    return image @ R.T


def _degrade(image: np.ndarray, cfg: ToyWorldConfig) -> np.ndarray:
    c = cfg.corruption
    if c <= 0:
        return image
    out = gaussian_filter(image, sigma=(c * cfg.blur_sigma_max, c * cfg.blur_sigma_max, 0), mode="reflect")
    out = _hue_rotate(out, c * cfg.hue_shift_max)
    return np.clip(out, 0.0, 1.0)


def _generated_draw(cfg: ToyWorldConfig):
    _, _, family = class_palette(cfg.class_id)
    rng = np.random.default_rng([cfg.seed, cfg.class_id, 1])
    draw = _draw_scene(rng, cfg, family)
    # drawn unconditionally so the stream stays aligned across collapse levels
    collapse = rng.random() < cfg.mode_collapse
    if collapse:
        draw.layout = canonical_layout(cfg.class_id, cfg.size, cfg.max_shapes)
    return draw


def _real_draw(cfg: ToyWorldConfig):
    _, _, family = class_palette(cfg.class_id)
    rng = np.random.default_rng([cfg.seed, cfg.class_id, 0])
    return _draw_scene(rng, cfg, family)


def toy_layouts(cfg: ToyWorldConfig) -> tuple[list[Shape], list[Shape]]:
    """Shape layouts of the (real, generated) pair that ``make_toy_pair`` renders."""
    return _real_draw(cfg).layout, _generated_draw(cfg).layout


def toy_real(cfg: ToyWorldConfig) -> np.ndarray:
    return render_scene(_real_draw(cfg), cfg)


def toy_generated(cfg: ToyWorldConfig) -> np.ndarray:
    return _degrade(render_scene(_generated_draw(cfg), cfg), cfg)


def make_toy_pair(cfg: ToyWorldConfig) -> tuple[np.ndarray, np.ndarray]:
    """Independent real and generated ``size x size x 3`` images for one seed."""
    return toy_real(cfg), toy_generated(cfg)


def toy_images(count: int, kind: str, classes=(0,), corruption=0.0, mode_collapse=0.0,
               seed: int = 0, size: int = 64, **world):
    """A list of ``(image, class_id, corruption)`` drawn round-robin over ``classes``.

    ``corruption`` may be a scalar or a ``(lo, hi)`` range sampled per image.
    ``kind`` is ``"real"`` or ``"generated"``.
    """
    if kind not in ("real", "generated"):
        raise ValueError(f"kind must be 'real' or 'generated', got {kind!r}")
    rng = np.random.default_rng([seed, 0x70F])
    out = []
    for i in range(count):
        class_id = int(classes[i % len(classes)])
        if np.ndim(corruption):
            lo, hi = corruption
            c = float(rng.uniform(lo, hi))
        else:
            c = float(corruption)
        cfg = ToyWorldConfig(corruption=c, mode_collapse=mode_collapse, class_id=class_id,
                             seed=seed * 1_000_003 + i, size=size, **world)
        image = toy_generated(cfg) if kind == "generated" else toy_real(cfg)
        out.append((image, class_id, c))
    return out
