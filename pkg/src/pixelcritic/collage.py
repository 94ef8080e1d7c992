"""Labeled collages of real and generated images.

A Perlin gradient-noise field is turned into a soft alpha mask that blends
a real image (alpha = 1) with a generated one (alpha = 0). Pixels whose
alpha is at least 0.5 are labeled real (T = 1). Discs of real pixels
copied, rotated and pasted elsewhere add "misplaced content" artifacts,
labeled as errors (T = 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ParameterError",
    "CollageSample",
    "perlin_field",
    "fade",
    "field_to_alpha",
    "collage",
    "apply_circular_artifact",
    "disc_offsets",
]


class ParameterError(ValueError):
    pass


@dataclass
class CollageSample:
    image: np.ndarray
    label: np.ndarray
    provenance: dict = field(default_factory=dict)


def fade(t):
    """Quintic fade 6t^5 - 15t^4 + 10t^3."""
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _gradient_noise(n: int, m: int, cells: int, rng: np.random.Generator) -> np.ndarray:
    angles = rng.uniform(0.0, 2.0 * np.pi, size=(cells + 1, cells + 1))
    gy, gx = np.sin(angles), np.cos(angles)

    y = np.arange(n) * (cells / n)
    x = np.arange(m) * (cells / m)
    iy, ix = np.floor(y).astype(int), np.floor(x).astype(int)
    fy, fx = (y - iy)[:, None], (x - ix)[None, :]
    iy, ix = iy[:, None], ix[None, :]

    def corner(dy, dx):
        return gy[iy + dy, ix + dx] * (fy - dy) + gx[iy + dy, ix + dx] * (fx - dx)

    u, v = fade(fx), fade(fy)
    top = corner(0, 0) + u * (corner(0, 1) - corner(0, 0))
    bottom = corner(1, 0) + u * (corner(1, 1) - corner(1, 0))
    return top + v * (bottom - top)


def perlin_field(n: int, m: int, lattice_cells: int, seed: int, octaves: int = 1,
                 normalize: bool = True) -> np.ndarray:
    """Gradient noise on an ``n x m`` grid with ``lattice_cells`` cells per axis.

    Random unit gradients sit on the lattice nodes; each pixel dots its
    offsets to the four surrounding nodes with their gradients and blends
    the results with the quintic fade. Extra octaves double the lattice
    density and halve the amplitude. With ``normalize`` the field is mapped
    affinely onto [0, 1].
    """
    if lattice_cells < 2:
        raise ParameterError(f"lattice_cells must be >= 2, got {lattice_cells}")
    if n < 8 or m < 8:
        raise ParameterError(f"field must be at least 8x8, got {n}x{m}")
    if octaves < 1:
        raise ParameterError(f"octaves must be >= 1, got {octaves}")
    rng = np.random.default_rng(seed)
    raw = np.zeros((n, m))
    amplitude = 1.0
    for octave in range(octaves):
        raw += amplitude * _gradient_noise(n, m, lattice_cells * 2**octave, rng)
        amplitude *= 0.5
    if not normalize:
        return raw
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def field_to_alpha(field: np.ndarray, threshold: float = 0.5, softness: float = 0.1) -> np.ndarray:
    """Soft threshold of a [0, 1] field into an alpha mask.

    The smoothstep ramp is centred on ``threshold`` and ``softness`` wide,
    so alpha >= 0.5 exactly where ``field >= threshold`` for any softness.
    ``softness == 0`` is a hard threshold.
    """
    if not 0.0 < threshold < 1.0:
        raise ParameterError(f"threshold must lie in (0, 1), got {threshold}")
    if softness < 0:
        raise ParameterError(f"softness must be >= 0, got {softness}")
    field = np.asarray(field, dtype=np.float64)
    if softness == 0:
        return (field >= threshold).astype(np.float64)
    t = np.clip((field - threshold) / softness + 0.5, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _check_same(name: str, shape, expected) -> None:
    if tuple(shape) != tuple(expected):
        raise ValueError(f"{name} has shape {tuple(shape)}, expected {tuple(expected)}")


def collage(real: np.ndarray, generated: np.ndarray, alpha: np.ndarray) -> CollageSample:
    real = np.asarray(real, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    _check_same("generated", generated.shape, real.shape)
    _check_same("alpha", alpha.shape, real.shape[:2])
    a = alpha[..., None] if real.ndim == 3 else alpha
    image = a * real + (1.0 - a) * generated
    label = (alpha >= 0.5).astype(np.uint8)
    return CollageSample(image=image, label=label, provenance={})


def disc_offsets(radius: int) -> np.ndarray:
    """Integer ``(dy, dx)`` offsets with ``dy^2 + dx^2 <= radius^2``; empty for radius 0."""
    if radius <= 0:
        return np.zeros((0, 2), dtype=int)
    r = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    inside = dy * dy + dx * dx <= radius * radius
    return np.stack([dy[inside], dx[inside]], axis=1)


def apply_circular_artifact(sample: CollageSample, source: np.ndarray, radius_range=(2, 6),
                            seed: int = 0, *, angle: float | None = None,
                            src_center=None, dst_center=None) -> CollageSample:
    """Paste a rotated disc of ``source`` pixels into ``sample``.

    The radius is uniform over ``radius_range`` (inclusive), the source disc
    lies fully inside ``source``, the destination centre is uniform over the
    image and the paste is clipped at the borders. Rotation uses
    nearest-neighbour inverse mapping. Every pasted pixel is labeled 0.
    The keyword overrides pin the random draws.
    """
    lo, hi = (int(v) for v in radius_range)
    N, M = sample.label.shape
    if lo < 0 or hi < lo:
        raise ParameterError(f"invalid radius range {radius_range}")
    if hi >= min(N, M) / 2:
        raise ParameterError(f"max radius {hi} must be < min(N, M)/2 = {min(N, M) / 2}")
    source = np.asarray(source, dtype=np.float64)
    _check_same("source", source.shape, sample.image.shape)

    rng = np.random.default_rng(seed)
    radius = int(rng.integers(lo, hi + 1))
    theta = rng.uniform(0.0, 2.0 * np.pi) if angle is None else float(angle)
    if src_center is None:
        src_center = (int(rng.integers(radius, N - radius)), int(rng.integers(radius, M - radius)))
    if dst_center is None:
        dst_center = (int(rng.integers(0, N)), int(rng.integers(0, M)))

    offsets = disc_offsets(radius)
    image, label = sample.image.copy(), sample.label.copy()
    record = {"radius": radius, "angle": theta, "src": list(src_center), "dst": list(dst_center)}
    provenance = dict(sample.provenance)
    provenance["artifacts"] = list(provenance.get("artifacts", [])) + [record]
    if len(offsets) == 0:
        return CollageSample(image=image, label=label, provenance=provenance)

    dy, dx = offsets[:, 0].astype(float), offsets[:, 1].astype(float)
    c, s = np.cos(theta), np.sin(theta)
    sy = np.rint(c * dy + s * dx).astype(int) + src_center[0]
    sx = np.rint(-s * dy + c * dx).astype(int) + src_center[1]
    sy, sx = np.clip(sy, 0, N - 1), np.clip(sx, 0, M - 1)
    ty, tx = offsets[:, 0] + dst_center[0], offsets[:, 1] + dst_center[1]
    keep = (ty >= 0) & (ty < N) & (tx >= 0) & (tx < M)
    image[ty[keep], tx[keep]] = source[sy[keep], sx[keep]]
    label[ty[keep], tx[keep]] = 0
    return CollageSample(image=image, label=label, provenance=provenance)
