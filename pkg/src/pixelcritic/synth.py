"""Batch synthesis of collage training sets and their JSON Lines manifests.

Manifest records look like::

    {"image": "images/00000.png", "label": "labels/00000.png",
     "class": "3", "tag": "collage", "seed": 17}

Paths are relative to the directory holding ``manifest.jsonl``.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .collage import CollageSample, ParameterError, apply_circular_artifact, collage, field_to_alpha, perlin_field
from .imageio import read_label, read_png, write_label, write_png

MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class CollageParams:
    lattice_cells: tuple[int, int] = (3, 6)
    octaves: int = 1
    threshold: float = 0.5
    softness: float = 0.1
    max_artifacts: int = 3
    radius_range: tuple[int, int] = (3, 8)
    within_class: bool = True


class MissingClassError(ValueError):
    pass


def _class_of(entry):
    return entry[1] if isinstance(entry, tuple) and len(entry) > 1 else None


def _image_of(entry):
    return entry[0] if isinstance(entry, tuple) else entry


def make_collage_sample(real_source, generated_source, params: CollageParams, seed: int,
                        real_by_class=None) -> CollageSample:
    """One collage drawn with its own ``seed``; sources are lists of ``(image, class, ...)``."""
    rng = np.random.default_rng(seed)
    gi = int(rng.integers(len(generated_source)))
    generated = np.asarray(_image_of(generated_source[gi]), dtype=np.float64)
    cls = _class_of(generated_source[gi])
    candidates = real_by_class[cls] if (params.within_class and real_by_class and cls is not None) else None
    if candidates is None:
        ri = int(rng.integers(len(real_source)))
    else:
        ri = int(candidates[int(rng.integers(len(candidates)))])
    real = np.asarray(_image_of(real_source[ri]), dtype=np.float64)

    lo, hi = params.lattice_cells
    cells = int(rng.integers(lo, hi + 1))
    field = perlin_field(real.shape[0], real.shape[1], cells, int(rng.integers(2**31)), octaves=params.octaves)
    sample = collage(real, generated, field_to_alpha(field, params.threshold, params.softness))
    n_artifacts = int(rng.integers(0, params.max_artifacts + 1))
    for _ in range(n_artifacts):
        sample = apply_circular_artifact(sample, real, params.radius_range, int(rng.integers(2**31)))
    sample.provenance.update(
        seed=int(seed), real_index=ri, generated_index=gi,
        **{"class": None if cls is None else str(cls)}, lattice_cells=cells,
    )
    return sample


def synthesize_training_set(real_source, generated_source, count: int, params: CollageParams | None = None,
                            seed: int = 0, out_dir: str | os.PathLike | None = None,
                            threads: int = 1) -> list[CollageSample]:
    """Draw ``count`` collages; sample ``i`` uses seed ``seed + i``.

    Sources are sequences of images or ``(image, class_id, ...)`` tuples.
    With ``params.within_class`` and labelled sources each generated image is
    paired with a real image of its own class. When ``out_dir`` is given the
    images, label maps and ``manifest.jsonl`` are written there.
    """
    params = params or CollageParams()
    if count < 0:
        raise ParameterError("count must be >= 0")
    if count and (not len(real_source) or not len(generated_source)):
        raise ValueError("real and generated sources must be non-empty")

    real_by_class = None
    if params.within_class and any(_class_of(e) is not None for e in generated_source):
        real_by_class: dict = {}
        for i, e in enumerate(real_source):
            real_by_class.setdefault(_class_of(e), []).append(i)
        needed = {_class_of(e) for e in generated_source}
        absent = sorted(str(c) for c in needed if c not in real_by_class)
        if absent:
            raise MissingClassError(f"real source has no images for classes: {', '.join(absent)}")

    def one(i):
        return make_collage_sample(real_source, generated_source, params, seed + i, real_by_class)

    if threads > 1 and count > 1:
        with ThreadPoolExecutor(threads) as pool:
            samples = list(pool.map(one, range(count)))
    else:
        samples = [one(i) for i in range(count)]

    if out_dir is not None:
        write_samples(samples, out_dir, tag="collage")
    return samples


def write_samples(samples, out_dir, tag: str = "collage") -> Path:
    """Write images, label maps and ``manifest.jsonl``; returns the manifest path.

    ``samples`` may hold :class:`CollageSample` objects or ``(image, label,
    class, seed)`` tuples; ``label`` may be ``None``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if len(samples):
        (out / "images").mkdir(exist_ok=True)
    records = []
    for i, s in enumerate(samples):
        if isinstance(s, CollageSample):
            image, label = s.image, s.label
            cls, seed = s.provenance.get("class"), s.provenance.get("seed")
        else:
            image, label, cls, seed = s
        rel_image = f"images/{i:05d}.png"
        write_png(out / rel_image, image)
        rel_label = None
        if label is not None:
            (out / "labels").mkdir(exist_ok=True)
            rel_label = f"labels/{i:05d}.png"
            write_label(out / rel_label, label)
        records.append({
            "image": rel_image,
            "label": rel_label,
            "class": None if cls is None else str(cls),
            "tag": tag,
            "seed": None if seed is None else int(seed),
        })
    path = out / MANIFEST_NAME
    write_manifest(path, records)
    return path


def write_manifest(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_manifest(path) -> list[dict]:
    """Records with an extra ``"root"`` key holding the manifest directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                rec["root"] = str(path.parent)
                records.append(rec)
    return records


def resolve(record: dict, key: str = "image") -> Path:
    return Path(record["root"]) / record[key]


def load_samples(records) -> list[CollageSample]:
    """Read image and label files for manifest records."""
    out = []
    for rec in records:
        path = resolve(rec)
        try:
            image = read_png(path)
            label = read_label(resolve(rec, "label")) if rec.get("label") else None
        except (OSError, ValueError) as exc:
            raise OSError(f"cannot read sample {path}: {exc}") from exc
        if image.ndim == 2:
            image = image[..., None]
        prov = {"class": rec.get("class"), "seed": rec.get("seed"), "path": str(path)}
        out.append(CollageSample(image=image, label=label, provenance=prov))
    return out


def params_to_dict(params: CollageParams) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(params).items()}
