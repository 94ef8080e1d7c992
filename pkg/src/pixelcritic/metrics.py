"""PD scores, PD-ranked splits and Fréchet distances between feature sets.

PD of an image is the mean of its error map. Ranking by PD and splitting
into ``k`` tiers, then measuring each tier's Fréchet distance to one fixed
real reference set, shows whether PD tracks sample quality.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

__all__ = [
    "PDScore",
    "pd_score",
    "region_pd",
    "class_mean_pd",
    "class_offset_pd",
    "Split",
    "SplitReport",
    "SplitError",
    "rank_and_split",
    "GaussianStats",
    "gaussian_stats",
    "frechet_distance",
    "evaluate_splits",
    "split_spearman",
    "write_scores_csv",
    "read_scores_csv",
    "write_features",
    "read_features",
    "report_to_json",
]

# eigenvalues down to -EIG_TOL * max(1, largest eigenvalue) count as round-off
EIG_TOL = 1e-8
FEATURE_MAGIC = b"PXF1"


@dataclass(frozen=True)
class PDScore:
    value: float
    id: int | str | None = None
    class_id: str | None = None

    def __float__(self) -> float:
        return float(self.value)


def pd_score(errmap, id=None, class_id=None) -> PDScore:  # noqa: A002
    """Mean error probability over all pixels."""
    errmap = np.asarray(errmap, dtype=np.float64)
    return PDScore(float(errmap.mean()), id, None if class_id is None else str(class_id))


def region_pd(errmap, region) -> float:
    """Weighted mean ``sum(w * P) / sum(w)`` over a (soft) region mask."""
    errmap = np.asarray(errmap, dtype=np.float64)
    region = np.asarray(region, dtype=np.float64)
    if region.shape != errmap.shape:
        raise ValueError(f"region shape {region.shape} does not match error map {errmap.shape}")
    if np.any(region < 0):
        raise ValueError("region weights must be non-negative")
    total = region.sum()
    if not total > 0:
        raise ValueError("region is empty")
    return float((region * errmap).sum() / total)


def class_mean_pd(scores) -> dict[str, float]:
    groups: dict[str, list[float]] = {}
    for s in scores:
        groups.setdefault(str(s.class_id), []).append(s.value)
    return {c: float(np.mean(v)) for c, v in sorted(groups.items())}


def class_offset_pd(gen_scores: dict, real_scores: dict) -> dict:
    """Per-class generated mean PD minus real mean PD."""
    gen_only = sorted(map(str, set(gen_scores) - set(real_scores)))
    real_only = sorted(map(str, set(real_scores) - set(gen_scores)))
    if gen_only or real_only:
        raise ValueError(
            f"class sets differ: generated only {gen_only or 'none'}, real only {real_only or 'none'}"
        )
    return {c: float(gen_scores[c]) - float(real_scores[c]) for c in gen_scores}


@dataclass
class Split:
    index: int
    members: list
    mean_pd: float
    frechet: float | None = None


@dataclass
class SplitReport:
    splits: list[Split]
    random_baseline: float | None = None
    per_class: bool = False
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "splits": [{"index": s.index, "mean_pd": s.mean_pd, "frechet": s.frechet} for s in self.splits],
            "random_baseline": self.random_baseline,
        }

    def table(self) -> str:
        """Plain-text table, one row per split plus the random baseline."""

        def fmt(v):
            return "-" if v is None else f"{v:.4f}"

        lines = [f"{'split':>5}  {'size':>5}  {'mean_pd':>8}  {'frechet':>10}"]
        for s in self.splits:
            lines.append(f"{s.index:>5}  {len(s.members):>5}  {s.mean_pd:>8.4f}  {fmt(s.frechet):>10}")
        lines.append(f"{'random':>5}  {len(self.splits[0].members) if self.splits else 0:>5}  "
                     f"{'':>8}  {fmt(self.random_baseline):>10}")
        return "\n".join(lines)


class SplitError(ValueError):
    pass


def _nearest_multiple(n: int, k: int) -> int:
    lo = (n // k) * k
    hi = lo + k
    return lo if (n - lo <= hi - n and lo > 0) else hi


def _ranked(scores):
    # worst first; equal PD falls back to ascending id
    return sorted(scores, key=lambda s: (-s.value, s.id))


def rank_and_split(scores, k: int, per_class: bool = False) -> SplitReport:
    """Sort by descending PD and cut into ``k`` equal splits (split 1 = worst).

    With ``per_class`` every class is ranked on its own and rank tier ``r``
    of each class goes into split ``r``, so all splits keep the class mix.
    """
    scores = list(scores)
    if k < 2:
        raise SplitError(f"k must be >= 2, got {k}")
    ids = [s.id for s in scores]
    if len(set(ids)) != len(ids):
        raise SplitError("sample ids must be unique")
    if per_class:
        groups: dict[str, list[PDScore]] = {}
        for s in scores:
            groups.setdefault(str(s.class_id), []).append(s)
        for c, members in sorted(groups.items()):
            if len(members) % k:
                raise SplitError(
                    f"class {c} has {len(members)} samples, not divisible by k={k}; "
                    f"use {_nearest_multiple(len(members), k)} per class"
                )
        buckets = [[] for _ in range(k)]
        for c, members in sorted(groups.items()):
            size = len(members) // k
            ranked = _ranked(members)
            for r in range(k):
                buckets[r].extend(ranked[r * size : (r + 1) * size])
    else:
        if not scores or len(scores) % k:
            raise SplitError(
                f"{len(scores)} samples is not divisible by k={k}; use {_nearest_multiple(len(scores), k)}"
            )
        size = len(scores) // k
        ranked = _ranked(scores)
        buckets = [ranked[r * size : (r + 1) * size] for r in range(k)]
    splits = [
        Split(index=r + 1, members=[s.id for s in b], mean_pd=float(np.mean([s.value for s in b])))
        for r, b in enumerate(buckets)
    ]
    return SplitReport(splits=splits, per_class=per_class)


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int


def gaussian_stats(features) -> GaussianStats:
    """Sample mean and unbiased (n - 1) covariance, symmetrised."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be a 2-D array of vectors, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError(f"need at least 2 feature vectors, got {x.shape[0]}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    return GaussianStats(mean=mean, cov=(cov + cov.T) / 2, count=x.shape[0])


def _clamped_eigvalsh(sym: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(sym)
    tol = EIG_TOL * max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.size and vals.min() < -tol:
        raise ArithmeticError(f"{what} is not positive semi-definite (eigenvalue {vals.min():.3e})")
    return np.clip(vals, 0.0, None), vecs


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Squared Fréchet distance between two Gaussians.

    ``Tr((Sa Sb)^(1/2))`` is taken from the eigenvalues of the symmetric
    matrix ``Sa^(1/2) Sb Sa^(1/2)``, which has the same spectrum.
    """
    if a.mean.shape != b.mean.shape or a.cov.shape != b.cov.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape[0]} vs {b.mean.shape[0]}")
    va, ua = _clamped_eigvalsh(a.cov, "first covariance")
    _clamped_eigvalsh(b.cov, "second covariance")
    sqrt_a = (ua * np.sqrt(va)) @ ua.T
    inner = sqrt_a @ b.cov @ sqrt_a
    vi, _ = _clamped_eigvalsh((inner + inner.T) / 2, "covariance product")
    diff = a.mean - b.mean
    d2 = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.sqrt(vi).sum())
    return max(d2, 0.0)


def evaluate_splits(report: SplitReport, generated_features: dict, reference_features, seed: int = 0) -> SplitReport:
    """Fill in each split's Fréchet distance to the reference set.

    ``generated_features`` maps sample id to feature vector. The random
    baseline is a seeded uniform draw without replacement of one split's
    size from all generated samples.
    """
    ref = gaussian_stats(reference_features)
    for s in report.splits:
        if len(s.members) < 2:
            raise SplitError(f"split {s.index} has {len(s.members)} member(s); need at least 2")
        s.frechet = frechet_distance(gaussian_stats([generated_features[i] for i in s.members]), ref)
    pool = sorted(i for s in report.splits for i in s.members)
    size = len(report.splits[0].members)
    pick = np.random.default_rng(seed).choice(len(pool), size=size, replace=False)
    baseline = gaussian_stats([generated_features[pool[j]] for j in sorted(pick)])
    report.random_baseline = frechet_distance(baseline, ref)
    return report


def split_spearman(report: SplitReport) -> float:
    """Spearman rank correlation between split index and Fréchet distance."""
    idx = [s.index for s in report.splits]
    dist = [s.frechet for s in report.splits]
    return float(spearmanr(idx, dist).statistic)


def write_scores_csv(path, scores) -> None:
    """``id,class,pd`` rows in the given order; PD is written at full precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "class", "pd"])
        for s in scores:
            writer.writerow([s.id, "" if s.class_id is None else s.class_id, repr(float(s.value))])


def read_scores_csv(path) -> list[PDScore]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "class", "pd"]:
            raise ValueError(f"{path}: expected header id,class,pd, got {reader.fieldnames}")
        for row in reader:
            raw_id = row["id"]
            sid = int(raw_id) if raw_id.lstrip("-").isdigit() else raw_id
            out.append(PDScore(float(row["pd"]), sid, row["class"] or None))
    return out


def write_features(path, features) -> None:
    """PXF1 dump: magic, u32 count, u32 dim, then float64 little-endian rows."""
    x = np.asarray(features, dtype="<f8")
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<II", *x.shape) + np.ascontiguousarray(x).tobytes())


def read_features(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a PXF1 feature dump")
    count, dim = struct.unpack_from("<II", blob, 4)
    body = blob[12:]
    if len(body) != count * dim * 8:
        raise ValueError(f"{path}: expected {count}x{dim} float64 values, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(count, dim).astype(np.float64)


def report_to_json(report: SplitReport) -> str:
    return json.dumps(report.to_json(), indent=2) + "\n"
