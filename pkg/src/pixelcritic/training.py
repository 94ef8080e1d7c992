"""Weighted per-pixel loss and the Adam training loop.

The loss penalises two mistakes separately: flagging a real pixel as an
error (weight ``lam``) and missing an error on a generated pixel (weight
``gamma``). Flagging real pixels is the worse mistake by default (5 vs 1).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import ops
from .autograd import ContractError, DimensionError, NumericError, Tensor, as_tensor, backward
from .net import Model, predict, save_model
from .optim import Adam
from .synth import load_samples, read_manifest

log = logging.getLogger(__name__)

__all__ = [
    "LossConfig",
    "TrainConfig",
    "PRESETS",
    "loss_config_for",
    "pixel_loss",
    "l2_penalty",
    "train",
    "DetectionReport",
    "detection_metrics",
    "evaluate_detection",
]

PRESETS = {
    "quality": {"lam": 5.0, "gamma": 1.0, "l2_coeff": 0.03},
    "mode_collapse": {"lam": 2.0, "gamma": 1.0, "l2_coeff": 0.3},
}


@dataclass(frozen=True)
class LossConfig:
    lam: float = 5.0
    gamma: float = 1.0
    l2_coeff: float = 0.03
    form: str = "linear"
    normalize_by_area: bool = True

    def __post_init__(self):
        if self.lam <= 0 or self.gamma <= 0:
            raise ValueError("lambda and gamma must be > 0")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be >= 0")
        if self.form not in ("linear", "log"):
            raise ValueError(f"loss form must be 'linear' or 'log', got {self.form!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


def loss_config_for(preset: str, **overrides) -> LossConfig:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return LossConfig(**{**PRESETS[preset], **overrides})


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 2e-4
    seed: int = 0
    checkpoint_every: int = 0
    preset: str | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.preset is not None and self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")


def pixel_loss(errmap, label, weight=None, cfg: LossConfig = LossConfig()) -> Tensor:
    """Weighted two-term loss of an error map against a real/generated label map.

    ``errmap`` holds ``P(E=1)`` and ``label`` holds T (1 = real pixel). The
    linear form sums ``lam*T*P + gamma*(1-T)*(1-P)``; the log form replaces
    ``P`` by ``-log(1-P)`` and ``1-P`` by ``-log(P)``. The sum runs over the
    last two axes and is divided by their area when ``normalize_by_area``;
    any leading (batch) axes are averaged.
    """
    p = as_tensor(errmap)
    t = np.asarray(label, dtype=np.float64)
    if t.shape != p.shape:
        raise DimensionError(f"label shape {t.shape} does not match error map {p.shape}")
    if weight is not None:
        weight = np.asarray(weight, dtype=np.float64)
        if weight.shape != p.shape:
            raise DimensionError(f"weight shape {weight.shape} does not match error map {p.shape}")
    if np.any(p.data <= 0.0) or np.any(p.data >= 1.0):
        raise ContractError("error probabilities must lie strictly inside (0, 1)")

    not_p = ops.sub(1.0, p)
    if cfg.form == "linear":
        false_alarm, miss = p, not_p
    else:
        false_alarm, miss = ops.mul(ops.log(not_p), -1.0), ops.mul(ops.log(p), -1.0)
    per_pixel = ops.add(ops.mul(false_alarm, cfg.lam * t), ops.mul(miss, cfg.gamma * (1.0 - t)))
    if weight is not None:
        per_pixel = ops.mul(per_pixel, weight)
    total = ops.sum(per_pixel, axis=(-2, -1))
    if cfg.normalize_by_area:
        total = ops.mul(total, 1.0 / (p.shape[-1] * p.shape[-2]))
    return ops.mean(total) if total.ndim else total


def l2_penalty(model_or_weights, coeff: float) -> Tensor:
    """``coeff`` times the summed squares of all weight tensors.

    Accepts a :class:`Model` (biases and attention gains are skipped) or an
    iterable of tensors/arrays that are all treated as weights.
    """
    if coeff < 0:
        raise ValueError("coeff must be >= 0")
    if isinstance(model_or_weights, Model):
        weights = [model_or_weights.params[n] for n in model_or_weights.weight_names()]
    else:
        weights = [as_tensor(w) for w in model_or_weights]
    total = Tensor(0.0)
    if coeff == 0:
        return total
    for w in weights:
        total = ops.add(total, ops.sum(ops.mul(w, w)))
    return ops.mul(total, coeff)


def _stack_samples(samples, channels: int):
    images = np.stack([np.asarray(s.image, dtype=np.float64).reshape(s.image.shape[0], s.image.shape[1], -1)
                       for s in samples])
    if images.shape[-1] != channels:
        raise DimensionError(f"samples have {images.shape[-1]} channels, model expects {channels}")
    labels = np.stack([np.asarray(s.label, dtype=np.float64) for s in samples])
    return images.transpose(0, 3, 1, 2), labels[:, None]


def _as_samples(data):
    if isinstance(data, (str, Path)):
        return load_samples(read_manifest(data))
    data = list(data)
    if data and isinstance(data[0], dict):
        return load_samples(data)
    return data


def train(model: Model, data, train_cfg: TrainConfig = TrainConfig(), loss_cfg: LossConfig | None = None,
          out_dir=None, weights=None):
    """Minimise the pixel loss plus L2 over collage samples with Adam.

    ``data`` is a manifest path, a list of manifest records or a list of
    :class:`~pixelcritic.collage.CollageSample`. ``weights`` optionally gives
    one per-pixel weight map per sample. Each epoch shuffles the samples
    with a generator seeded from ``train_cfg.seed``. Returns ``(model,
    history)``; history entries are ``{"epoch", "mean_loss", "wall_seconds"}``.
    """
    if loss_cfg is None:
        loss_cfg = loss_config_for(train_cfg.preset) if train_cfg.preset else LossConfig()
    samples = _as_samples(data)
    if not samples:
        raise ValueError("training data is empty")
    if any(s.label is None for s in samples):
        raise ValueError("every training sample needs a label map")
    images, labels = _stack_samples(samples, model.config.input_size[2])
    weight_maps = None if weights is None else np.stack([np.asarray(w, dtype=np.float64) for w in weights])[:, None]

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    provenance = {"loss": loss_cfg.to_dict(), "train": asdict(train_cfg)}

    opt = Adam(model.params, lr=train_cfg.lr)
    names = list(model.params)
    tensors = [model.params[n] for n in names]
    rng = np.random.default_rng(train_cfg.seed)
    history = []
    n = len(samples)
    for epoch in range(1, train_cfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for b, lo in enumerate(range(0, n, train_cfg.batch_size)):
            idx = order[lo : lo + train_cfg.batch_size]
            w = None if weight_maps is None else weight_maps[idx]
            try:
                pred = model(Tensor(images[idx]))
                loss = ops.add(pixel_loss(pred, labels[idx], w, loss_cfg), l2_penalty(model, loss_cfg.l2_coeff))
                grads = backward(loss, tensors)
                opt.step(dict(zip(names, grads)))
            except NumericError as exc:
                raise NumericError(f"numeric failure at epoch {epoch}, batch {b}: {exc}") from exc
            losses.append(loss.item() * len(idx))
        mean_loss = float(np.sum(losses) / n)
        history.append({"epoch": epoch, "mean_loss": mean_loss,
                        "wall_seconds": round(time.perf_counter() - start, 3)})
        log.info("epoch %d mean loss %.6f", epoch, mean_loss)
        if out is not None and train_cfg.checkpoint_every and epoch % train_cfg.checkpoint_every == 0:
            save_model(model, out / f"checkpoint_epoch{epoch:03d}.pxc", provenance)

    if out is not None:
        save_model(model, out / "model.pxc", provenance)
        (out / "history.json").write_text(json.dumps(history, indent=2) + "\n")
    return model, history


@dataclass
class DetectionReport:
    auc: float
    precision: float
    recall: float
    per_image_auc: list = field(default_factory=list)


def _auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Mann-Whitney estimate of ROC AUC (ties count one half)."""
    pos = positives.astype(bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when labels contain a single class")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def detection_metrics(error_maps, labels, threshold: float = 0.5) -> DetectionReport:
    """Pixel AUC and precision/recall for detecting error pixels (T = 0)."""
    scores = np.concatenate([np.ravel(m) for m in error_maps])
    errors = np.concatenate([np.ravel(np.asarray(t) == 0) for t in labels])
    auc = _auc(scores, errors)
    flagged = scores >= threshold
    tp = int((flagged & errors).sum())
    precision = tp / int(flagged.sum()) if flagged.any() else float("nan")
    recall = tp / int(errors.sum())
    per_image = []
    for m, t in zip(error_maps, labels):
        e = np.ravel(np.asarray(t) == 0)
        per_image.append(_auc(np.ravel(m), e) if 0 < e.sum() < e.size else float("nan"))
    return DetectionReport(auc=auc, precision=precision, recall=recall, per_image_auc=per_image)


def evaluate_detection(model: Model, data, threshold: float = 0.5) -> DetectionReport:
    samples = _as_samples(data)
    if any(s.label is None for s in samples):
        raise ValueError("evaluation samples need label maps")
    maps = predict(model, np.stack([s.image for s in samples]))
    return detection_metrics(maps, [s.label for s in samples], threshold)
