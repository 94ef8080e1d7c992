"""Feature extractors that stand in for a pretrained embedding network.

Both extractors share one layout: three 3x3 conv + ReLU stages (average
pooling by 2 between them) and a global average pool, giving 64-d vectors.
``random_conv`` keeps the seeded random weights; ``trained_encoder`` trains
them as the body of a small classifier on real toy images.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import ops
from .autograd import Tensor, backward, no_grad
from .checkpoint import load_params, save_params
from .optim import Adam

__all__ = [
    "ConvFeatureExtractor",
    "random_conv",
    "train_encoder",
    "load_encoder",
    "default_feature_extractor",
]

WIDTHS = (16, 32, 64)


def _init_weights(seed: int, in_channels: int, widths=WIDTHS) -> dict[str, np.ndarray]:
    params = {}
    cin = in_channels
    for s, w in enumerate(widths):
        rng = np.random.default_rng([seed, s])
        params[f"stage{s}.w"] = rng.normal(0.0, np.sqrt(2.0 / (cin * 9)), size=(w, cin, 3, 3))
        params[f"stage{s}.b"] = np.zeros(w)
        cin = w
    return params


class ConvFeatureExtractor:
    """Deterministic map from ``[n, H, W, C]`` images to ``[n, 64]`` features."""

    def __init__(self, params: dict[str, np.ndarray], name: str, meta: dict | None = None):
        self.params = {k: Tensor(v) for k, v in params.items()}
        self.name = name
        self.meta = dict(meta or {})
        self.stages = sum(1 for k in params if k.endswith(".w") and k.startswith("stage"))
        self.dim = self.params[f"stage{self.stages - 1}.w"].shape[0]

    def embed(self, x: Tensor) -> Tensor:
        """Differentiable path on an NCHW batch; returns ``[n, dim]``."""
        h = ops.sub(ops.mul(x, 2.0), 1.0)
        for s in range(self.stages):
            if s > 0:
                h = ops.pool2d_avg(h, 2)
            h = ops.relu(ops.conv2d(h, self.params[f"stage{s}.w"], self.params[f"stage{s}.b"], padding=1))
        return ops.mean(h, axis=(2, 3))

    def __call__(self, images, batch_size: int = 32) -> np.ndarray:
        arr = np.asarray(images, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        arr = arr.transpose(0, 3, 1, 2)
        out = []
        with no_grad():
            for lo in range(0, len(arr), batch_size):
                out.append(self.embed(Tensor(arr[lo : lo + batch_size])).data)
        return np.concatenate(out) if out else np.zeros((0, self.dim))


def random_conv(seed: int = 0, in_channels: int = 3) -> ConvFeatureExtractor:
    return ConvFeatureExtractor(_init_weights(seed, in_channels), "random_conv", {"seed": seed})


def train_encoder(images, labels, epochs: int = 5, batch_size: int = 16, lr: float = 1e-3,
                  seed: int = 0, path=None) -> ConvFeatureExtractor:
    """Train the conv stack as a linear-softmax classifier of ``labels``.

    The classifier head is discarded; the returned extractor keeps the
    trained conv stack. With ``path`` the weights and a JSON sidecar are saved.
    """
    x = np.asarray(images, dtype=np.float64).transpose(0, 3, 1, 2)
    classes = sorted(set(int(v) for v in labels))
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[int(v)] for v in labels])
    if len(classes) < 2:
        raise ValueError("the encoder classifier needs at least two classes")

    extractor = ConvFeatureExtractor(_init_weights(seed, x.shape[1]), "trained_encoder")
    params = {k: Tensor(v.data, requires_grad=True, name=k) for k, v in extractor.params.items()}
    rng = np.random.default_rng([seed, 0xE7C])
    params["head.w"] = Tensor(rng.normal(0.0, np.sqrt(1.0 / extractor.dim), size=(extractor.dim, len(classes))),
                              requires_grad=True, name="head.w")
    params["head.b"] = Tensor(np.zeros(len(classes)), requires_grad=True, name="head.b")
    extractor.params = params
    opt = Adam(params, lr=lr)
    names = list(params)

    for _ in range(epochs):
        order = rng.permutation(len(x))
        for lo in range(0, len(x), batch_size):
            idx = order[lo : lo + batch_size]
            logits = ops.add(ops.matmul(extractor.embed(Tensor(x[idx])), params["head.w"]), params["head.b"])
            onehot = np.eye(len(classes))[y[idx]]
            loss = ops.mul(ops.sum(ops.mul(ops.log(ops.softmax(logits, axis=1)), onehot)), -1.0 / len(idx))
            grads = backward(loss, [params[n] for n in names])
            opt.step(dict(zip(names, grads)))

    body = {k: v.data for k, v in params.items() if k.startswith("stage")}
    meta = {"kind": "trained_encoder", "classes": classes, "epochs": epochs, "seed": seed,
            "in_channels": int(x.shape[1])}
    trained = ConvFeatureExtractor(body, "trained_encoder", meta)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_params(path, body)
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return trained


def load_encoder(path) -> ConvFeatureExtractor:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"encoder checkpoint not found: {path}")
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return ConvFeatureExtractor(load_params(path), "trained_encoder", meta)


def default_feature_extractor(mode: str = "random_conv", seed: int = 0, checkpoint=None) -> ConvFeatureExtractor:
    if mode == "random_conv":
        return random_conv(seed)
    if mode == "trained_encoder":
        if checkpoint is None:
            raise FileNotFoundError("trained_encoder needs a checkpoint path")
        return load_encoder(checkpoint)
    raise ValueError(f"unknown extractor mode {mode!r}; use 'random_conv' or 'trained_encoder'")
