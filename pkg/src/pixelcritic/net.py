"""Encoder-decoder error detector.

Each encoder stage runs ``convs_per_stage`` 3x3 conv+ReLU layers with an
identity shortcut around every pair of convs, then average-pools by 2
before the next stage. The decoder mirrors it: nearest upsample, concat
with the matching encoder output, conv stage. Self-attention layers with a
zero-initialised residual gain can sit after any encoder or decoder stage.
A final 1x1 conv and sigmoid give one error probability per pixel.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .autograd import DimensionError, Tensor, no_grad
from .checkpoint import load_params, save_params

__all__ = [
    "ConfigError",
    "ArchConfig",
    "Model",
    "build_model",
    "self_attention",
    "forward",
    "predict",
    "save_model",
    "load_model",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyper-parameters.

    ``encoder_attention`` / ``decoder_attention`` default to the deepest
    encoder stage and the first (deepest) decoder stage. ``injection`` maps
    an encoder stage index to the number of external feature channels
    concatenated onto that stage's input.
    """

    input_size: tuple[int, int, int] = (64, 64, 3)
    widths: tuple[int, ...] = (16, 32, 64)
    convs_per_stage: int = 5
    kernel_size: int = 3
    encoder_attention: tuple[int, ...] | None = None
    decoder_attention: tuple[int, ...] | None = None
    attention_reduction: int = 8
    injection: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "input_size", tuple(int(v) for v in self.input_size))
        set_(self, "widths", tuple(int(v) for v in self.widths))
        set_(self, "injection", {int(k): int(v) for k, v in dict(self.injection).items()})
        S = len(self.widths)
        if self.encoder_attention is None:
            set_(self, "encoder_attention", (S - 1,))
        if self.decoder_attention is None:
            set_(self, "decoder_attention", (S - 2,) if S >= 2 else ())
        set_(self, "encoder_attention", tuple(int(v) for v in self.encoder_attention))
        set_(self, "decoder_attention", tuple(int(v) for v in self.decoder_attention))
        self.validate()

    @property
    def stages(self) -> int:
        return len(self.widths)

    def validate(self) -> None:
        S = self.stages
        n, m, c = self.input_size
        if S < 2:
            raise ConfigError(f"need at least 2 stages, got {S}")
        if self.convs_per_stage < 1:
            raise ConfigError("convs_per_stage must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")
        if c < 1 or any(w < 1 for w in self.widths):
            raise ConfigError("channel counts must be positive")
        step = 2 ** (S - 1)
        if n % step or m % step:
            raise ConfigError(f"input {n}x{m} is not divisible by 2^(stages-1) = {step}")
        for s in self.encoder_attention:
            if not 0 <= s < S:
                raise ConfigError(f"encoder attention index {s} outside 0..{S - 1}")
            self._check_attention_width(self.widths[s])
        for s in self.decoder_attention:
            if not 0 <= s < S - 1:
                raise ConfigError(f"decoder attention index {s} outside 0..{S - 2}")
            self._check_attention_width(self.widths[s])
        for s, k in self.injection.items():
            if not 0 <= s < S or k < 0:
                raise ConfigError(f"invalid injection entry stage={s}, channels={k}")

    def _check_attention_width(self, channels: int) -> None:
        r = self.attention_reduction
        if channels < r or channels % r:
            raise ConfigError(f"attention needs channels divisible by {r} and >= {r}, got {channels}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["widths"] = list(self.widths)
        d["encoder_attention"] = list(self.encoder_attention)
        d["decoder_attention"] = list(self.decoder_attention)
        d["injection"] = {str(k): v for k, v in sorted(self.injection.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown arch keys: {sorted(unknown)}")
        return cls(**d)


def _conv_specs(cfg: ArchConfig):
    """Yield ``(name, shape)`` for every parameter, in a fixed order."""
    k = cfg.kernel_size
    S, widths, c_in = cfg.stages, cfg.widths, cfg.input_size[2]

    def conv(prefix, cin, cout, ks=k):
        return [(f"{prefix}.w", (cout, cin, ks, ks)), (f"{prefix}.b", (cout,))]

    def attention(prefix, ch):
        red = ch // cfg.attention_reduction
        return (conv(f"{prefix}.f", ch, red, 1) + conv(f"{prefix}.g", ch, red, 1)
                + conv(f"{prefix}.h", ch, ch, 1) + [(f"{prefix}.gain", ())])

    specs = []
    for s in range(S):
        cin = (c_in if s == 0 else widths[s - 1]) + cfg.injection.get(s, 0)
        for j in range(cfg.convs_per_stage):
            specs += conv(f"enc{s}.conv{j}", cin if j == 0 else widths[s], widths[s])
        if s in cfg.encoder_attention:
            specs += attention(f"enc{s}.attn", widths[s])
    for s in reversed(range(S - 1)):
        cin = widths[s + 1] + widths[s]
        for j in range(cfg.convs_per_stage):
            specs += conv(f"dec{s}.conv{j}", cin if j == 0 else widths[s], widths[s])
        if s in cfg.decoder_attention:
            specs += attention(f"dec{s}.attn", widths[s])
    specs += conv("head", widths[0], 1, 1)
    return specs


def _residual_closers(cfg: ArchConfig) -> set[str]:
    """Names of the second conv in each residual pair (zero-initialised)."""
    closers = set()
    j = 1
    while j + 1 < cfg.convs_per_stage:
        closers.add(f"conv{j + 1}")
        j += 2
    return closers


def _init_param(name: str, shape, seed: int, closers=frozenset()) -> np.ndarray:
    if name.endswith(".b") or name.endswith(".gain"):
        return np.zeros(shape)
    if name.endswith(".w") and name.split(".")[-2] in closers:
        # residual branches start as zero, so each block is the identity at init
        return np.zeros(shape)
    # per-name stream: a parameter's value does not depend on which others exist
    rng = np.random.default_rng([int(seed), zlib.crc32(name.encode())])
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def self_attention(x: Tensor, f_w, f_b, g_w, g_b, h_w, h_b, gain, return_attention: bool = False):
    """Residual spatial self-attention on ``x[B, C, H, W]``.

    Queries and keys are 1x1 projections to ``C/8`` channels, values a 1x1
    projection to ``C`` channels. For each output position ``j`` the
    weights ``softmax_i(f_i . g_j)`` over all positions ``i`` mix the values;
    the result is scaled by ``gain`` and added to ``x``.
    """
    B, C, H, W = x.shape
    if C < 8:
        raise ConfigError(f"self-attention needs at least 8 channels, got {C}")
    n = H * W
    f = ops.reshape(ops.conv2d(x, f_w, f_b), (B, -1, n))  # B, C', n
    g = ops.reshape(ops.conv2d(x, g_w, g_b), (B, -1, n))
    h = ops.reshape(ops.conv2d(x, h_w, h_b), (B, C, n))
    scores = ops.matmul(ops.transpose(g, (0, 2, 1)), f)  # [b, j, i] = g_j . f_i
    attn = ops.softmax(scores, axis=-1)
    mixed = ops.matmul(h, ops.transpose(attn, (0, 2, 1)))  # [b, c, j] = sum_i h[c, i] attn[j, i]
    out = ops.add(x, ops.mul(ops.reshape(mixed, (B, C, H, W)), gain))
    if return_attention:
        return out, attn
    return out


def _resample_to(features: np.ndarray, h: int, w: int) -> np.ndarray:
    fh, fw = features.shape[-2:]
    if (fh, fw) == (h, w):
        return features
    if fh % h == 0 and fw % w == 0 and fh // h == fw // w:
        return ops.pool2d_avg(Tensor(features), fh // h).data
    if h % fh == 0 and w % fw == 0 and h // fh == w // fw:
        return ops.upsample_nearest(Tensor(features), h // fh).data
    raise DimensionError(f"cannot resample injected features {fh}x{fw} to {h}x{w}")


class Model:
    """Named parameters plus the architecture that wires them.

    ``extractor``, when set, is a callable ``(images[B, C, H, W], stage) ->
    features[B, k, h, w]`` whose output is concatenated at the stages listed
    in ``config.injection``. Configured stages without an extractor receive
    zeros.
    """

    def __init__(self, config: ArchConfig, params: dict[str, Tensor], extractor=None):
        self.config = config
        self.params = params
        self.extractor = extractor

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def weight_names(self) -> list[str]:
        return [n for n in self.params if n.endswith(".w")]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.params.items()}

    def _conv(self, prefix: str, x, padding: int | None = None):
        w = self.params[f"{prefix}.w"]
        pad = w.shape[-1] // 2 if padding is None else padding
        return ops.conv2d(x, w, self.params[f"{prefix}.b"], padding=pad)

    def _stage(self, prefix: str, x):
        n = self.config.convs_per_stage
        a = ops.relu(self._conv(f"{prefix}.conv0", x))
        j = 1
        while j + 1 < n:
            h = ops.relu(self._conv(f"{prefix}.conv{j}", a))
            a = ops.relu(ops.add(a, self._conv(f"{prefix}.conv{j + 1}", h)))
            j += 2
        if j < n:
            a = ops.relu(self._conv(f"{prefix}.conv{j}", a))
        return a

    def _attention(self, prefix: str, x):
        p = self.params
        return self_attention(
            x, p[f"{prefix}.f.w"], p[f"{prefix}.f.b"], p[f"{prefix}.g.w"], p[f"{prefix}.g.b"],
            p[f"{prefix}.h.w"], p[f"{prefix}.h.b"], p[f"{prefix}.gain"],
        )

    def _injected(self, images: np.ndarray, stage: int, h: int, w: int) -> np.ndarray:
        budget = self.config.injection[stage]
        B = images.shape[0]
        if self.extractor is None:
            return np.zeros((B, budget, h, w))
        feats = np.asarray(self.extractor(images, stage), dtype=np.float64)
        if feats.ndim != 4 or feats.shape[0] != B:
            raise DimensionError(f"extractor returned shape {feats.shape} for batch of {B}")
        if feats.shape[1] > budget:
            raise ConfigError(
                f"extractor gave {feats.shape[1]} channels at stage {stage}, budget is {budget}"
            )
        feats = _resample_to(feats, h, w)
        if feats.shape[1] < budget:
            pad = np.zeros((B, budget - feats.shape[1], h, w))
            feats = np.concatenate([feats, pad], axis=1)
        return feats

    def __call__(self, x) -> Tensor:
        """Map a batch ``x[B, C, N, M]`` in [0, 1] to error probabilities ``[B, 1, N, M]``."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        n, m, c = cfg.input_size
        if x.shape[1:] != (c, n, m):
            raise DimensionError(f"expected input [B, {c}, {n}, {m}], got {list(x.shape)}")
        raw = x.data
        h = ops.sub(ops.mul(x, 2.0), 1.0)
        skips = []
        for s in range(cfg.stages):
            if s > 0:
                h = ops.pool2d_avg(h, 2)
            if s in cfg.injection:
                h = ops.concat([h, Tensor(self._injected(raw, s, h.shape[2], h.shape[3]))], axis=1)
            h = self._stage(f"enc{s}", h)
            if s in cfg.encoder_attention:
                h = self._attention(f"enc{s}.attn", h)
            skips.append(h)
        for s in reversed(range(cfg.stages - 1)):
            h = ops.concat([ops.upsample_nearest(h, 2), skips[s]], axis=1)
            h = self._stage(f"dec{s}", h)
            if s in cfg.decoder_attention:
                h = self._attention(f"dec{s}.attn", h)
        return ops.sigmoid(self._conv("head", h, padding=0))


def build_model(config: ArchConfig, seed: int = 0, extractor=None) -> Model:
    closers = _residual_closers(config)
    params = {
        name: Tensor(_init_param(name, shape, seed, closers), requires_grad=True, name=name)
        for name, shape in _conv_specs(config)
    }
    return Model(config, params, extractor)


def _to_batch(images, config: ArchConfig) -> np.ndarray:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    n, m, c = config.input_size
    if arr.ndim != 4 or arr.shape[1:] != (n, m, c):
        raise DimensionError(f"expected image(s) of shape {n}x{m}x{c}, got {arr.shape[-3:]}")
    return arr.transpose(0, 3, 1, 2)


def forward(model: Model, image: np.ndarray) -> np.ndarray:
    """Error map ``P(E=1 | x, i, j)`` of shape ``N x M`` for one ``N x M x C`` image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    n, m, c = model.config.input_size
    if image.shape != (n, m, c):
        raise DimensionError(f"image has dims {image.shape}, model expects {(n, m, c)}")
    return predict(model, image[None])[0]


def predict(model: Model, images, batch_size: int = 16) -> np.ndarray:
    """Error maps ``[B, N, M]`` for a stack of ``N x M x C`` images.

    Batches are formed in fixed chunks, so results do not depend on how the
    caller splits its work.
    """
    batch = _to_batch(images, model.config)
    out = []
    with no_grad():
        for start in range(0, len(batch), batch_size):
            out.append(model(Tensor(batch[start : start + batch_size])).data[:, 0])
    if not out:
        n, m, _ = model.config.input_size
        return np.zeros((0, n, m))
    return np.concatenate(out, axis=0)


def save_model(model: Model, path, extra: dict | None = None) -> None:
    """Write ``path`` (PXC1 parameters) and ``path`` with suffix ``.json`` (architecture)."""
    path = Path(path)
    save_params(path, model.state_dict())
    sidecar = {"arch": model.config.to_dict()}
    if extra:
        sidecar.update(extra)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_model(path, extractor=None) -> Model:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    meta = json.loads(path.with_suffix(".json").read_text())
    config = ArchConfig.from_dict(meta["arch"])
    stored = load_params(path)
    expected = dict(_conv_specs(config))
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise ConfigError(f"checkpoint does not match architecture: missing {missing}, unexpected {extra}")
    params = {name: Tensor(stored[name], requires_grad=True, name=name) for name in expected}
    return Model(config, params, extractor)
