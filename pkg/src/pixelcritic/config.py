"""JSON run configuration with sections ``synth``, ``arch``, ``loss``, ``train`` and ``eval``.

Every field is optional. Unknown sections or keys are rejected so typos
fail loudly instead of silently using a default.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .net import ArchConfig, ConfigError
from .synth import CollageParams, params_to_dict
from .training import LossConfig, TrainConfig

__all__ = ["ConfigError", "SynthConfig", "EvalConfig", "RunConfig", "derive_seed"]


@dataclass(frozen=True)
class SynthConfig:
    kind: str = "collage"
    count: int = 200
    source_count: int | None = None
    classes: tuple[int, ...] = (0, 1, 2, 3)
    size: int = 64
    corruption: float | tuple[float, float] = (0.25, 1.0)
    mode_collapse: float = 0.0
    collage: CollageParams = field(default_factory=CollageParams)

    def __post_init__(self):
        if self.kind not in ("collage", "real", "generated"):
            raise ConfigError(f"synth.kind must be collage, real or generated, got {self.kind!r}")
        if self.count < 0:
            raise ConfigError("synth.count must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = list(self.classes)
        d["corruption"] = list(self.corruption) if isinstance(self.corruption, tuple) else self.corruption
        d["collage"] = params_to_dict(self.collage)
        return d


@dataclass(frozen=True)
class EvalConfig:
    k: int = 4
    per_class: bool = True
    extractor: str = "random_conv"
    encoder: str | None = None
    extractor_seed: int = 0
    baseline_seed: int = 0
    alpha: float = 0.5
    batch_size: int = 16

    def to_dict(self) -> dict:
        return asdict(self)


def _strict(cls, section: str, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}")
    return data


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        _strict(cls, "config", data)
        try:
            synth = dict(_strict(SynthConfig, "synth", data.get("synth", {})))
            collage = _strict(CollageParams, "synth.collage", synth.pop("collage", {}))
            synth = SynthConfig(collage=CollageParams(**_tuples(collage)), **_tuples(synth))
            arch = data.get("arch", {})
            arch = ArchConfig.from_dict(arch) if arch else ArchConfig()
            loss = dict(data.get("loss", {}))
            if "lambda" in loss:
                loss["lam"] = loss.pop("lambda")
            loss = LossConfig(**_strict(LossConfig, "loss", loss))
            train = TrainConfig(**_strict(TrainConfig, "train", data.get("train", {})))
            ev = EvalConfig(**_strict(EvalConfig, "eval", data.get("eval", {})))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(synth=synth, arch=arch, loss=loss, train=train, eval=ev)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "synth": self.synth.to_dict(),
            "arch": self.arch.to_dict(),
            "loss": self.loss.to_dict(),
            "train": asdict(self.train),
            "eval": self.eval.to_dict(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, seed=seed))


def derive_seed(seed: int, component: str) -> int:
    """Independent 31-bit seed for a named pipeline component."""
    state = np.random.SeedSequence([int(seed), zlib.crc32(component.encode())]).generate_state(1)[0]
    return int(state) & 0x7FFFFFFF
