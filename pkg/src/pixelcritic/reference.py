"""The seeded desk-scale reference runs used by the acceptance suite and demos.

Everything here is fixed: class set, seeds, architecture and optimiser
settings. Changing any of it changes the measured numbers the acceptance
thresholds were checked against.
"""

from __future__ import annotations

import numpy as np

from .features import ConvFeatureExtractor, train_encoder
from .net import ArchConfig, Model, build_model
from .synth import CollageParams, synthesize_training_set
from .toyworld import toy_images
from .training import LossConfig, TrainConfig, loss_config_for, train

CLASSES = (0, 1, 2, 3)

# 64x64 detector: 4 stages keep the decoder attention at 16x16, which is
# what makes a 30-epoch CPU run fit in a few minutes
ARCH = ArchConfig(input_size=(64, 64, 3), widths=(8, 16, 32, 32))
# the linear form stalls at P ~ 0 everywhere from the first epochs; the
# log form trains. Summing over pixels keeps the L2 term from dominating.
LOSS = LossConfig(lam=5.0, gamma=1.0, l2_coeff=0.03, form="log", normalize_by_area=False)
TRAIN = TrainConfig(epochs=30, batch_size=16, lr=1e-3, seed=0)
TRAIN_CORRUPTION = (0.25, 1.0)

# 32x32 detectors for the mode-collapse check, one per seed
COLLAPSE_ARCH = ArchConfig(input_size=(32, 32, 3), widths=(8, 16, 32))
COLLAPSE_TRAIN = TrainConfig(epochs=20, batch_size=16, lr=1e-3)
COLLAPSE_COLLAGE = CollageParams(radius_range=(2, 5))


def training_collages(count: int = 200):
    real = toy_images(count, "real", CLASSES, seed=1)
    gen = toy_images(count, "generated", CLASSES, corruption=TRAIN_CORRUPTION, seed=2)
    return synthesize_training_set(real, gen, count, seed=100)


def heldout_collages(count: int = 80):
    real = toy_images(count, "real", CLASSES, seed=11)
    gen = toy_images(count, "generated", CLASSES, corruption=TRAIN_CORRUPTION, seed=12)
    return synthesize_training_set(real, gen, count, seed=9000)


def train_detector(out_dir=None) -> tuple[Model, list]:
    """The reference detector: about 5 minutes on one CPU core."""
    model = build_model(ARCH, seed=0)
    return train(model, training_collages(), TRAIN, LOSS, out_dir=out_dir)


def train_reference_encoder(path=None) -> ConvFeatureExtractor:
    data = toy_images(240, "real", CLASSES, seed=50)
    return train_encoder(np.stack([im for im, _, _ in data]), [c for _, c, _ in data], epochs=8, seed=0, path=path)


def reference_real(count: int = 512) -> np.ndarray:
    return np.stack([im for im, _, _ in toy_images(count, "real", CLASSES, seed=60)])


def graded_generated(count: int = 1024):
    """``(images, class_ids, corruptions)`` with corruption uniform on [0, 1]."""
    data = toy_images(count, "generated", CLASSES, corruption=(0.0, 1.0), seed=61)
    return np.stack([im for im, _, _ in data]), [c for _, c, _ in data], [c for _, _, c in data]


def train_collapse_detector(seed: int) -> Model:
    """32x32 detector trained with the mode-collapse loss preset.

    Its generated sources are half collapsed (``mode_collapse=0.5``) with
    mild corruption, as from a GAN that is decent but repetitive.
    """
    size = COLLAPSE_ARCH.input_size[0]
    real = toy_images(200, "real", CLASSES, seed=1000 + seed, size=size)
    gen = toy_images(200, "generated", CLASSES, corruption=(0.0, 0.5), mode_collapse=0.5,
                     seed=2000 + seed, size=size)
    samples = synthesize_training_set(real, gen, 200, COLLAPSE_COLLAGE, seed=3000 + seed)
    loss = loss_config_for("mode_collapse", form="log", normalize_by_area=False)
    cfg = TrainConfig(epochs=COLLAPSE_TRAIN.epochs, batch_size=COLLAPSE_TRAIN.batch_size,
                      lr=COLLAPSE_TRAIN.lr, seed=seed, preset="mode_collapse")
    model, _ = train(build_model(COLLAPSE_ARCH, seed=seed), samples, cfg, loss)
    return model
