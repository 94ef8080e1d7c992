import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pixelcritic.autograd import ContractError, DimensionError, NumericError, Tensor, backward
from pixelcritic.collage import CollageSample
from pixelcritic.net import ArchConfig, build_model, load_model
from pixelcritic.synth import CollageParams, synthesize_training_set
from pixelcritic.toyworld import toy_images
from pixelcritic.training import (
    LossConfig,
    TrainConfig,
    detection_metrics,
    evaluate_detection,
    l2_penalty,
    loss_config_for,
    pixel_loss,
    train,
)

SMALL = CollageParams(radius_range=(2, 4))
LINEAR = LossConfig(lam=5.0, gamma=1.0, form="linear", normalize_by_area=True)

probs = st.floats(min_value=1e-6, max_value=1 - 1e-6)


def test_hand_computed_two_by_two():
    label = np.array([[1, 1], [0, 0]])
    p = np.array([[0.2, 0.4], [0.9, 0.6]])
    # (5*0.2 + 5*0.4 + 1*0.1 + 1*0.4) / 4
    assert abs(pixel_loss(p, label, cfg=LINEAR).item() - 0.875) <= 1e-12


def test_perfect_prediction_is_zero():
    label = np.array([[1, 0], [0, 1]], dtype=float)
    # P(E=1) at its closest representable values to the ideal 0/1
    p = np.where(label == 1, 5e-324, np.nextafter(1.0, 0.0))
    assert pixel_loss(p, label, cfg=LINEAR).item() <= 1e-12


@given(probs, st.floats(min_value=0.1, max_value=20))
def test_all_real_constant_prediction(p, lam):
    cfg = LossConfig(lam=lam, form="linear")
    loss = pixel_loss(np.full((3, 5), p), np.ones((3, 5)), cfg=cfg).item()
    assert abs(loss - lam * p) <= 1e-12 * max(1.0, lam)


def test_lambda_linearity():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.01, 0.99, size=(6, 6))
    base = pixel_loss(p, np.ones((6, 6)), cfg=LossConfig(lam=1.0)).item()
    for lam in (0.5, 2.0, 5.0, 7.25):
        loss = pixel_loss(p, np.ones((6, 6)), cfg=LossConfig(lam=lam)).item()
        assert abs(loss - lam * base) <= 1e-12


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10), st.floats(0.1, 10))
def test_swap_symmetry(seed, lam, gamma):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.01, 0.99, size=(4, 5))
    t = (rng.uniform(size=(4, 5)) < 0.5).astype(float)
    a = pixel_loss(p, t, cfg=LossConfig(lam=lam, gamma=gamma)).item()
    b = pixel_loss(1 - p, 1 - t, cfg=LossConfig(lam=gamma, gamma=lam)).item()
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@pytest.mark.parametrize("form", ["linear", "log"])
def test_unit_weight_map_is_bit_exact(form):
    rng = np.random.default_rng(1)
    p = rng.uniform(0.01, 0.99, size=(2, 1, 8, 8))
    t = (rng.uniform(size=p.shape) < 0.4).astype(float)
    cfg = LossConfig(form=form)
    assert pixel_loss(p, t, np.ones_like(p), cfg).item() == pixel_loss(p, t, None, cfg).item()


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["linear", "log"]))
def test_loss_nonnegative(seed, form):
    rng = np.random.default_rng(seed)
    p = rng.uniform(1e-6, 1 - 1e-6, size=(5, 5))
    t = (rng.uniform(size=(5, 5)) < 0.5).astype(float)
    assert pixel_loss(p, t, rng.uniform(size=(5, 5)), LossConfig(form=form)).item() >= 0


def test_log_form_values():
    p = np.array([[0.2, 0.9]])
    t = np.array([[1.0, 0.0]])
    cfg = LossConfig(lam=5, gamma=1, form="log", normalize_by_area=False)
    expected = 5 * -np.log(0.8) + 1 * -np.log(0.9)
    assert abs(pixel_loss(p, t, cfg=cfg).item() - expected) <= 1e-12


def test_area_normalization_flag():
    rng = np.random.default_rng(2)
    p, t = rng.uniform(0.1, 0.9, size=(4, 6)), np.ones((4, 6))
    summed = pixel_loss(p, t, cfg=LossConfig(normalize_by_area=False)).item()
    mean = pixel_loss(p, t, cfg=LossConfig(normalize_by_area=True)).item()
    assert abs(summed / 24 - mean) <= 1e-12


def test_loss_contract_and_shape_errors():
    with pytest.raises(ContractError):
        pixel_loss(np.array([[0.0, 0.5]]), np.array([[1, 0]]))
    with pytest.raises(ContractError):
        pixel_loss(np.array([[1.0, 0.5]]), np.array([[1, 0]]))
    with pytest.raises(DimensionError, match="label shape"):
        pixel_loss(np.full((2, 2), 0.5), np.ones((2, 3)))
    with pytest.raises(DimensionError, match="weight shape"):
        pixel_loss(np.full((2, 2), 0.5), np.ones((2, 2)), np.ones((3, 3)))


def test_loss_config_validation_and_presets():
    with pytest.raises(ValueError):
        LossConfig(lam=0)
    with pytest.raises(ValueError):
        LossConfig(l2_coeff=-1)
    with pytest.raises(ValueError):
        LossConfig(form="hinge")
    q, m = loss_config_for("quality"), loss_config_for("mode_collapse")
    assert (q.lam, q.gamma, q.l2_coeff) == (5.0, 1.0, 0.03)
    assert (m.lam, m.gamma, m.l2_coeff) == (2.0, 1.0, 0.3)
    assert LossConfig.from_dict(q.to_dict()) == q
    assert q.to_dict()["lambda"] == 5.0
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_l2_penalty_examples():
    assert l2_penalty([np.array([3.0, 4.0])], 0.0).item() == 0.0
    assert abs(l2_penalty([np.array([3.0, 4.0])], 0.03).item() - 0.75) <= 1e-12
    model = build_model(ArchConfig(input_size=(8, 8, 3), widths=(8, 8)), seed=0)
    base = l2_penalty(model, 0.03).item()
    for name in model.params:
        model.params[name].data = model.params[name].data * 2
    assert abs(l2_penalty(model, 0.03).item() - 4 * base) <= 1e-12 * base


def test_l2_skips_biases_and_gains():
    model = build_model(ArchConfig(input_size=(8, 8, 3), widths=(8, 8)), seed=0)
    before = l2_penalty(model, 1.0).item()
    for name, p in model.params.items():
        if not name.endswith(".w"):
            p.data = np.full(p.shape, 3.0)
    assert l2_penalty(model, 1.0).item() == before


def _tiny_samples(count, size=16, seed=0):
    real = toy_images(count, "real", classes=(0, 1), seed=seed, size=size)
    gen = toy_images(count, "generated", classes=(0, 1), corruption=0.8, seed=seed + 1, size=size)
    return synthesize_training_set(real, gen, count, SMALL, seed=seed)


TINY = ArchConfig(input_size=(16, 16, 3), widths=(8, 8), convs_per_stage=2)


def test_smoke_one_epoch_from_manifest(tmp_path):
    synthesize_training_set(
        toy_images(4, "real", classes=(0,), size=16), toy_images(4, "generated", classes=(0,), corruption=1.0, size=16),
        4, SMALL, out_dir=tmp_path / "data",
    )
    model, history = train(build_model(TINY), tmp_path / "data" / "manifest.jsonl",
                           TrainConfig(epochs=1, batch_size=2), out_dir=tmp_path / "run")
    assert len(history) == 1 and np.isfinite(history[0]["mean_loss"])
    assert set(history[0]) == {"epoch", "mean_loss", "wall_seconds"}
    assert (tmp_path / "run" / "model.pxc").exists()
    sidecar = json.loads((tmp_path / "run" / "model.json").read_text())
    assert sidecar["loss"]["lambda"] == 5.0 and sidecar["train"]["epochs"] == 1
    assert json.loads((tmp_path / "run" / "history.json").read_text())[0]["epoch"] == 1


def test_preset_selects_loss_and_checkpoint_cadence(tmp_path):
    train(build_model(TINY), _tiny_samples(4), TrainConfig(epochs=4, batch_size=4, preset="mode_collapse",
                                                           checkpoint_every=2), out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.glob("checkpoint_*.pxc")) == [
        "checkpoint_epoch002.pxc", "checkpoint_epoch004.pxc"]
    loss = json.loads((tmp_path / "model.json").read_text())["loss"]
    assert (loss["lambda"], loss["l2_coeff"]) == (2.0, 0.3)
    assert load_model(tmp_path / "checkpoint_epoch002.pxc").config == TINY


def test_training_is_deterministic(tmp_path):
    samples = _tiny_samples(6)
    runs = []
    for name in ("a", "b"):
        _, history = train(build_model(TINY, seed=3), samples, TrainConfig(epochs=2, batch_size=4, seed=7),
                           out_dir=tmp_path / name)
        runs.append(([(h["epoch"], h["mean_loss"]) for h in history],
                     (tmp_path / name / "model.pxc").read_bytes()))
    assert runs[0] == runs[1]


def test_training_reduces_loss():
    samples = _tiny_samples(8)
    _, history = train(build_model(TINY, seed=0), samples,
                       TrainConfig(epochs=12, batch_size=4, lr=3e-3), LossConfig(form="log"))
    assert history[-1]["mean_loss"] < history[0]["mean_loss"]


def test_unreadable_sample_aborts_with_path(tmp_path):
    synthesize_training_set(toy_images(2, "real", size=16), toy_images(2, "generated", size=16), 2,
                            SMALL, out_dir=tmp_path)
    (tmp_path / "images" / "00001.png").write_bytes(b"not a png")
    with pytest.raises(OSError, match="00001.png"):
        train(build_model(TINY), tmp_path / "manifest.jsonl", TrainConfig(epochs=1))


def test_nan_loss_aborts_with_epoch_and_batch():
    model = build_model(TINY)
    model.params["head.b"].data = np.array([np.nan])
    with pytest.raises(NumericError, match="epoch 1, batch 0"):
        train(model, _tiny_samples(2), TrainConfig(epochs=1))


def test_detection_metrics_reference_predictors():
    rng = np.random.default_rng(0)
    labels = [(rng.uniform(size=(8, 8)) < 0.5).astype(np.uint8) for _ in range(3)]
    exact = detection_metrics([1.0 - t for t in labels], labels)
    assert exact.auc == 1.0 and exact.precision == 1.0 and exact.recall == 1.0
    assert exact.per_image_auc == [1.0, 1.0, 1.0]
    flat = detection_metrics([np.full((8, 8), 0.5) for _ in labels], labels)
    assert flat.auc == 0.5
    with pytest.raises(ValueError, match="single class"):
        detection_metrics([np.full((4, 4), 0.3)], [np.ones((4, 4))])


def test_auc_matches_pairwise_count():
    rng = np.random.default_rng(5)
    scores = np.round(rng.uniform(size=(6, 6)), 1)  # coarse values force ties
    labels = (rng.uniform(size=(6, 6)) < 0.5).astype(int)
    pos, neg = scores[labels == 0], scores[labels == 1]
    pairs = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    assert abs(detection_metrics([scores], [labels]).auc - pairs / (pos.size * neg.size)) <= 1e-12


def test_evaluate_detection_runs_on_samples():
    samples = [s for s in _tiny_samples(4) if 0 < s.label.sum() < s.label.size]
    report = evaluate_detection(build_model(TINY), samples)
    assert 0.0 <= report.auc <= 1.0 and len(report.per_image_auc) == len(samples)
    with pytest.raises(ValueError):
        evaluate_detection(build_model(TINY), [CollageSample(np.zeros((16, 16, 3)), None, {})])


def test_gradient_flows_through_loss():
    p = Tensor(np.full((2, 2), 0.3), requires_grad=True)
    (g,) = backward(pixel_loss(p, np.array([[1, 0], [0, 1]]), cfg=LossConfig(normalize_by_area=False)), [p])
    np.testing.assert_allclose(g, [[5.0, -1.0], [-1.0, 5.0]])
