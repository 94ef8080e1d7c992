import math

import numpy as np
import pytest

from pixelcritic.collage import (
    CollageSample,
    ParameterError,
    apply_circular_artifact,
    collage,
    field_to_alpha,
    perlin_field,
)
from pixelcritic.imageio import read_label, read_png, to_bytes, write_label, write_png
from pixelcritic.synth import (
    CollageParams,
    MissingClassError,
    load_samples,
    read_manifest,
    synthesize_training_set,
)
from pixelcritic.toyworld import ToyWorldConfig, layout_mask, make_toy_pair, toy_images, toy_layouts


def _toy_sources(n=24, classes=(0, 1, 2), size=32, seed=0):
    real = toy_images(n, "real", classes=classes, seed=seed, size=size)
    gen = toy_images(n, "generated", classes=classes, corruption=(0.0, 1.0), seed=seed + 1, size=size)
    return real, gen


# --- Perlin -------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_perlin_raw_zero_on_lattice_nodes(seed):
    raw = perlin_field(64, 48, 4, seed, normalize=False)
    nodes = raw[::16, ::12]
    assert nodes.shape == (4, 4)
    assert np.all(nodes == 0.0)


@pytest.mark.parametrize("seed", range(20))
def test_perlin_deterministic(seed):
    a = perlin_field(40, 56, 5, seed, octaves=2)
    b = perlin_field(40, 56, 5, seed, octaves=2)
    assert a.tobytes() == b.tobytes()


def test_perlin_normalized_range_and_seed_dependence():
    a, b = perlin_field(32, 32, 4, 1), perlin_field(32, 32, 4, 2)
    assert a.min() == 0.0 and a.max() == 1.0
    assert not np.array_equal(a, b)


def test_perlin_continuity_bound():
    # bound frozen from a sweep over these 100 seeds (observed max 0.126)
    worst = 0.0
    for seed in range(100):
        f = perlin_field(64, 64, 4, seed)
        worst = max(worst, np.abs(np.diff(f, axis=0)).max(), np.abs(np.diff(f, axis=1)).max())
    assert worst < 0.15


def test_perlin_parameter_errors():
    with pytest.raises(ParameterError):
        perlin_field(32, 32, 1, 0)
    with pytest.raises(ParameterError):
        perlin_field(4, 32, 4, 0)


# --- alpha ---------------------------------------------------------------------

def test_alpha_constant_one():
    assert np.all(field_to_alpha(np.ones((8, 8)), 0.5, 0.2) == 1.0)


def test_alpha_hard_threshold():
    out = field_to_alpha(np.array([[0.4, 0.6]]), 0.5, 0.0)
    assert out.tolist() == [[0.0, 1.0]]


def test_alpha_centered_on_threshold():
    f = np.linspace(0, 1, 1001).reshape(1, -1)
    for softness in (0.0, 0.05, 0.3):
        a = field_to_alpha(f, 0.37, softness)
        assert np.array_equal(a >= 0.5, f >= 0.37)
        assert a.min() >= 0.0 and a.max() <= 1.0


def test_alpha_real_fraction_decreases_with_threshold():
    thresholds = np.linspace(0.1, 0.9, 9)
    for seed in range(10):
        f = perlin_field(64, 64, 4, seed)
        fractions = [(field_to_alpha(f, t, 0.1) >= 0.5).mean() for t in thresholds]
        expected_alpha = [field_to_alpha(f, t, 0.1).mean() for t in thresholds]
        assert all(x >= y for x, y in zip(fractions, fractions[1:]))
        assert all(x > y for x, y in zip(expected_alpha, expected_alpha[1:]))


# --- collage ---------------------------------------------------------------------

@pytest.fixture
def pair():
    rng = np.random.default_rng(0)
    return rng.random((16, 16, 3)), rng.random((16, 16, 3))


def test_collage_all_real(pair):
    real, gen = pair
    s = collage(real, gen, np.ones((16, 16)))
    assert np.array_equal(s.image, real) and np.all(s.label == 1)


def test_collage_all_generated(pair):
    real, gen = pair
    s = collage(real, gen, np.zeros((16, 16)))
    assert np.array_equal(s.image, gen) and np.all(s.label == 0)


def test_collage_half_alpha_is_midpoint_labeled_real(pair):
    real, gen = pair
    s = collage(real, gen, np.full((16, 16), 0.5))
    np.testing.assert_allclose(s.image, (real + gen) / 2, atol=1e-15)
    assert np.all(s.label == 1)


def test_collage_dimension_mismatch_names_operand(pair):
    real, gen = pair
    with pytest.raises(ValueError, match="alpha"):
        collage(real, gen, np.ones((8, 16)))
    with pytest.raises(ValueError, match="generated"):
        collage(real, gen[:8], np.ones((16, 16)))


def test_label_consistency_hard_masks_100_toy_collages():
    for seed in range(100):
        cfg = ToyWorldConfig(corruption=(seed % 5) / 4, class_id=seed % 3, seed=seed, size=32)
        real, gen = make_toy_pair(cfg)
        alpha = field_to_alpha(perlin_field(32, 32, 4, seed), 0.5, 0.0)
        s = collage(real, gen, alpha)
        from_real = np.all(s.image == real, axis=-1)
        assert np.array_equal(s.label == 1, from_real)


# --- circular artifacts -------------------------------------------------------------

def _all_real_sample(n=32, seed=0):
    img = np.random.default_rng(seed).random((n, n, 3))
    return CollageSample(image=img.copy(), label=np.ones((n, n), dtype=np.uint8)), img


def test_artifact_zero_radius_is_noop():
    s, src = _all_real_sample()
    out = apply_circular_artifact(s, src, (0, 0), seed=3)
    assert np.array_equal(out.image, s.image) and np.array_equal(out.label, s.label)


def test_artifact_identity_rotation_same_center():
    s, src = _all_real_sample()
    out = apply_circular_artifact(s, src, (5, 5), seed=1, angle=0.0, src_center=(15, 12), dst_center=(15, 12))
    assert np.array_equal(out.image, s.image)
    yy, xx = np.mgrid[0:32, 0:32]
    disc = (yy - 15) ** 2 + (xx - 12) ** 2 <= 25
    assert np.all(out.label[disc] == 0) and np.all(out.label[~disc] == 1)


def _lattice_points_in_disc(r):
    return sum(1 for y in range(-r, r + 1) for x in range(-r, r + 1) if x * x + y * y <= r * r)


@pytest.mark.parametrize("r", [1, 2, 3, 5, 8, 11])
def test_artifact_label_count_matches_rasterized_disc(r):
    s, src = _all_real_sample(n=40)
    out = apply_circular_artifact(s, src, (r, r), seed=r, dst_center=(20, 20))
    added = int((out.label == 0).sum() - (s.label == 0).sum())
    assert added == _lattice_points_in_disc(r)
    assert math.pi * (r - 1) ** 2 <= added <= math.pi * r * r + 2 * math.pi * r + 1


def test_artifact_copies_rotated_source_pixels():
    s, src = _all_real_sample(n=32, seed=4)
    out = apply_circular_artifact(s, src, (4, 4), seed=0, angle=np.pi / 2, src_center=(10, 10), dst_center=(20, 22))
    # quarter turn: destination offset (dy, dx) reads source offset (dx, -dy)
    for dy, dx in [(0, 0), (1, 0), (0, 3), (-2, 1), (3, -2)]:
        assert np.array_equal(out.image[20 + dy, 22 + dx], src[10 + dx, 10 - dy])


def test_artifact_never_sets_label_to_one():
    for seed in range(30):
        label = (np.random.default_rng(seed).random((32, 32)) > 0.5).astype(np.uint8)
        s = CollageSample(image=np.zeros((32, 32, 3)), label=label)
        out = apply_circular_artifact(s, np.ones((32, 32, 3)), (2, 9), seed=seed)
        assert not np.any((out.label == 1) & (label == 0))


def test_artifact_clipped_at_border():
    s, src = _all_real_sample()
    out = apply_circular_artifact(s, src, (6, 6), seed=0, dst_center=(0, 31))
    assert 0 < (out.label == 0).sum() < _lattice_points_in_disc(6)


def test_artifact_parameter_errors():
    s, src = _all_real_sample()
    with pytest.raises(ParameterError):
        apply_circular_artifact(s, src, (5, 3), seed=0)
    with pytest.raises(ParameterError):
        apply_circular_artifact(s, src, (2, 16), seed=0)


# --- toy world ----------------------------------------------------------------------

def test_toy_zero_corruption_generated_is_real_sampler():
    # with c=0, m=0 the generated image is an ordinary draw of the real sampler
    from pixelcritic.toyworld import render_scene, _generated_draw
    cfg = ToyWorldConfig(seed=5, class_id=2)
    _, gen = make_toy_pair(cfg)
    assert np.array_equal(gen, render_scene(_generated_draw(cfg), cfg))
    reals = np.stack([make_toy_pair(ToyWorldConfig(seed=s))[0] for s in range(40)])
    gens = np.stack([make_toy_pair(ToyWorldConfig(seed=s))[1] for s in range(40)])
    assert abs(reals.mean() - gens.mean()) < 0.02
    assert abs(reals.std() - gens.std()) < 0.02


def test_toy_full_collapse_shares_layout():
    for class_id in range(3):
        masks = [layout_mask(toy_layouts(ToyWorldConfig(mode_collapse=1.0, class_id=class_id, seed=s))[1], 64)
                 for s in range(10)]
        assert all(np.array_equal(masks[0], m) for m in masks[1:])
    reals = [layout_mask(toy_layouts(ToyWorldConfig(mode_collapse=1.0, seed=s))[0], 64) for s in range(5)]
    assert not all(np.array_equal(reals[0], m) for m in reals[1:])


def test_toy_corruption_monotone_deviation():
    levels = [0.0, 0.25, 0.5, 0.75, 1.0]
    means = []
    for c in levels:
        diffs = []
        for s in range(100):
            base = make_toy_pair(ToyWorldConfig(corruption=0.0, seed=s, class_id=s % 3))[1]
            gen = make_toy_pair(ToyWorldConfig(corruption=c, seed=s, class_id=s % 3))[1]
            diffs.append(np.abs(gen - base).mean())
        means.append(np.mean(diffs))
    assert means[0] == 0.0
    assert all(a < b for a, b in zip(means, means[1:]))


def test_toy_images_in_unit_range_and_config_validation():
    for img, _, _ in toy_images(6, "generated", classes=(0, 1), corruption=(0, 1), seed=3):
        assert img.shape == (64, 64, 3) and img.min() >= 0 and img.max() <= 1
    with pytest.raises(ValueError):
        ToyWorldConfig(corruption=1.5)


# --- PNG and manifests ---------------------------------------------------------------------

def test_png_roundtrip_quantization(tmp_path):
    img = np.random.default_rng(0).random((9, 7, 3))
    write_png(tmp_path / "a.png", img)
    back = read_png(tmp_path / "a.png")
    assert np.array_equal(to_bytes(back), to_bytes(img))
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_label_png_values(tmp_path):
    label = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    write_label(tmp_path / "l.png", label)
    from PIL import Image
    assert sorted(np.unique(np.array(Image.open(tmp_path / "l.png"))).tolist()) == [0, 255]
    assert np.array_equal(read_label(tmp_path / "l.png"), label)


def test_synth_count_zero(tmp_path):
    real, gen = _toy_sources(3)
    assert synthesize_training_set(real, gen, 0, seed=1, out_dir=tmp_path) == []
    assert (tmp_path / "manifest.jsonl").read_text() == ""
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.jsonl"]


def test_synth_same_seed_byte_identical(tmp_path):
    real, gen = _toy_sources(12)
    synthesize_training_set(real, gen, 10, seed=7, out_dir=tmp_path / "a")
    synthesize_training_set(real, gen, 10, seed=7, out_dir=tmp_path / "b", threads=3)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) == 21
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_synth_manifest_roundtrip(tmp_path):
    real, gen = _toy_sources(12)
    samples = synthesize_training_set(real, gen, 4, seed=3, out_dir=tmp_path)
    records = read_manifest(tmp_path / "manifest.jsonl")
    assert [set(r) - {"root"} for r in records] == [{"image", "label", "class", "tag", "seed"}] * 4
    assert [r["seed"] for r in records] == [3, 4, 5, 6]
    assert all(r["tag"] == "collage" for r in records)
    loaded = load_samples(records)
    for s, l in zip(samples, loaded):
        assert np.array_equal(s.label, l.label)
        assert np.abs(s.image - l.image).max() <= 0.5 / 255 + 1e-12


def test_synth_within_class_pairing():
    real, gen = _toy_sources(12, classes=(0, 1, 2))
    for s in synthesize_training_set(real, gen, 30, seed=0):
        p = s.provenance
        assert real[p["real_index"]][1] == gen[p["generated_index"]][1] == int(p["class"])


def test_synth_missing_class_listed():
    real = toy_images(4, "real", classes=(0,), size=32)
    gen = toy_images(4, "generated", classes=(0, 1, 2), size=32)
    with pytest.raises(MissingClassError, match="1, 2"):
        synthesize_training_set(real, gen, 5)


def test_synth_real_fraction_band():
    # band frozen after measurement: mean real fraction 0.487 over these 1000 samples
    real = toy_images(100, "real", classes=(0, 1, 2, 3), seed=1)
    gen = toy_images(100, "generated", classes=(0, 1, 2, 3), corruption=(0, 1), seed=2)
    samples = synthesize_training_set(real, gen, 1000, CollageParams(threshold=0.5), seed=0)
    frac = np.mean([s.label.mean() for s in samples])
    assert 0.35 <= frac <= 0.65
