"""``pixelcritic`` command line: synth, train, score, rank, splits, heatmap.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .autograd import DimensionError
from .collage import ParameterError
from .config import ConfigError, RunConfig, derive_seed
from .features import default_feature_extractor, train_encoder
from .heatmap import write_heatmap
from .imageio import read_png, write_png
from .metrics import (
    PDScore,
    evaluate_splits,
    rank_and_split,
    read_scores_csv,
    report_to_json,
    write_scores_csv,
)
from .net import build_model, load_model, predict
from .synth import load_samples, read_manifest, resolve, synthesize_training_set, write_samples
from .toyworld import toy_images
from .training import loss_config_for, train

log = logging.getLogger("pixelcritic")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pixelcritic", description="Pixel-level error detection for generated images.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()

    p = sub.add_parser("synth", parents=[common], help="write toy real, generated or collage sets")
    p.add_argument("--count", type=int, help="number of images to write")
    p.add_argument("--kind", choices=["collage", "real", "generated"])
    p.add_argument("--size", type=int, help="image side length")

    p = sub.add_parser("train", parents=[common], help="train the detector (or the feature encoder)")
    p.add_argument("manifest", type=Path)
    p.add_argument("--preset", choices=["quality", "mode_collapse"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--encoder", action="store_true",
                   help="train the feature encoder on a labelled real manifest instead")

    p = sub.add_parser("score", parents=[common], help="write per-image PD scores")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("inputs", type=Path, nargs="*", help="manifests, directories with a manifest, or PNG files")
    p.add_argument("--save-maps", action="store_true", help="also write error maps as 8-bit PNGs")

    for name, text in (("rank", "split a score table by PD"), ("splits", "split by PD and measure Fréchet distances")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("scores", type=Path)
        if name == "splits":
            p.add_argument("generated", type=Path, help="manifest of the scored generated images")
            p.add_argument("reference", type=Path, help="manifest of real reference images")
            p.add_argument("--extractor", choices=["random_conv", "trained_encoder"])
            p.add_argument("--encoder", type=Path, help="trained encoder checkpoint")
        p.add_argument("--k", type=int)
        group = p.add_mutually_exclusive_group()
        group.add_argument("--per-class", dest="per_class", action="store_true", default=None)
        group.add_argument("--no-per-class", dest="per_class", action="store_false")

    p = sub.add_parser("heatmap", parents=[common], help="overlay an error map on an image")
    p.add_argument("image", type=Path)
    p.add_argument("errmap", type=Path, help="grayscale PNG error map")
    p.add_argument("--alpha", type=float)
    return parser


def _materialize(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    seed = 0 if args.seed is None else args.seed
    train_cfg = replace(cfg.train, seed=seed)
    synth, ev = cfg.synth, cfg.eval
    if args.command == "synth":
        synth = replace(synth, **{k: v for k, v in
                                  (("count", args.count), ("kind", args.kind), ("size", args.size)) if v is not None})
    if args.command == "train":
        if args.epochs is not None:
            train_cfg = replace(train_cfg, epochs=args.epochs)
        if args.lr is not None:
            train_cfg = replace(train_cfg, lr=args.lr)
        if args.preset is not None:
            train_cfg = replace(train_cfg, preset=args.preset)
    loss = cfg.loss
    if train_cfg.preset:
        loss = loss_config_for(train_cfg.preset, form=loss.form, normalize_by_area=loss.normalize_by_area)
    if args.command in ("rank", "splits"):
        updates = {"k": args.k, "per_class": args.per_class}
        if args.command == "splits":
            updates.update(extractor=args.extractor, encoder=None if args.encoder is None else str(args.encoder))
        ev = replace(ev, **{k: v for k, v in updates.items() if v is not None})
    if args.command == "heatmap" and args.alpha is not None:
        ev = replace(ev, alpha=args.alpha)
    return replace(cfg, synth=synth, loss=loss, train=train_cfg, eval=ev)


def _echo(cfg: RunConfig, out: Path, seed: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = cfg.to_dict()
    doc["seed"] = seed
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_synth(args, cfg: RunConfig) -> int:
    s, seed = cfg.synth, args.seed or 0
    out = args.out
    if s.kind == "collage":
        n_src = s.count if s.source_count is None else s.source_count
        real = toy_images(n_src, "real", s.classes, seed=derive_seed(seed, "real"), size=s.size)
        gen = toy_images(n_src, "generated", s.classes, corruption=s.corruption, mode_collapse=s.mode_collapse,
                         seed=derive_seed(seed, "generated"), size=s.size)
        synthesize_training_set(real, gen, s.count, s.collage, seed=derive_seed(seed, "collage"),
                                out_dir=out, threads=args.threads)
    else:
        corruption = s.corruption if s.kind == "generated" else 0.0
        images = toy_images(s.count, s.kind, s.classes, corruption=corruption, mode_collapse=s.mode_collapse,
                            seed=derive_seed(seed, s.kind), size=s.size)
        write_samples([(im, None, cls, None) for im, cls, _ in images], out, tag=s.kind)
    _echo(cfg, out, seed)
    print(f"wrote {s.count} {s.kind} images to {out}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.encoder:
        records = read_manifest(args.manifest)
        if any(r.get("class") is None for r in records):
            raise ValueError("encoder training needs a manifest with class labels")
        samples = load_samples(records)
        train_encoder(np.stack([s.image for s in samples]), [int(r["class"]) for r in records],
                      epochs=cfg.train.epochs, batch_size=cfg.train.batch_size, lr=cfg.train.lr,
                      seed=cfg.train.seed, path=out / "encoder.pxc")
        _echo(cfg, out, cfg.train.seed)
        print(f"wrote {out / 'encoder.pxc'}")
        return EXIT_OK
    model = build_model(cfg.arch, seed=derive_seed(cfg.train.seed, "init"))
    _echo(cfg, out, cfg.train.seed)
    _, history = train(model, args.manifest, cfg.train, cfg.loss, out_dir=out)
    print(f"trained {len(history)} epochs, final mean loss {history[-1]['mean_loss']:.6f}; wrote {out / 'model.pxc'}")
    return EXIT_OK


def _gather_inputs(paths):
    """``(id, class, path)`` for every image named by the inputs."""
    items = []
    for path in paths:
        if path.suffix.lower() == ".png":
            items.append((path.stem, None, path))
            continue
        for i, rec in enumerate(read_manifest(path)):
            items.append((i if len(paths) == 1 else f"{path.stem}:{i}", rec.get("class"), resolve(rec)))
    return items


def cmd_score(args, cfg: RunConfig) -> int:
    model = load_model(args.checkpoint)
    n, m, c = model.config.input_size
    items = _gather_inputs(args.inputs)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    good, images = [], []
    for sid, cls, path in items:
        try:
            image = read_png(path)
        except OSError as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        if image.ndim == 2:
            image = image[..., None]
        if image.shape != (n, m, c):
            print(f"error: {path}: image is {image.shape}, model expects {(n, m, c)}", file=sys.stderr)
            failures += 1
            continue
        good.append((sid, cls))
        images.append(image)

    bs = cfg.eval.batch_size
    chunks = [np.stack(images[lo : lo + bs]) for lo in range(0, len(images), bs)]
    if args.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            maps = list(pool.map(lambda x: predict(model, x, bs), chunks))
    else:
        maps = [predict(model, x, bs) for x in chunks]
    maps = np.concatenate(maps) if maps else np.zeros((0, n, m))

    scores = [PDScore(float(p.mean()), sid, cls) for (sid, cls), p in zip(good, maps)]
    write_scores_csv(out / "scores.csv", scores)
    if args.save_maps:
        (out / "maps").mkdir(exist_ok=True)
        for (sid, _), p in zip(good, maps):
            write_png(out / "maps" / f"{sid}.png", p)
    _echo(cfg, out, args.seed or 0)
    print(f"scored {len(scores)} images; wrote {out / 'scores.csv'}")
    return EXIT_DATA if failures else EXIT_OK


def _write_report(report, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_to_json(report))
    print(report.table())


def cmd_rank(args, cfg: RunConfig) -> int:
    report = rank_and_split(read_scores_csv(args.scores), cfg.eval.k, cfg.eval.per_class)
    _write_report(report, args.out)
    _echo(cfg, args.out, args.seed or 0)
    return EXIT_OK


def _manifest_images(path, indices=None):
    records = read_manifest(path)
    if indices is not None:
        records = [records[i] for i in indices]
    return np.stack([s.image for s in load_samples(records)]) if records else np.zeros((0, 1, 1, 3))


def cmd_splits(args, cfg: RunConfig) -> int:
    ev = cfg.eval
    scores = read_scores_csv(args.scores)
    report = rank_and_split(scores, ev.k, ev.per_class)
    extractor = default_feature_extractor(ev.extractor, seed=ev.extractor_seed, checkpoint=ev.encoder)
    ids = [s.id for s in scores]
    if not all(isinstance(i, int) for i in ids):
        raise ValueError("splits needs integer score ids that index the generated manifest")
    gen_features = dict(zip(ids, extractor(_manifest_images(args.generated, ids))))
    ref_features = extractor(_manifest_images(args.reference))
    evaluate_splits(report, gen_features, ref_features, seed=ev.baseline_seed)
    _write_report(report, args.out)
    _echo(cfg, args.out, args.seed or 0)
    return EXIT_OK


def cmd_heatmap(args, cfg: RunConfig) -> int:
    image = read_png(args.image)
    errmap = read_png(args.errmap)
    if errmap.ndim == 3:
        raise DimensionError(f"error map {args.errmap} must be a single-channel PNG")
    out = args.out
    target = out if out.suffix.lower() == ".png" else out / "heatmap.png"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_heatmap(target, image, errmap, cfg.eval.alpha)
    print(f"wrote {target}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "score": cmd_score,
    "rank": cmd_rank,
    "splits": cmd_splits,
    "heatmap": cmd_heatmap,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _materialize(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as exc:  # NumericError and non-PSD covariances
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
