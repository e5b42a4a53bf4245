"""Command-line entry point.

One subcommand per pipeline stage: score-quality, extract-fov, assemble,
resample, imbalance-report, augment, evaluate, train-toy, cam.  Logs go to
stderr, data to files or stdout.  Every source of randomness takes --seed,
so identical flags reproduce identical outputs byte for byte.

An optional config file (--config, plain `key=value` lines using the flag
names) supplies defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import augment as augment_mod
from . import cam as cam_mod
from . import ctran, curation, imaging, imbalance, losses, metrics
from .manifest import (
    DEFAULT_CATALOG,
    LabelCatalog,
    ManifestError,
    load_manifest,
    load_predictions,
    save_manifest,
)

log = logging.getLogger("fundusml")

_ERROR_TYPES = (
    ManifestError, imaging.ImagingError, curation.CurationError,
    imbalance.ImbalanceError, metrics.MetricError, ctran.CTranError,
    OSError, ValueError,
)


def _module_of(exc: Exception) -> str:
    return type(exc).__module__.rsplit(".", 1)[-1]


def _read_config(path) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _apply_config(args: argparse.Namespace, argv: list[str]) -> None:
    if not getattr(args, "config", None):
        return
    explicit = {a.lstrip("-").replace("-", "_").split("=")[0] for a in argv if a.startswith("--")}
    for key, raw in _read_config(args.config).items():
        if key in explicit or not hasattr(args, key):
            continue
        current = getattr(args, key)
        if isinstance(current, bool):
            setattr(args, key, raw.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(args, key, int(raw))
        elif isinstance(current, float):
            setattr(args, key, float(raw))
        else:
            setattr(args, key, raw)


def _load_manifest_auto(path) -> "curation.DatasetManifest":
    """Load a manifest whose catalog is defined by its own header."""
    with open(path, newline="", encoding="utf-8") as f:
        header = next(csv.reader(f), None)
    if not header or len(header) < 4 or header[:2] != ["id", "filepath"]:
        raise ManifestError(f"{path}: not a manifest CSV (header {header})")
    catalog = LabelCatalog.from_acronyms(header[2:])
    return load_manifest(path, catalog)


def _image_paths(inputs: list[str]) -> list[Path]:
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(q for q in p.iterdir()
                                if q.suffix.lower() in (".png", ".jpg", ".jpeg")))
        else:
            paths.append(p)
    return paths


def _pool(jobs: int | None) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=jobs or os.cpu_count() or 1)


# ---------------------------------------------------------------- commands

def cmd_score_quality(args) -> int:
    paths = _image_paths(args.images)
    cfg = imaging.CannyConfig(sigma=args.sigma, low=args.low, high=args.high)

    def score(p: Path):
        return imaging.quality_score(imaging.read_image(p), cfg)

    with _pool(args.jobs) as ex:
        results = list(ex.map(score, paths))
    rows = [(p.stem, q) for p, q in zip(paths, results)]
    imaging.write_quality_report(rows, args.out)
    log.info("scored %d image(s) -> %s", len(rows), args.out)
    return 0


def cmd_extract_fov(args) -> int:
    paths = _image_paths(args.images)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run(p: Path):
        img = imaging.read_image(p)
        try:
            rect = imaging.extract_fov(img)
        except imaging.EmptyFov:
            log.warning("%s: empty field of view, keeping full image", p)
            rect = (0, 0, img.width - 1, img.height - 1)
        return imaging.crop(img, rect)

    with _pool(args.jobs) as ex:
        cropped = list(ex.map(run, paths))
    for p, img in zip(paths, cropped):
        imaging.write_png(img, out_dir / f"{p.stem}.png")
    log.info("cropped %d image(s) -> %s", len(paths), out_dir)
    return 0


def cmd_assemble(args) -> int:
    label_map = curation.read_label_map(args.label_map)
    target = curation.target_catalog_from_label_map(label_map, normal=args.normal, other=args.other)
    sources = []
    for spec_arg in args.source:
        name, _, path = spec_arg.partition("=")
        if not path:
            raise ValueError(f"--source needs name=path, got {spec_arg!r}")
        sources.append((name, _load_manifest_auto(path)))
    merged = curation.merge(sources, target, label_map)
    log.info("merged %d source(s): %d samples, %d labels", len(sources), len(merged), len(target))

    folded, report = curation.fold_rare_labels(merged, args.min_count)
    log.info("folded %d rare label(s), %d sample(s) moved to %s",
             len(report.dropped_labels), report.moved_samples, folded.catalog.other_acronym)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")

    scores = imaging.read_quality_report(args.scores)
    if args.threshold is not None:
        filtered = curation.quality_filter(folded, scores, threshold=args.threshold)
    else:
        filtered = curation.quality_filter(folded, scores, drop_fraction=args.drop_fraction)
    log.info("quality filter kept %d / %d samples", len(filtered), len(folded))

    train, val = curation.split(filtered, args.val_fraction, args.seed)
    save_manifest(train, args.out_train)
    save_manifest(val, args.out_val)
    log.info("split %d train / %d validation", len(train), len(val))
    return 0


def cmd_resample(args) -> int:
    m = _load_manifest_auto(args.manifest)
    algo = {"lp-ros": imbalance.lp_ros, "lp-rus": imbalance.lp_rus,
            "ml-ros": imbalance.ml_ros, "ml-rus": imbalance.ml_rus}[args.algo]
    out = algo(m, args.pct, args.seed)
    save_manifest(out, args.out)
    log.info("%s %s%%: %d -> %d samples", args.algo, args.pct, len(m), len(out))
    return 0


def cmd_imbalance_report(args) -> int:
    m = _load_manifest_auto(args.manifest)
    report = imbalance.imbalance_report(m, include_labels=args.include or None)
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_augment(args) -> int:
    paths = _image_paths(args.images)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = augment_mod.AugmentConfig()
    for i, p in enumerate(paths):
        img = imaging.read_image(p)
        for k in range(args.count):
            out = augment_mod.augment(img, cfg, seed=args.seed + 1000003 * i + k)
            imaging.write_png(out, out_dir / f"{p.stem}_aug{k}.png")
    log.info("wrote %d augmented image(s) -> %s", len(paths) * args.count, out_dir)
    return 0


def cmd_evaluate(args) -> int:
    m = _load_manifest_auto(args.manifest)
    preds = load_predictions(args.preds, m.catalog)
    report = metrics.riadd_report(m, preds, threshold=args.threshold)
    print(report.summary_table(), file=sys.stderr)
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _loss_config(args, y=None) -> losses.LossConfig:
    weights = None
    if args.loss == "wbce" and y is not None:
        weights = losses.inverse_frequency_weights(np.asarray(y).sum(axis=0), len(y))
    return losses.LossConfig(
        kind=args.loss, focal_gamma=args.focal_gamma,
        asl_gamma_pos=args.asl_gamma_pos, asl_gamma_neg=args.asl_gamma_neg,
        asl_clip=args.asl_clip, poly_epsilon=args.poly_epsilon, weights=weights)


def cmd_train_toy(args) -> int:
    rng = np.random.default_rng(args.seed)
    grid = args.grid
    meta = {"h": grid, "w": grid, "provider_seed": args.seed, "loss": args.loss}
    if args.manifest:
        m = _load_manifest_auto(args.manifest)
        base = Path(args.images_dir) if args.images_dir else Path(".")
        feats = np.stack([
            ctran.toy_feature_provider(
                imaging.read_image(base / s.image_path), grid, grid, args.dim, args.seed
            ).values
            for s in m.samples])
        y = m.label_matrix()
        meta["acronyms"] = list(m.catalog.acronyms)
        n_labels = len(m.catalog)
    else:
        feats, y = ctran.synthetic_task(args.samples, args.labels, grid, grid, args.dim, args.seed)
        n_labels = args.labels

    params = ctran.init_params(n_labels, args.dim, n_layers=args.layers, seed=args.seed)
    adam = ctran.init_adam(params)
    cfg = _loss_config(args, y)
    n = len(feats)
    for epoch in range(args.epochs):
        order = rng.permutation(n)
        total = 0.0
        for k in range(0, n, args.batch):
            idx = order[k:k + args.batch]
            total += ctran.train_step(params, feats[idx], y[idx], cfg, args.lr, adam, rng) * len(idx)
        log.info("epoch %d/%d loss %.6f", epoch + 1, args.epochs, total / n)
    ctran.save_checkpoint(params, meta, args.out)
    log.info("checkpoint -> %s", args.out)
    return 0


def cmd_cam(args) -> int:
    params, meta = ctran.load_checkpoint(args.checkpoint)
    m = _load_manifest_auto(args.manifest)
    if "acronyms" in meta and list(m.catalog.acronyms) != meta["acronyms"]:
        raise ManifestError("manifest catalog does not match checkpoint")
    j = m.catalog.index_of(args.label)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_dir = Path(args.images_dir) if args.images_dir else Path(".")
    h, w = meta["h"], meta["w"]
    for s in m.samples:
        img = imaging.read_image(base_dir / s.image_path)
        feats = ctran.toy_feature_provider(img, h, w, params.d, meta["provider_seed"])
        heat = cam_mod.cam(feats, params.head_w[j])
        overlay = cam_mod.render_cam(heat, img.width, img.height, img)
        imaging.write_png(overlay, out_dir / f"{s.id}_{args.label}.png")
    log.info("wrote %d overlay(s) -> %s", len(m.samples), out_dir)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="fundusml", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, formatter_class=fmt)
        p.set_defaults(func=func)
        p.add_argument("--config", help="key=value file of flag defaults")
        return p

    p = add("score-quality", cmd_score_quality, "edge-based blur/quality score per image")
    p.add_argument("--images", nargs="+", required=True, help="image files or directories")
    p.add_argument("--out", required=True, help="output CSV (id,score,degenerate_flag)")
    p.add_argument("--sigma", type=float, default=1.4, help="Gaussian smoothing width")
    p.add_argument("--low", type=float, default=50.0, help="hysteresis low threshold")
    p.add_argument("--high", type=float, default=150.0, help="hysteresis high threshold")
    p.add_argument("--jobs", type=int, default=None, help="worker pool size (default: cores)")

    p = add("extract-fov", cmd_extract_fov, "crop images to the field of view")
    p.add_argument("--images", nargs="+", required=True, help="image files or directories")
    p.add_argument("--out-dir", required=True, help="directory for cropped PNGs")
    p.add_argument("--jobs", type=int, default=None, help="worker pool size (default: cores)")

    p = add("assemble", cmd_assemble, "merge sources, fold rare labels, filter, split")
    p.add_argument("--source", action="append", required=True, metavar="NAME=CSV",
                   help="source manifest, repeatable")
    p.add_argument("--label-map", required=True, help="source,source_label,target_label CSV")
    p.add_argument("--scores", required=True,
                   help="quality report CSV keyed by namespaced id <source>__<id>")
    p.add_argument("--min-count", type=int, default=30, help="fold labels with fewer positives")
    p.add_argument("--drop-fraction", type=float, default=0.10, help="drop this fraction, lowest scores first")
    p.add_argument("--threshold", type=float, default=None,
                   help="drop scores below this instead of --drop-fraction")
    p.add_argument("--val-fraction", type=float, default=0.2, help="validation share of the split")
    p.add_argument("--seed", type=int, default=0, help="split RNG seed")
    p.add_argument("--normal", default="NORMAL", help="target catalog NORMAL acronym")
    p.add_argument("--other", default="OTHER", help="target catalog OTHER acronym")
    p.add_argument("--out-train", required=True, help="training manifest CSV output")
    p.add_argument("--out-val", required=True, help="validation manifest CSV output")
    p.add_argument("--report", default=None, help="fold report JSON path")

    p = add("resample", cmd_resample, "rebalance a manifest by random resampling")
    p.add_argument("--manifest", required=True, help="input manifest CSV")
    p.add_argument("--algo", choices=["lp-ros", "lp-rus", "ml-ros", "ml-rus"], default="lp-ros",
                   help="resampling algorithm")
    p.add_argument("--pct", type=float, default=10.0, help="budget as %% of dataset size")
    p.add_argument("--seed", type=int, default=0, help="resampling RNG seed")
    p.add_argument("--out", required=True, help="output manifest CSV")

    p = add("imbalance-report", cmd_imbalance_report, "per-label imbalance rates and meanIR/CVIR")
    p.add_argument("--manifest", required=True, help="input manifest CSV")
    p.add_argument("--include", nargs="*", default=None, help="restrict to these labels")
    p.add_argument("--out", default=None, help="JSON path (default stdout)")

    p = add("augment", cmd_augment, "write augmented copies of images")
    p.add_argument("--images", nargs="+", required=True, help="image files or directories")
    p.add_argument("--out-dir", required=True, help="directory for augmented PNGs")
    p.add_argument("--count", type=int, default=1, help="augmented copies per input")
    p.add_argument("--seed", type=int, default=0, help="augmentation RNG seed")

    p = add("evaluate", cmd_evaluate, "per-label metrics and composite scores")
    p.add_argument("--manifest", required=True, help="ground-truth manifest CSV")
    p.add_argument("--preds", required=True, help="prediction CSV aligned by id")
    p.add_argument("--threshold", type=float, default=0.5, help="decision threshold for F1")
    p.add_argument("--out", default=None, help="JSON path (default stdout)")

    p = add("train-toy", cmd_train_toy, "train the label-mask transformer on toy features")
    p.add_argument("--manifest", default=None, help="train from images listed here "
                   "(default: synthetic separable task)")
    p.add_argument("--images-dir", default=None, help="base directory for manifest image paths")
    p.add_argument("--samples", type=int, default=200, help="synthetic task size")
    p.add_argument("--labels", type=int, default=3, help="synthetic task label count")
    p.add_argument("--grid", type=int, default=2, help="feature grid edge (h = w)")
    p.add_argument("--dim", type=int, default=32, help="embedding dim d")
    p.add_argument("--layers", type=int, default=3, help="encoder layers")
    p.add_argument("--lr", type=float, default=1e-5, help="Adam learning rate")
    p.add_argument("--batch", type=int, default=16, help="batch size")
    p.add_argument("--epochs", type=int, default=10, help="training epochs")
    p.add_argument("--loss", choices=list(losses.LOSS_KINDS), default="poly", help="loss function")
    p.add_argument("--focal-gamma", type=float, default=2.0, help="focal loss exponent")
    p.add_argument("--asl-gamma-pos", type=float, default=0.0, help="asl positive-side exponent")
    p.add_argument("--asl-gamma-neg", type=float, default=4.0, help="asl negative-side exponent")
    p.add_argument("--asl-clip", type=float, default=0.05, help="asl probability shift")
    p.add_argument("--poly-epsilon", type=float, default=1.0, help="poly loss coefficient")
    p.add_argument("--seed", type=int, default=0, help="training RNG seed")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")

    p = add("cam", cmd_cam, "class activation map overlays for one label")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint (.npz)")
    p.add_argument("--manifest", required=True, help="samples to render")
    p.add_argument("--images-dir", default=None, help="base directory for manifest image paths")
    p.add_argument("--label", required=True, help="label acronym")
    p.add_argument("--out-dir", required=True, help="directory for overlay PNGs")

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_config(args, argv)
    try:
        return args.func(args)
    except _ERROR_TYPES as e:
        print(f"ERROR {_module_of(e)}.{type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
