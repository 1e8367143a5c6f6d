"""Command-line entry point.

Each verb reads and writes only files so runs compose into pipelines:
``ingest`` produces dataset archives, ``train``/``baseline`` produce
embeddings, ``eval`` scores them, ``figure`` renders them, ``ablate`` and
``report`` aggregate.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .baselines import FeatureMatrix, save_features
from .data import SplitSpec, load_dataset, merge_rare_classes, resize_images, save_dataset
from .evaluation import evaluate_embedding, load_report, save_report
from .experiments import (ExperimentConfig, ablation_suite, collect_summaries,
                          control_experiment_cifar, emit_table,
                          load_experiment_config, run_experiment)
from .figures import FigureSpec, grid_thumbnail_figure, scatter_figure
from .network import load_checkpoint
from .results import EmbeddingResult, load_embedding, save_embedding
from .synthetic import make_blob_dataset
from .training import apply_determinism_profile, embed_dataset


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = load_experiment_config(args.config)
    else:
        cfg = ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if getattr(args, "repeats", None) is not None:
        overrides["repeats"] = args.repeats
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="experiment config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", type=Path, default=None, help="override the output directory")
    parser.add_argument("--repeats", type=int, default=None, help="override the repeat count")
    parser.add_argument("--deterministic", action="store_true",
                        help="force deterministic kernels (slower)")


def cmd_ingest(args) -> int:
    if args.make_blobs:
        ds = make_blob_dataset(n_images=args.n_images, size=args.size,
                               seed=args.seed if args.seed is not None else 0)
    else:
        if not args.source:
            print("ingest: provide a source path or --make-blobs", file=sys.stderr)
            return 2
        fmt = "image-folder" if Path(args.source).is_dir() else "tensor-archive"
        ds = load_dataset(args.source, format=fmt)
    if args.resize:
        ds = resize_images(ds, args.resize)
    if args.merge_rare:
        ds = merge_rare_classes(ds, args.merge_rare)
    out = args.out or Path("dataset.npz")
    save_dataset(ds, out)
    print(f"wrote {ds.n_images} images, {len(ds.class_names)} classes -> {out}")
    return 0


def cmd_train(args) -> int:
    if args.deterministic:
        apply_determinism_profile()
    cfg = _config_from_args(args)
    cfg = dataclasses.replace(cfg, method="tsimcne")
    bundle = run_experiment(cfg)
    print(json.dumps(bundle.summary, indent=2))
    return 0


def cmd_embed(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    coords = embed_dataset(model, ds, which=args.which)
    if coords.shape[1] == 2:
        result = EmbeddingResult(coords=coords, labels=ds.labels,
                                 method="checkpoint", augmentations="none",
                                 dataset=ds.name,
                                 extra={"checkpoint": str(args.checkpoint)})
        save_embedding(result, args.out)
        print(f"wrote 2-D embedding for {ds.n_images} images -> {args.out}")
    else:
        # representation-layer output is a feature matrix, not a plane
        fm = FeatureMatrix(features=coords, labels=ds.labels.copy(),
                           source=f"checkpoint_{args.which}", dataset=ds.name)
        save_features(fm, args.out)
        print(f"wrote {coords.shape[1]}-D features for {ds.n_images} images -> {args.out}")
    return 0


def cmd_baseline(args) -> int:
    if args.deterministic:
        apply_determinism_profile()
    cfg = _config_from_args(args)
    cfg = dataclasses.replace(cfg, method=args.method)
    bundle = run_experiment(cfg)
    print(json.dumps(bundle.summary, indent=2))
    return 0


def cmd_eval(args) -> int:
    emb = load_embedding(args.embedding)
    split = SplitSpec(seed=args.split_seed)
    report = evaluate_embedding(emb, k=args.k, split=split)
    out = args.out or Path(args.embedding).with_suffix(".report.json")
    save_report(report, out)
    print(f"kNN {report.knn_accuracy:.2f}%  silhouette {report.silhouette:.4f} -> {out}")
    return 0


def cmd_figure(args) -> int:
    emb = load_embedding(args.embedding)
    spec = FigureSpec(kind=args.kind, grid_size=args.grid_size,
                      min_cell_count=args.min_cell_count)
    report = load_report(args.report) if args.report else None
    if args.kind == "grid_thumbnails":
        if not args.data:
            print("figure: --data is required for grid_thumbnails", file=sys.stderr)
            return 2
        ds = load_dataset(args.data)
        path = grid_thumbnail_figure(emb.coords, ds.images, emb.labels, spec, args.out)
    else:
        class_names = None
        if args.data:
            class_names = load_dataset(args.data).class_names
        path = scatter_figure(emb.coords, emb.labels, spec, args.out,
                              class_names=class_names, report=report,
                              title=emb.method)
    print(f"wrote {path}")
    return 0


def cmd_ablate(args) -> int:
    if args.deterministic:
        apply_determinism_profile()
    cfg = _config_from_args(args)
    if args.control:
        report = control_experiment_cifar(cfg)
        print(json.dumps({k: report[k] for k in ("knn_default", "knn_plus_rot90", "delta")},
                         indent=2))
    else:
        rows = ablation_suite(cfg)
        for row in rows:
            print(f"{row['name']}: kNN {row['knn_accuracy']['mean']:.2f}")
    return 0


def cmd_report(args) -> int:
    rows = collect_summaries(args.root)
    if not rows:
        print(f"no summaries under {args.root}", file=sys.stderr)
        return 1
    out = args.out or Path(args.root) / "report_table.txt"
    emit_table(rows, out, title=args.title)
    print(Path(out).read_text(encoding="utf-8"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contravis",
        description="Contrastive 2D visualization of image datasets, with baselines and metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a dataset archive from images or synthetic blobs")
    p.add_argument("source", nargs="?", help="image folder or tensor archive")
    p.add_argument("--make-blobs", action="store_true", help="generate the synthetic blob dataset")
    p.add_argument("--n-images", type=int, default=600)
    p.add_argument("--size", type=int, default=28)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resize", type=int, default=None, help="resize images to this side length")
    p.add_argument("--merge-rare", type=int, default=None,
                   help="merge classes with fewer members than this into one")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train the contrastive 2D encoder per config")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed a dataset with a trained checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--which", choices=("z", "h"), default="z")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("baseline", help="run a t-SNE baseline per config")
    _add_common(p)
    p.add_argument("--method", choices=("tsne_pixels", "tsne_pretrained", "simclr_tsne"),
                   default="tsne_pixels")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="score an embedding file")
    p.add_argument("--embedding", type=Path, required=True)
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("figure", help="render an embedding figure")
    p.add_argument("--embedding", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--kind", choices=("scatter", "grid_thumbnails", "annotated"),
                   default="scatter")
    p.add_argument("--data", type=Path, default=None, help="dataset archive (thumbnails, class names)")
    p.add_argument("--report", type=Path, default=None, help="eval report to annotate with")
    p.add_argument("--grid-size", type=int, default=10)
    p.add_argument("--min-cell-count", type=int, default=100)
    p.set_defaults(func=cmd_figure)

    p = sub.add_parser("ablate", help="run augmentation ablations (or the rotation control)")
    _add_common(p)
    p.add_argument("--control", action="store_true",
                   help="run default vs rot90 control instead of the removal suite")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="aggregate run summaries into a table")
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--title", default="Embedding quality")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
