"""Experiment harness: config files, repeated runs, ablations, and tables.

A run is described by a nested key-value config file. Before anything
executes, the fully resolved config (every default made explicit) is written
next to the results together with its hash, so each emitted table row can
name the exact configuration that produced it.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .augment import AugmentationConfig, default_config, with_rot90, with_rot_any
from .baselines import pixel_tsne, pretrained_features, train_simclr, tsne_embed
from .data import ImageDataset, SplitSpec, binarize_labels, load_dataset, merge_rare_classes, resize_images
from .evaluation import EvalReport, evaluate_embedding, save_report
from .losses import LossConfig
from .results import EmbeddingResult, save_embedding
from .synthetic import make_blob_dataset
from .training import LRScheduleConfig, OptimizerConfig, TrainConfig, run_pipeline

METHODS = ("tsimcne", "simclr_tsne", "tsne_pixels", "tsne_pretrained")
AUGMENTATION_SETS = ("default", "plus_rot90", "plus_rot_any")
ABLATION_VARIANTS = ("all", "no_crops", "no_color_jitter", "no_grayscaling")


@dataclass
class PreprocessConfig:
    resize_to: int | None = None
    merge_rare_min_count: int | None = None
    binarize_positive: list[int] | None = None
    binarize_names: tuple[str, str] = ("negative", "positive")


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic:blobs"
    method: str = "tsimcne"
    augmentation_set: str = "default"
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_k: int = 15
    split: SplitSpec = field(default_factory=SplitSpec)
    out_dir: str = "runs/experiment"
    repeats: int = 3
    seed: int = 0
    name: str = ""
    fill_color: str | tuple[float, float, float] = "auto"
    pixel_pca_dims: int | None = None
    pretrained_checkpoint: str | None = None
    pretrained_arch: str = "resnet18"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.augmentation_set not in AUGMENTATION_SETS:
            raise ValueError(
                f"augmentation_set must be one of {AUGMENTATION_SETS}, got {self.augmentation_set!r}"
            )
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1, got {self.repeats}")
        if self.method == "tsne_pretrained" and not self.pretrained_checkpoint:
            raise ValueError("method tsne_pretrained requires pretrained_checkpoint")


def _update_dataclass(obj, values: dict):
    """Replace-style update: unknown keys are an error, nested dicts recurse."""
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in values.items():
        if key not in names:
            raise ValueError(f"unknown config key {key!r} for {type(obj).__name__}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            kwargs[key] = _update_dataclass(current, value)
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return dataclasses.replace(obj, **kwargs)


def _train_config_from_dict(values: dict) -> TrainConfig:
    values = dict(values)
    loss_kind = values.pop("loss", None)
    temperature = values.pop("temperature", None)
    cfg = _update_dataclass(TrainConfig(), values)
    if loss_kind is not None or temperature is not None:
        loss = LossConfig(loss_kind or "cauchy",
                          temperature=0.5 if temperature is None else temperature)
        cfg = dataclasses.replace(cfg, stage_losses=(loss, loss, loss))
    return cfg


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Parse a nested key-value config file into a fully defaulted config."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no config file at {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"config root must be a mapping, got {type(raw).__name__}")
    raw = dict(raw)
    train_values = raw.pop("train", {})
    cfg = _update_dataclass(ExperimentConfig(), raw)
    return dataclasses.replace(cfg, train=_train_config_from_dict(train_values))


def resolved_config_dict(cfg: ExperimentConfig) -> dict:
    """Every field explicit, including defaults, in plain nested form."""
    return json.loads(json.dumps(dataclasses.asdict(cfg), default=str))


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(resolved_config_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def write_resolved_config(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = resolved_config_dict(cfg)
    payload["config_hash"] = config_hash(cfg)
    path = out_dir / "resolved_config.yaml"
    path.write_text(yaml.safe_dump(payload, sort_keys=True), encoding="utf-8")
    return path


def load_experiment_dataset(cfg: ExperimentConfig) -> ImageDataset:
    """Resolve the dataset reference and apply the preprocessing rules."""
    ref = cfg.dataset
    if ref.startswith("synthetic:"):
        kind = ref.split(":", 1)[1]
        if kind != "blobs":
            raise ValueError(f"unknown synthetic dataset {kind!r}")
        ds = make_blob_dataset(seed=cfg.seed)
    else:
        fmt = "image-folder" if Path(ref).is_dir() else "tensor-archive"
        ds = load_dataset(ref, format=fmt)
    pp = cfg.preprocess
    if pp.resize_to is not None:
        ds = resize_images(ds, pp.resize_to)
    if pp.merge_rare_min_count is not None:
        ds = merge_rare_classes(ds, pp.merge_rare_min_count)
    if pp.binarize_positive is not None:
        ds = binarize_labels(ds, pp.binarize_positive, names=tuple(pp.binarize_names))
    return ds


def augmentation_set_config(name: str, output_size: int,
                            fill_color="auto") -> AugmentationConfig:
    cfg = default_config(output_size)
    if name == "plus_rot90":
        cfg = with_rot90(cfg)
    elif name == "plus_rot_any":
        cfg = with_rot_any(cfg)
    elif name != "default":
        raise ValueError(f"unknown augmentation set {name!r}")
    cfg.fill_color = fill_color
    return cfg


@dataclass
class RepeatResult:
    seed: int
    embedding_path: str
    report_path: str
    report: EvalReport


@dataclass
class ExperimentBundle:
    """Everything one experiment produced: per-repeat artifacts plus the aggregate."""

    config: ExperimentConfig
    config_hash: str
    repeats: list[RepeatResult] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _run_method_once(cfg: ExperimentConfig, ds: ImageDataset,
                     aug_cfg: AugmentationConfig, seed: int,
                     work_dir: Path) -> EmbeddingResult:
    if cfg.method == "tsimcne":
        train_cfg = dataclasses.replace(cfg.train, seed=seed)
        _, embedding, _ = run_pipeline(ds, copy.deepcopy(aug_cfg), train_cfg,
                                       checkpoint_dir=work_dir / "checkpoints")
        return embedding
    if cfg.method == "simclr_tsne":
        epochs = cfg.train.stage_epochs[0]
        _, fm, _ = train_simclr(ds, copy.deepcopy(aug_cfg), epochs=epochs,
                                batch_size=cfg.train.batch_size, seed=seed,
                                checkpoint_dir=work_dir / "checkpoints")
        return tsne_embed(fm, seed=seed)
    if cfg.method == "tsne_pixels":
        return pixel_tsne(ds, seed=seed, pca_dims=cfg.pixel_pca_dims)
    if cfg.method == "tsne_pretrained":
        fm = pretrained_features(ds, cfg.pretrained_checkpoint, arch=cfg.pretrained_arch)
        return tsne_embed(fm, seed=seed)
    raise ValueError(f"unknown method {cfg.method!r}")


def _aggregate(values: list[float]) -> dict:
    out = {"mean": float(np.mean(values)), "values": [float(v) for v in values]}
    if len(values) > 1:
        out["std"] = float(np.std(values, ddof=1))
    return out


def run_experiment(cfg: ExperimentConfig, ds: ImageDataset | None = None,
                   aug_override: AugmentationConfig | None = None,
                   label: str | None = None) -> ExperimentBundle:
    """Execute method x augmentation set, ``repeats`` times with distinct seeds.

    Per-repeat embeddings and reports are written to disk as soon as they
    exist, so a failure partway through leaves the completed repeats behind.
    The same train/test split (one split seed per dataset per run) scores
    every repeat for comparability.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    chash = config_hash(cfg)
    if ds is None:
        ds = load_experiment_dataset(cfg)
    if aug_override is not None:
        aug_cfg = copy.deepcopy(aug_override)
    else:
        aug_cfg = augmentation_set_config(cfg.augmentation_set, ds.image_size, cfg.fill_color)

    bundle = ExperimentBundle(config=cfg, config_hash=chash)
    split = SplitSpec(train_fraction=cfg.split.train_fraction, seed=cfg.split.seed)
    failure: dict | None = None
    for r in range(cfg.repeats):
        seed = cfg.seed + r
        work_dir = out_dir / f"repeat{r}"
        work_dir.mkdir(parents=True, exist_ok=True)
        try:
            embedding = _run_method_once(cfg, ds, aug_cfg, seed, work_dir)
            report = evaluate_embedding(embedding, k=cfg.eval_k, split=split)
            emb_path = save_embedding(embedding, work_dir / "embedding.csv")
            rep_path = save_report(report, work_dir / "report.json")
            bundle.repeats.append(RepeatResult(seed=seed, embedding_path=str(emb_path),
                                               report_path=str(rep_path), report=report))
        except Exception as exc:
            failure = {"repeat": r, "seed": seed, "error": f"{type(exc).__name__}: {exc}",
                       "traceback": traceback.format_exc()}
            break

    accs = [rr.report.knn_accuracy for rr in bundle.repeats]
    sils = [rr.report.silhouette for rr in bundle.repeats]
    bundle.summary = {
        "name": label or cfg.name or cfg.method,
        "method": cfg.method,
        "augmentations": label or cfg.augmentation_set,
        "dataset": ds.name,
        "config_hash": chash,
        "repeats_completed": len(bundle.repeats),
        "repeats_requested": cfg.repeats,
    }
    if accs:
        bundle.summary["knn_accuracy"] = _aggregate(accs)
        bundle.summary["silhouette"] = _aggregate(sils)
    if failure is not None:
        bundle.summary["failure"] = failure
    (out_dir / "summary.json").write_text(
        json.dumps(bundle.summary, indent=2) + "\n", encoding="utf-8")
    if failure is not None:
        raise RuntimeError(
            f"repeat {failure['repeat']} failed ({failure['error']}); "
            f"partial results kept in {out_dir}"
        )
    return bundle


def _format_metric(agg: dict) -> str:
    if "std" in agg:
        return f"{agg['mean']:.2f} ± {agg['std']:.2f}"
    return f"{agg['mean']:.2f}"


def emit_table(rows: list[dict], path: str | Path, title: str = "") -> Path:
    """Aligned plain-text table plus a machine-readable twin next to it.

    Every row carries the config hash of the run that produced it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = ["name", "method", "augmentations", "dataset", "knn_accuracy", "silhouette",
               "config_hash", "note"]
    display: list[list[str]] = []
    for row in rows:
        display.append([
            str(row.get("name", "")),
            str(row.get("method", "")),
            str(row.get("augmentations", "")),
            str(row.get("dataset", "")),
            _format_metric(row["knn_accuracy"]) if "knn_accuracy" in row else "-",
            _format_metric(row["silhouette"]) if "silhouette" in row else "-",
            str(row.get("config_hash", "")),
            str(row.get("note", "")),
        ])
    widths = [max(len(columns[i]), *(len(r[i]) for r in display)) if display else len(columns[i])
              for i in range(len(columns))]
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in display:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    path.with_suffix(".json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    return path


def ablation_suite(cfg: ExperimentConfig, ds: ImageDataset | None = None) -> list[dict]:
    """Single-removal ablations over the full augmentation stack.

    The base set is the default stack plus arbitrary rotations; each variant
    disables exactly one component. Variants that beat the full stack are
    flagged in the note column, not asserted against: the orderings are
    empirical, not guaranteed.
    """
    if ds is None:
        ds = load_experiment_dataset(cfg)
    base = augmentation_set_config("plus_rot_any", ds.image_size, cfg.fill_color)
    variants: dict[str, AugmentationConfig] = {}
    for name in ABLATION_VARIANTS:
        variant = copy.deepcopy(base)
        if name == "no_crops":
            variant.crop.enabled = False
        elif name == "no_color_jitter":
            variant.jitter.enabled = False
        elif name == "no_grayscaling":
            variant.grayscale.enabled = False
        variants[name] = variant

    out_root = Path(cfg.out_dir)
    rows: list[dict] = []
    for name, variant in variants.items():
        sub_cfg = dataclasses.replace(
            cfg, method="tsimcne", out_dir=str(out_root / name), name=name)
        bundle = run_experiment(sub_cfg, ds=ds, aug_override=variant, label=name)
        rows.append(bundle.summary)
    full = next(r for r in rows if r["name"] == "all")
    for row in rows:
        if row["name"] == "all":
            continue
        if row["knn_accuracy"]["mean"] > full["knn_accuracy"]["mean"]:
            row["note"] = "exceeds full stack"
    emit_table(rows, out_root / "ablation_table.txt", title="Augmentation ablations")
    return rows


def control_experiment_cifar(cfg: ExperimentConfig, ds: ImageDataset | None = None) -> dict:
    """Rotation-sensitivity control: default stack vs. flips plus 90-degree rotations.

    On natural images the extra rotations are expected to hurt; on a
    rotation-invariant dataset the signed delta should be near zero or
    positive. The report carries both accuracies and the delta.
    """
    if ds is None:
        ds = load_experiment_dataset(cfg)
    out_root = Path(cfg.out_dir)
    results: dict[str, dict] = {}
    for set_name in ("default", "plus_rot90"):
        sub_cfg = dataclasses.replace(
            cfg, method="tsimcne", augmentation_set=set_name,
            out_dir=str(out_root / set_name), name=set_name)
        bundle = run_experiment(sub_cfg, ds=ds, label=set_name)
        results[set_name] = bundle.summary
    report = {
        "dataset": ds.name,
        "default": results["default"],
        "plus_rot90": results["plus_rot90"],
        "knn_default": results["default"]["knn_accuracy"]["mean"],
        "knn_plus_rot90": results["plus_rot90"]["knn_accuracy"]["mean"],
        "delta": results["plus_rot90"]["knn_accuracy"]["mean"]
                 - results["default"]["knn_accuracy"]["mean"],
    }
    (out_root / "control_report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8")
    emit_table([results["default"], results["plus_rot90"]],
               out_root / "control_table.txt", title="Rotation control")
    return report


def collect_summaries(root: str | Path) -> list[dict]:
    """Gather summary files under a directory tree into table rows."""
    rows = []
    for path in sorted(Path(root).rglob("summary.json")):
        rows.append(json.loads(path.read_text(encoding="utf-8")))
    return rows
