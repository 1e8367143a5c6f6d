"""Three-stage optimization schedule producing a trained 2D encoder.

Stage 1 trains a 128-dimensional output, the output layer is then swapped
for a 2D one and fine-tuned in stages 2 (new layer only by default) and 3
(everything). All stochasticity (batch shuffling, per-image augmentation
draws) is derived statelessly from (seed, stage, epoch, image index), so a
run is deterministic in single-worker mode and checkpoint-resume reproduces
the uninterrupted run bit-exactly.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentationConfig, apply_stack, image_rng, resolve_fill_color
from .data import ImageDataset
from .losses import LossConfig, contrastive_loss
from .network import (EncoderModel, build_model, freeze_backbone,
                      load_checkpoint, save_checkpoint, swap_output_layer)
from .results import EmbeddingResult

STAGES = (1, 2, 3)


@dataclass
class OptimizerConfig:
    kind: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def __post_init__(self) -> None:
        if self.kind != "sgd":
            raise ValueError(f"only 'sgd' is supported, got {self.kind!r}")


@dataclass
class LRScheduleConfig:
    """base_rate None means the batch-size rule: batch_size / 256 * 0.03."""

    base_rate: float | None = None
    warmup_epochs: tuple[int, int, int] = (10, 0, 0)
    annealing: str = "cosine"

    def __post_init__(self) -> None:
        if self.annealing not in ("cosine", "constant"):
            raise ValueError(f"annealing must be 'cosine' or 'constant', got {self.annealing!r}")


@dataclass
class TrainConfig:
    stage_epochs: tuple[int, int, int] = (1000, 50, 450)
    batch_size: int = 1024
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    lr_schedule: LRScheduleConfig = field(default_factory=LRScheduleConfig)
    stage_losses: tuple[LossConfig, LossConfig, LossConfig] = field(
        default_factory=lambda: (LossConfig("cauchy"), LossConfig("cauchy"), LossConfig("cauchy")))
    seed: int = 0
    backbone: str = "auto"
    out_dims: tuple[int, int] = (128, 2)
    stage2_trains: str = "output_layer"
    checkpoint_every: int = 1
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if len(self.stage_epochs) != 3 or any(e < 0 for e in self.stage_epochs):
            raise ValueError(f"stage_epochs must be three nonnegative ints, got {self.stage_epochs}")
        if self.backbone not in ("auto", "small_input", "standard"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.stage2_trains not in ("output_layer", "all"):
            raise ValueError(f"stage2_trains must be 'output_layer' or 'all', got {self.stage2_trains!r}")

    def base_lr(self) -> float:
        if self.lr_schedule.base_rate is not None:
            return self.lr_schedule.base_rate
        return self.batch_size / 256.0 * 0.03

    def resolve_variant(self, image_size: int) -> str:
        if self.backbone != "auto":
            return self.backbone
        return "small_input" if image_size <= 64 else "standard"


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    loss: float
    lr: float
    timestamp: float


@dataclass
class TrainRunRecord:
    """Per-epoch loss series plus provenance for one training run."""

    epochs: list[EpochRecord] = field(default_factory=list)
    wall_time_s: float = 0.0
    checkpoint_paths: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    stage_boundaries: list[int] = field(default_factory=list)

    def stage_losses(self, stage: int) -> list[float]:
        return [e.loss for e in self.epochs if e.stage == stage]

    def total_epochs(self) -> int:
        return len(self.epochs)


def save_record(record: TrainRunRecord, path: str | Path) -> Path:
    """Line-delimited structured text, one record per epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for e in record.epochs:
            fh.write(json.dumps(asdict(e)) + "\n")
    return path


def load_record(path: str | Path) -> TrainRunRecord:
    record = TrainRunRecord()
    prev_stage = None
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        payload = json.loads(line)
        record.epochs.append(EpochRecord(**payload))
        if payload["stage"] != prev_stage:
            record.stage_boundaries.append(i)
            prev_stage = payload["stage"]
    return record


def learning_rate(cfg: TrainConfig, stage: int, epoch: int) -> float:
    """Per-epoch learning rate: linear warmup then cosine annealing within the stage."""
    base = cfg.base_lr()
    n_epochs = cfg.stage_epochs[stage - 1]
    warmup = min(cfg.lr_schedule.warmup_epochs[stage - 1], n_epochs)
    if epoch < warmup:
        return base * (epoch + 1) / warmup
    if cfg.lr_schedule.annealing == "constant" or n_epochs == warmup:
        return base
    progress = (epoch - warmup) / (n_epochs - warmup)
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


def epoch_permutation(seed: int, stage: int, epoch: int, n: int) -> np.ndarray:
    """Stateless epoch shuffle derived from (seed, stage, epoch)."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5E0FF1E, stage, epoch]).permutation(n)


def apply_determinism_profile(single_thread: bool = False) -> None:
    """Deterministic execution profile: no mixed precision, deterministic kernels."""
    torch.use_deterministic_algorithms(True)
    if single_thread:
        torch.set_num_threads(1)


def _build_batch(images_unit: np.ndarray, indices: np.ndarray, cfg: AugmentationConfig,
                 seed: int, stage: int, epoch: int) -> torch.Tensor:
    """Interleaved view pairs: rows (2t, 2t+1) are the two views of indices[t]."""
    b = len(indices)
    size = cfg.crop.output_size
    batch = np.empty((2 * b, size, size, 3), dtype=np.float32)
    for t, idx in enumerate(indices):
        rng = image_rng(seed, stage, epoch, int(idx))
        batch[2 * t] = apply_stack(images_unit[idx], cfg, rng)
        batch[2 * t + 1] = apply_stack(images_unit[idx], cfg, rng)
    x = torch.from_numpy(batch).permute(0, 3, 1, 2).contiguous(memory_format=torch.channels_last)
    return x


def _trainable_parameters(model: EncoderModel, stage: int, cfg: TrainConfig):
    if stage == 2 and cfg.stage2_trains == "output_layer":
        return list(model.output_layer.parameters())
    return [p for p in model.parameters() if p.requires_grad]


def _set_stage_mode(model: EncoderModel, stage: int, cfg: TrainConfig) -> None:
    if stage == 2 and cfg.stage2_trains == "output_layer":
        # Only the swapped-in layer trains; eval mode keeps batch-norm
        # statistics frozen along with the parameters.
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        for p in model.output_layer.parameters():
            p.requires_grad_(True)
    else:
        model.train()
        for p in model.parameters():
            p.requires_grad_(True)


def _resume_path(checkpoint_dir: str | Path | None) -> Path | None:
    return Path(checkpoint_dir) / "resume.pt" if checkpoint_dir else None


def _save_resume(path: Path, model: EncoderModel, optimizer: torch.optim.Optimizer,
                 stage: int, next_epoch: int, record: TrainRunRecord) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    torch.save(
        {
            "variant": model.variant,
            "out_dim": model.out_dim,
            "state_dict": model.state_dict(),
            "optimizer": optimizer.state_dict(),
            "stage": stage,
            "next_epoch": next_epoch,
            "epochs": [asdict(e) for e in record.epochs],
        },
        tmp,
    )
    tmp.replace(path)


def train_stage(model: EncoderModel, ds: ImageDataset, aug_cfg: AugmentationConfig,
                train_cfg: TrainConfig, stage: int, seed: int | None = None,
                checkpoint_dir: str | Path | None = None,
                record: TrainRunRecord | None = None,
                start_epoch: int = 0,
                optimizer_state: dict | None = None) -> tuple[EncoderModel, TrainRunRecord]:
    """Run one stage of optimization over stochastic view pairs.

    The last incomplete batch of each epoch is dropped so every batch keeps
    the full 2b pairing structure. A non-finite loss aborts with a diagnostic
    checkpoint. Deterministic given the seed in single-worker mode.
    """
    if stage not in STAGES:
        raise ValueError(f"stage must be 1, 2 or 3, got {stage}")
    expected_dim = train_cfg.out_dims[0] if stage == 1 else train_cfg.out_dims[1]
    if model.out_dim != expected_dim:
        raise ValueError(
            f"stage {stage} requires out_dim={expected_dim}, model has {model.out_dim}"
        )
    seed = train_cfg.seed if seed is None else seed
    record = record if record is not None else TrainRunRecord(config=config_snapshot(train_cfg, aug_cfg))
    n_epochs = train_cfg.stage_epochs[stage - 1]
    if n_epochs == 0 or start_epoch >= n_epochs:
        return model, record

    device = torch.device(train_cfg.device)
    torch.set_flush_denormal(True)
    model.to(device).to(memory_format=torch.channels_last)
    _set_stage_mode(model, stage, train_cfg)
    loss_cfg: LossConfig = train_cfg.stage_losses[stage - 1]
    optimizer = torch.optim.SGD(
        _trainable_parameters(model, stage, train_cfg),
        lr=train_cfg.base_lr(),
        momentum=train_cfg.optimizer.momentum,
        weight_decay=train_cfg.optimizer.weight_decay,
    )
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)

    images_unit = ds.images.astype(np.float32) / 255.0
    n = ds.n_images
    b = train_cfg.batch_size
    n_batches = n // b
    if n_batches == 0:
        raise ValueError(f"batch_size {b} exceeds dataset size {n}; no full batch to train on")
    resume_file = _resume_path(checkpoint_dir)

    record.stage_boundaries.append(len(record.epochs))
    for epoch in range(start_epoch, n_epochs):
        lr = learning_rate(train_cfg, stage, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        perm = epoch_permutation(seed, stage, epoch, n)
        epoch_loss = 0.0
        for bi in range(n_batches):
            indices = perm[bi * b:(bi + 1) * b]
            x = _build_batch(images_unit, indices, aug_cfg, seed, stage, epoch).to(device)
            _, z = model(x)
            loss = contrastive_loss(z, loss_cfg)
            if not torch.isfinite(loss):
                if checkpoint_dir:
                    diag = save_checkpoint(model, Path(checkpoint_dir) / "diagnostic.pt",
                                           stage=stage, extra={"epoch": epoch, "batch": bi})
                    record.checkpoint_paths.append(str(diag))
                raise RuntimeError(
                    f"non-finite loss at stage {stage} epoch {epoch} batch {bi}"
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
        record.epochs.append(EpochRecord(stage=stage, epoch=epoch,
                                         loss=epoch_loss / n_batches, lr=lr,
                                         timestamp=time.time()))
        if resume_file is not None and ((epoch + 1) % max(1, train_cfg.checkpoint_every) == 0
                                        or epoch + 1 == n_epochs):
            _save_resume(resume_file, model, optimizer, stage, epoch + 1, record)
    return model, record


def embed_dataset(model: EncoderModel, ds_or_images, batch_size: int = 512,
                  which: str = "z", device: str = "cpu") -> np.ndarray:
    """Deterministic inference-mode outputs for every image, without augmentation.

    ``which`` selects the projector output ``z`` or the backbone
    representation ``h``.
    """
    if which not in ("z", "h"):
        raise ValueError(f"which must be 'z' or 'h', got {which!r}")
    images = ds_or_images.images if isinstance(ds_or_images, ImageDataset) else np.asarray(ds_or_images)
    model = model.to(device)
    was_training = model.training
    model.eval()
    outputs = []
    with torch.no_grad():
        for lo in range(0, len(images), batch_size):
            chunk = images[lo:lo + batch_size].astype(np.float32) / 255.0
            x = torch.from_numpy(chunk).permute(0, 3, 1, 2).contiguous().to(device)
            h, z = model(x)
            outputs.append((z if which == "z" else h).cpu().numpy())
    if was_training:
        model.train()
    return np.concatenate(outputs, axis=0)


def config_snapshot(train_cfg: TrainConfig, aug_cfg: AugmentationConfig | None = None) -> dict:
    snap = {"train": asdict(train_cfg)}
    if aug_cfg is not None:
        snap["augmentation"] = asdict(aug_cfg)
    return snap


def describe_augmentations(aug_cfg: AugmentationConfig) -> str:
    parts = []
    if aug_cfg.crop.enabled:
        parts.append("crop")
    if aug_cfg.hflip.enabled:
        parts.append("hflip")
    if aug_cfg.vflip.enabled:
        parts.append("vflip")
    if aug_cfg.rot90.enabled:
        parts.append("rot90")
    if aug_cfg.rot_any.enabled:
        parts.append("rot_any")
    if aug_cfg.jitter.enabled:
        parts.append("jitter")
    if aug_cfg.grayscale.enabled:
        parts.append("grayscale")
    return "+".join(parts) if parts else "none"


def run_pipeline(ds: ImageDataset, aug_cfg: AugmentationConfig, train_cfg: TrainConfig,
                 checkpoint_dir: str | Path | None = None,
                 resume: bool = False) -> tuple[EncoderModel, EmbeddingResult, TrainRunRecord]:
    """Full three-stage pipeline: 128-D stage, output swap to 2-D, two fine-tune stages.

    The returned embedding is the 2-D output for every dataset image without
    augmentation. With ``checkpoint_dir`` set, a resume checkpoint is written
    each epoch; ``resume=True`` continues an interrupted run bit-exactly.
    """
    aug_cfg = resolve_fill_color(aug_cfg, ds)
    seed = train_cfg.seed
    variant = train_cfg.resolve_variant(ds.image_size)
    wall_start = time.time()

    start_stage = 1
    start_epoch = 0
    optimizer_state = None
    record = TrainRunRecord(config=config_snapshot(train_cfg, aug_cfg))
    model: EncoderModel | None = None

    resume_file = _resume_path(checkpoint_dir)
    if resume and resume_file is not None and resume_file.exists():
        payload = torch.load(resume_file, map_location="cpu", weights_only=False)
        model = EncoderModel(payload["variant"], payload["out_dim"])
        model.load_state_dict(payload["state_dict"])
        optimizer_state = payload["optimizer"]
        start_stage = payload["stage"]
        start_epoch = payload["next_epoch"]
        record.epochs = [EpochRecord(**e) for e in payload["epochs"]]
        if start_epoch >= train_cfg.stage_epochs[start_stage - 1]:
            start_stage += 1
            start_epoch = 0
            optimizer_state = None
            if start_stage == 2:
                model = swap_output_layer(model, train_cfg.out_dims[1], init_seed=seed + 1)
    if model is None:
        model = build_model(variant, train_cfg.out_dims[0], init_seed=seed)

    for stage in STAGES:
        if stage < start_stage:
            continue
        if stage == 2 and start_stage <= 1:
            model = swap_output_layer(model, train_cfg.out_dims[1], init_seed=seed + 1)
        stage_start = start_epoch if stage == start_stage else 0
        stage_opt_state = optimizer_state if stage == start_stage else None
        model, record = train_stage(model, ds, aug_cfg, train_cfg, stage, seed=seed,
                                    checkpoint_dir=checkpoint_dir, record=record,
                                    start_epoch=stage_start, optimizer_state=stage_opt_state)
        if checkpoint_dir:
            path = save_checkpoint(model, Path(checkpoint_dir) / f"stage{stage}.pt", stage=stage)
            record.checkpoint_paths.append(str(path))

    freeze_backbone(model, False)
    for p in model.parameters():
        p.requires_grad_(True)
    coords = embed_dataset(model, ds, which="z")
    record.wall_time_s = time.time() - wall_start
    embedding = EmbeddingResult(
        coords=coords,
        labels=ds.labels.copy(),
        method="tsimcne",
        augmentations=describe_augmentations(aug_cfg),
        seed=seed,
        dataset=ds.name,
    )
    return model, embedding, record
