"""Reference 2D embeddings to compare the trained encoder against.

Three feature sources feed a common t-SNE step: raw pixels (optionally
PCA-compressed), a pretrained classification network's penultimate
activations, and the 512-D representation of an encoder trained with the
cosine InfoNCE objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from sklearn.manifold import TSNE

from .augment import AugmentationConfig, default_config
from .data import ImageDataset, resize_images
from .losses import LossConfig
from .network import EncoderModel, build_model
from .results import EmbeddingResult
from .training import TrainConfig, TrainRunRecord, embed_dataset, train_stage

# Per-channel statistics commonly paired with ImageNet-trained checkpoints.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class FeatureMatrix:
    """Dense per-image feature vectors plus labels and provenance."""

    features: np.ndarray
    labels: np.ndarray
    source: str
    dataset: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if len(self.labels) != len(self.features):
            raise ValueError(
                f"feature/label count mismatch: {len(self.features)} vs {len(self.labels)}"
            )

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def save_features(fm: FeatureMatrix, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, features=fm.features, labels=fm.labels,
                        source=np.array(fm.source), dataset=np.array(fm.dataset))
    return path


def load_features(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no feature file at {path}")
    with np.load(path, allow_pickle=False) as archive:
        return FeatureMatrix(
            features=archive["features"],
            labels=archive["labels"],
            source=str(archive["source"]),
            dataset=str(archive["dataset"]),
        )


def pixel_features(ds: ImageDataset) -> FeatureMatrix:
    """Flattened raw pixels scaled to [0, 1]."""
    flat = ds.images.reshape(ds.n_images, -1).astype(np.float32) / 255.0
    return FeatureMatrix(features=flat, labels=ds.labels.copy(),
                         source="pixels", dataset=ds.name)


def pca_reduce(features: np.ndarray, n_components: int) -> np.ndarray:
    """Project onto the top principal components via SVD.

    Component signs are fixed so the largest-magnitude loading of each
    component is positive, making the projection reproducible across runs.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    if not 1 <= n_components <= min(x.shape):
        raise ValueError(
            f"n_components={n_components} outside [1, {min(x.shape)}] "
            f"for feature shape {x.shape}")
    centered = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:n_components]
    signs = np.sign(components[np.arange(n_components),
                               np.argmax(np.abs(components), axis=1)])
    signs[signs == 0] = 1.0
    components = components * signs[:, None]
    return (centered @ components.T).astype(np.float32)


def _normalize_batch(x: torch.Tensor, mean: tuple[float, ...], std: tuple[float, ...]) -> torch.Tensor:
    m = torch.tensor(mean, dtype=x.dtype).view(1, -1, 1, 1)
    s = torch.tensor(std, dtype=x.dtype).view(1, -1, 1, 1)
    return (x - m) / s


def _center_crop(images: np.ndarray, size: int) -> np.ndarray:
    h = images.shape[1]
    if h < size:
        raise ValueError(f"cannot center-crop {h}px images to {size}px")
    off = (h - size) // 2
    return images[:, off:off + size, off:off + size, :]


def pretrained_features(ds: ImageDataset, checkpoint: str | Path, arch: str = "resnet18",
                        resize_to: int = 256, crop_to: int = 224,
                        mean: tuple[float, ...] = IMAGENET_MEAN,
                        std: tuple[float, ...] = IMAGENET_STD,
                        batch_size: int = 64) -> FeatureMatrix:
    """Penultimate-layer activations of a pretrained classifier.

    Images go through the conventional inference preprocessing: resize so the
    short side is ``resize_to``, center-crop to ``crop_to``, then normalize
    per channel. Weights come from a local checkpoint file (a state dict),
    never the network.
    """
    from torchvision import models

    if arch == "resnet18":
        net = models.resnet18(weights=None)
        dim = 512
    elif arch == "resnet152":
        net = models.resnet152(weights=None)
        dim = 2048
    else:
        raise ValueError(f"unsupported architecture {arch!r}")
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"no pretrained checkpoint at {checkpoint}")
    state = torch.load(checkpoint, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    net.load_state_dict(state)
    net.fc = torch.nn.Identity()
    net.eval()

    resized = resize_images(ds, resize_to).images
    cropped = _center_crop(resized, crop_to)
    feats = np.empty((ds.n_images, dim), dtype=np.float32)
    with torch.no_grad():
        for lo in range(0, ds.n_images, batch_size):
            chunk = cropped[lo:lo + batch_size].astype(np.float32) / 255.0
            x = torch.from_numpy(chunk).permute(0, 3, 1, 2).contiguous()
            x = _normalize_batch(x, mean, std)
            feats[lo:lo + len(chunk)] = net(x).numpy()
    return FeatureMatrix(features=feats, labels=ds.labels.copy(),
                         source=f"pretrained_{arch}", dataset=ds.name,
                         extra={"checkpoint": str(checkpoint)})


def train_simclr(ds: ImageDataset, aug_cfg: AugmentationConfig | None = None,
                 epochs: int = 1000, batch_size: int = 1024, seed: int = 0,
                 temperature: float = 0.5,
                 checkpoint_dir: str | Path | None = None) -> tuple[EncoderModel, FeatureMatrix, TrainRunRecord]:
    """Single-stage contrastive run with the cosine InfoNCE objective.

    Trains a 128-D output for ``epochs`` epochs and returns the 512-D
    backbone representation of every image, which is what the t-SNE step
    consumes.
    """
    if aug_cfg is None:
        aug_cfg = default_config(ds.image_size)
    loss = LossConfig("infonce_cosine", temperature=temperature)
    cfg = TrainConfig(
        stage_epochs=(epochs, 0, 0),
        batch_size=batch_size,
        stage_losses=(loss, loss, loss),
        seed=seed,
    )
    model = build_model(cfg.resolve_variant(ds.image_size), cfg.out_dims[0], init_seed=seed)
    model, record = train_stage(model, ds, aug_cfg, cfg, stage=1, seed=seed,
                                checkpoint_dir=checkpoint_dir)
    h = embed_dataset(model, ds, which="h")
    fm = FeatureMatrix(features=h, labels=ds.labels.copy(),
                       source="simclr", dataset=ds.name)
    return model, fm, record


def tsne_embed(fm: FeatureMatrix, seed: int = 0, perplexity: float = 30.0,
               pca_dims: int | None = None) -> EmbeddingResult:
    """2D t-SNE of a feature matrix with PCA initialization.

    ``pca_dims`` compresses the features first; the high-dimensional pixel
    baseline uses 100 components.
    """
    feats = fm.features
    if pca_dims is not None and fm.dim > pca_dims:
        feats = pca_reduce(feats, pca_dims)
    perplexity = min(perplexity, (fm.n_samples - 1) / 3.0)
    tsne = TSNE(
        n_components=2,
        perplexity=perplexity,
        early_exaggeration=12.0,
        init="pca",
        random_state=seed,
    )
    coords = tsne.fit_transform(feats.astype(np.float64))
    return EmbeddingResult(
        coords=coords.astype(np.float32),
        labels=fm.labels.copy(),
        method=f"tsne_{fm.source}",
        augmentations="none",
        seed=seed,
        dataset=fm.dataset,
    )


def pixel_tsne(ds: ImageDataset, seed: int = 0, pca_dims: int | None = None) -> EmbeddingResult:
    """t-SNE of raw pixels; set ``pca_dims=100`` for large images."""
    return tsne_embed(pixel_features(ds), seed=seed, pca_dims=pca_dims)
