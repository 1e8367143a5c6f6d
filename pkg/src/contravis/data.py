"""Dataset loading, validation, and label/shape preprocessing.

Images are stored as uint8 RGB arrays of shape (N, H, W, 3) with H == W and
are only converted to unit-interval floats at the augmentation boundary.
Two on-disk formats are supported:

* tensor-archive: a single ``.npz`` file with named arrays ``images`` and
  ``labels`` plus a sidecar UTF-8 manifest (one ``key=value`` per line,
  required keys ``name`` and ``classes``, the latter comma-separated).
* image-folder: ``root/<class_name>/<file>.png|jpg``, one subdirectory per
  class.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

ARCHIVE_FORMATS = ("tensor-archive", "image-folder")
_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class ImageDataset:
    """A uniformly shaped RGB image collection with integer labels.

    Invariants (checked on construction): all images share one square
    H x W shape, labels lie in [0, C) where C == len(class_names), and
    images/labels have equal length.
    """

    name: str
    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    source_meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels)
        if self.images.ndim != 4 or self.images.shape[3] != 3:
            raise ValueError(
                f"images must have shape (N, H, W, 3), got {self.images.shape}"
            )
        if self.images.dtype != np.uint8:
            raise ValueError(f"images must be uint8, got {self.images.dtype}")
        n, h, w, _ = self.images.shape
        if h != w:
            raise ValueError(f"images must be square, got {h}x{w}")
        if self.labels.ndim != 1 or len(self.labels) != n:
            raise ValueError(
                f"labels must be one integer per image: {len(self.labels)} labels "
                f"for {n} images"
            )
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError(f"labels must be integers, got {self.labels.dtype}")
        self.labels = self.labels.astype(np.int64)
        if not self.class_names:
            raise ValueError("missing class names")
        c = len(self.class_names)
        if n and (self.labels.min() < 0 or self.labels.max() >= c):
            raise ValueError(
                f"label out of range: labels must lie in [0, {c}), "
                f"found range [{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def n_images(self) -> int:
        return self.images.shape[0]

    @property
    def image_size(self) -> int:
        return self.images.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def replace(self, **kwargs) -> "ImageDataset":
        return dataclasses.replace(self, **kwargs)


@dataclass
class SplitSpec:
    """Train/test split specification; defaults to the 9:1 split."""

    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0,1), got {self.train_fraction}")


def manifest_path(archive_path: str | Path) -> Path:
    """Sidecar manifest path for a tensor archive (``foo.npz`` -> ``foo.manifest``)."""
    p = Path(archive_path)
    if p.suffix == ".npz":
        return p.with_suffix(".manifest")
    return Path(str(p) + ".manifest")


def _read_manifest(path: Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed manifest line in {path}: {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def _write_manifest(path: Path, name: str, class_names: list[str],
                    source_meta: dict[str, str]) -> None:
    for cname in class_names:
        if "," in cname or "\n" in cname:
            raise ValueError(f"class name {cname!r} must not contain commas or newlines")
    lines = [f"name={name}", f"classes={','.join(class_names)}"]
    for key in sorted(source_meta):
        if key in ("name", "classes"):
            continue
        lines.append(f"{key}={source_meta[key]}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_dataset(ds: ImageDataset, path: str | Path) -> Path:
    """Write a dataset in tensor-archive format (npz + sidecar manifest)."""
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(path.suffix + ".npz") if path.suffix else path.with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, images=ds.images, labels=ds.labels)
    _write_manifest(manifest_path(path), ds.name, ds.class_names, ds.source_meta)
    return path


def _load_tensor_archive(path: Path) -> ImageDataset:
    with np.load(path) as archive:
        if "images" not in archive:
            raise ValueError(f"archive {path} is missing the 'images' array")
        if "labels" not in archive:
            raise ValueError(f"archive {path} is missing labels")
        images = archive["images"]
        labels = archive["labels"]
    mpath = manifest_path(path)
    if not mpath.exists():
        raise ValueError(f"missing class names: no manifest at {mpath}")
    entries = _read_manifest(mpath)
    if "classes" not in entries or not entries["classes"]:
        raise ValueError(f"missing class names in manifest {mpath}")
    class_names = [c.strip() for c in entries["classes"].split(",")]
    name = entries.get("name", path.stem)
    meta = {k: v for k, v in entries.items() if k not in ("name", "classes")}
    if labels.ndim == 2 and labels.shape[1] == 1:
        labels = labels[:, 0]
    return ImageDataset(name=name, images=images, labels=labels,
                        class_names=class_names, source_meta=meta)


def _load_image_folder(root: Path) -> ImageDataset:
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ValueError(f"missing class names: no class subdirectories under {root}")
    class_names = [d.name for d in class_dirs]
    images: list[np.ndarray] = []
    labels: list[int] = []
    shape = None
    for label, cdir in enumerate(class_dirs):
        files = sorted(f for f in cdir.iterdir() if f.suffix.lower() in _IMAGE_SUFFIXES)
        for f in files:
            with Image.open(f) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
            if shape is None:
                shape = arr.shape
                if shape[0] != shape[1]:
                    raise ValueError(f"ragged image shapes: {f} is non-square {shape[:2]}")
            elif arr.shape != shape:
                raise ValueError(
                    f"ragged image shapes: {f} has {arr.shape[:2]}, expected {shape[:2]}"
                )
            images.append(arr)
            labels.append(label)
    if not images:
        raise ValueError(f"no images found under {root}")
    return ImageDataset(name=root.name, images=np.stack(images),
                        labels=np.asarray(labels, dtype=np.int64),
                        class_names=class_names,
                        source_meta={"source": str(root)})


def load_dataset(path: str | Path, format: str = "tensor-archive") -> ImageDataset:
    """Load a dataset from disk into the canonical validated form.

    ``format`` is one of ``tensor-archive`` or ``image-folder``; channel
    order is RGB in both cases.
    """
    if format not in ARCHIVE_FORMATS:
        raise ValueError(f"unknown format {format!r}, expected one of {ARCHIVE_FORMATS}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset path does not exist: {path}")
    if format == "tensor-archive":
        return _load_tensor_archive(path)
    return _load_image_folder(path)


def merge_rare_classes(ds: ImageDataset, min_count: int,
                       merged_name: str = "other") -> ImageDataset:
    """Relabel every class with fewer than ``min_count`` members into one new class.

    Surviving classes keep their relative order and are reindexed from 0;
    the merged class is appended last. N is unchanged.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = ds.class_counts()
    rare = counts < min_count
    if not rare.any():
        return ds
    if rare.all():
        raise ValueError(
            f"all {ds.n_classes} classes have fewer than {min_count} members; "
            "merging would leave a single class"
        )
    kept = np.flatnonzero(~rare)
    mapping = np.full(ds.n_classes, len(kept), dtype=np.int64)
    mapping[kept] = np.arange(len(kept))
    new_names = [ds.class_names[i] for i in kept] + [merged_name]
    return ds.replace(labels=mapping[ds.labels], class_names=new_names)


def binarize_labels(ds: ImageDataset, positive_classes: set[int] | list[int],
                    names: tuple[str, str] = ("negative", "positive")) -> ImageDataset:
    """Reduce labels to binary: 1 iff the original label is in ``positive_classes``.

    ``names`` gives the class names for labels (0, 1) in that order.
    """
    positive = set(int(c) for c in positive_classes)
    if not positive:
        raise ValueError("positive_classes must be nonempty")
    all_classes = set(range(ds.n_classes))
    if not positive <= all_classes:
        raise ValueError(f"positive_classes {positive - all_classes} out of range [0,{ds.n_classes})")
    if positive == all_classes:
        raise ValueError("positive_classes must be a proper subset of all classes")
    new_labels = np.isin(ds.labels, sorted(positive)).astype(np.int64)
    return ds.replace(labels=new_labels, class_names=[names[0], names[1]])


def resize_images(ds: ImageDataset, target: int) -> ImageDataset:
    """Resize all images to target x target; area interpolation when downscaling,
    bilinear when upscaling. Labels are unchanged; a no-op returns the input."""
    if target < 1:
        raise ValueError(f"target size must be >= 1, got {target}")
    if target == ds.image_size:
        return ds
    interp = cv2.INTER_AREA if target < ds.image_size else cv2.INTER_LINEAR
    resized = np.empty((ds.n_images, target, target, 3), dtype=np.uint8)
    for i in range(ds.n_images):
        resized[i] = cv2.resize(ds.images[i], (target, target), interpolation=interp)
    return ds.replace(images=resized)


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint, exhaustive train/test index split, deterministic given seed.

    Train size is round(train_fraction * n) with ties going to even, the
    remainder forms the test set.
    """
    if n < 2:
        raise ValueError(f"need at least 2 points to split, got {n}")
    n_train = int(round(spec.train_fraction * n))
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[:n_train], perm[n_train:]
