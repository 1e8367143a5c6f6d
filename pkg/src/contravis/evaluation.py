"""Embedding quality metrics: kNN classification accuracy and silhouette score.

Both are computed from all-pairs Euclidean distances in blocked passes so
datasets in the hundreds of thousands fit in memory. Tie handling is pinned
down so results are bit-for-bit reproducible: neighbor-vote ties go to the
smallest class index and distance ties to the smallest point index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import SplitSpec, split_indices
from .results import EmbeddingResult

_BLOCK_ROWS = 2048


@dataclass
class EvalReport:
    """Both metrics plus the settings that produced them."""

    knn_accuracy: float
    silhouette: float
    k: int
    split_seed: int
    n_points: int
    n_classes: int
    method: str = ""
    dataset: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.knn_accuracy <= 100.0:
            raise ValueError(f"knn_accuracy must be in [0, 100], got {self.knn_accuracy}")
        if not -1.0 <= self.silhouette <= 1.0:
            raise ValueError(f"silhouette must be in [-1, 1], got {self.silhouette}")


def save_report(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(asdict(report), indent=2) + "\n", encoding="utf-8")
    return path


def load_report(path: str | Path) -> EvalReport:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no eval report at {path}")
    return EvalReport(**json.loads(path.read_text(encoding="utf-8")))


def _check_coords(emb: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(emb, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"embedding must be 2-D (N, d), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("embedding contains non-finite coordinates")
    return x


def _block_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between the rows of a and of b.

    Accumulated per coordinate from explicit differences rather than the
    x^2 - 2xy + y^2 expansion: the expansion cancels catastrophically for
    near-coincident points and the metrics are checked against a per-pair
    oracle at 1e-10.
    """
    out = np.zeros((len(a), len(b)))
    for d in range(a.shape[1]):
        out += (a[:, d, None] - b[None, :, d]) ** 2
    return out


def knn_accuracy(emb: np.ndarray, labels: np.ndarray, k: int = 15,
                 split: SplitSpec | None = None) -> float:
    """Percent of held-out points whose k-nearest-neighbor vote matches their label.

    The points are split into train and test portions; each test point is
    classified by the majority label among its k Euclidean nearest train
    points. Vote ties break to the smallest class index, distance ties to
    the smallest point index.
    """
    x = _check_coords(emb)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    if len(y) != len(x):
        raise ValueError(f"label count {len(y)} does not match point count {len(x)}")
    split = split if split is not None else SplitSpec()
    train_idx, test_idx = split_indices(len(x), split)
    if k > len(train_idx):
        raise ValueError(f"k={k} exceeds train size {len(train_idx)}")
    train_y = y[train_idx]
    if len(np.unique(train_y)) < 2:
        raise ValueError("train portion contains a single class")
    if len(test_idx) == 0:
        raise ValueError("test portion is empty; decrease train_fraction")

    train_x = x[train_idx]
    n_classes = int(y.max()) + 1
    correct = 0
    for lo in range(0, len(test_idx), _BLOCK_ROWS):
        block = test_idx[lo:lo + _BLOCK_ROWS]
        tx = x[block]
        # Squared distances suffice: monotone in the true distance.
        d2 = _block_sqdist(tx, train_x)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        votes = train_y[order]
        for row, true_label in zip(votes, y[block]):
            counts = np.bincount(row, minlength=n_classes)
            if counts.argmax() == true_label:
                correct += 1
    return 100.0 * correct / len(test_idx)


def silhouette_values(emb: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-point silhouette scores (b - w) / max(w, b).

    w is the mean distance to the point's own class (itself excluded); b is
    the smallest mean distance to any other class. A point whose class has
    no other member scores 0, as does a point with w = b = 0.
    """
    x = _check_coords(emb)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    if len(y) != len(x):
        raise ValueError(f"label count {len(y)} does not match point count {len(x)}")
    classes, y_idx = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ValueError("silhouette requires at least 2 classes")
    n = len(x)
    n_classes = len(classes)
    counts = np.bincount(y_idx, minlength=n_classes).astype(np.float64)
    indicator = np.zeros((n, n_classes))
    indicator[np.arange(n), y_idx] = 1.0

    scores = np.empty(n)
    for lo in range(0, n, _BLOCK_ROWS):
        hi = min(lo + _BLOCK_ROWS, n)
        dist = np.sqrt(_block_sqdist(x[lo:hi], x))
        class_sums = dist @ indicator
        rows = y_idx[lo:hi]
        own_count = counts[rows]
        own_sum = class_sums[np.arange(hi - lo), rows]
        other_means = class_sums / counts[None, :]
        other_means[np.arange(hi - lo), rows] = np.inf
        b = other_means.min(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            w = own_sum / (own_count - 1.0)
            denom = np.maximum(w, b)
            s = (b - w) / denom
        s[own_count <= 1] = 0.0
        s[denom == 0.0] = 0.0
        scores[lo:hi] = s
    return scores


def silhouette(emb: np.ndarray, labels: np.ndarray,
               sample_size: int | None = None, sample_seed: int = 0) -> float:
    """Mean per-point silhouette; see ``silhouette_values``.

    ``sample_size`` computes the score on a random subset for quick checks;
    the default is the full one-pass computation.
    """
    x = _check_coords(emb)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    if sample_size is not None and sample_size < len(x):
        pick = np.random.default_rng(sample_seed).choice(len(x), size=sample_size, replace=False)
        pick.sort()
        x, y = x[pick], y[pick]
    return float(silhouette_values(x, y).mean())


def evaluate_embedding(emb: EmbeddingResult, k: int = 15,
                       split: SplitSpec | None = None) -> EvalReport:
    split = split if split is not None else SplitSpec()
    acc = knn_accuracy(emb.coords, emb.labels, k=k, split=split)
    sil = silhouette(emb.coords, emb.labels)
    return EvalReport(
        knn_accuracy=acc,
        silhouette=sil,
        k=k,
        split_seed=split.seed,
        n_points=emb.n_points,
        n_classes=int(emb.labels.max()) + 1,
        method=emb.method,
        dataset=emb.dataset,
    )
