"""Embedding results with provenance, persisted as column-oriented text."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class EmbeddingResult:
    """N x 2 coordinates with labels and the provenance that produced them."""

    coords: np.ndarray
    labels: np.ndarray
    method: str = ""
    augmentations: str = ""
    seed: int = 0
    dataset: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ValueError(f"coords must have shape (N, 2), got {self.coords.shape}")
        if len(self.labels) != len(self.coords):
            raise ValueError(
                f"labels length {len(self.labels)} does not match coords length {len(self.coords)}"
            )
        if not np.isfinite(self.coords).all():
            raise ValueError("coords contain non-finite values")

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]


def save_embedding(result: EmbeddingResult, path: str | Path) -> Path:
    """Write as CSV with '#'-prefixed provenance header lines and columns index,x,y,label."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# method={result.method}",
        f"# augmentations={result.augmentations}",
        f"# seed={result.seed}",
        f"# dataset={result.dataset}",
    ]
    for key in sorted(result.extra):
        lines.append(f"# {key}={result.extra[key]}")
    lines.append("index,x,y,label")
    for i in range(result.n_points):
        x, y = result.coords[i]
        lines.append(f"{i},{x:.9g},{y:.9g},{result.labels[i]}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_embedding(path: str | Path) -> EmbeddingResult:
    path = Path(path)
    meta: dict[str, str] = {}
    xs: list[float] = []
    ys: list[float] = []
    labels: list[int] = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, value = body.split("=", 1)
                    meta[key.strip()] = value.strip()
                continue
            if line.startswith("index,"):
                continue
            _, x, y, label = line.split(",")
            xs.append(float(x))
            ys.append(float(y))
            labels.append(int(label))
    known = {"method", "augmentations", "seed", "dataset"}
    return EmbeddingResult(
        coords=np.stack([np.asarray(xs, dtype=np.float32), np.asarray(ys, dtype=np.float32)], axis=1),
        labels=np.asarray(labels, dtype=np.int64),
        method=meta.get("method", ""),
        augmentations=meta.get("augmentations", ""),
        seed=int(meta.get("seed", "0")),
        dataset=meta.get("dataset", ""),
        extra={k: v for k, v in meta.items() if k not in known},
    )
