"""Figure emission for embeddings: class-colored scatters and thumbnail grids.

Rendering is headless and deterministic: fixed backend, fixed dpi, no
timestamps in the output files. Nothing here mutates embeddings or reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Rectangle

from .evaluation import EvalReport

FIGURE_KINDS = ("scatter", "grid_thumbnails", "annotated")


@dataclass
class FigureSpec:
    kind: str = "scatter"
    grid_size: int = 10
    min_cell_count: int = 100
    class_colors: dict[int, str] = field(default_factory=dict)
    point_size: float = 2.0
    figsize: tuple[float, float] = (6.0, 6.0)
    dpi: int = 150

    def __post_init__(self) -> None:
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"kind must be one of {FIGURE_KINDS}, got {self.kind!r}")
        if self.grid_size < 1:
            raise ValueError(f"grid_size must be >= 1, got {self.grid_size}")
        if self.min_cell_count < 1:
            raise ValueError(f"min_cell_count must be >= 1, got {self.min_cell_count}")


def class_color_table(n_classes: int, overrides: dict[int, str] | None = None) -> list:
    """Distinct per-class colors, with optional explicit overrides.

    Overrides let a merged catch-all class render black while the rest keep
    the categorical palette.
    """
    if n_classes <= 10:
        base = [plt.get_cmap("tab10")(i) for i in range(n_classes)]
    elif n_classes <= 20:
        base = [plt.get_cmap("tab20")(i) for i in range(n_classes)]
    else:
        base = [plt.get_cmap("hsv")(i / n_classes) for i in range(n_classes)]
    if overrides:
        for idx, color in overrides.items():
            if 0 <= idx < n_classes:
                base[idx] = matplotlib.colors.to_rgba(color)
    return base


def _check_inputs(coords: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"coords must have shape (N, 2), got {coords.shape}")
    if len(coords) == 0:
        raise ValueError("empty embedding")
    if len(labels) != len(coords):
        raise ValueError(f"label count {len(labels)} does not match point count {len(coords)}")
    return coords, labels


def _save(fig, out_path: str | Path, dpi: int) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {"Date": None} if out_path.suffix == ".svg" else None
    fig.savefig(out_path, dpi=dpi, metadata=metadata)
    plt.close(fig)
    return out_path


def scatter_figure(coords: np.ndarray, labels: np.ndarray, spec: FigureSpec,
                   out_path: str | Path, class_names: list[str] | None = None,
                   report: EvalReport | None = None, title: str = "") -> Path:
    """One point per image, colored by class, with a legend of class names.

    When an EvalReport is given its metrics are annotated in the corner of
    the panel.
    """
    coords, labels = _check_inputs(coords, labels)
    n_classes = int(labels.max()) + 1
    colors = class_color_table(n_classes, spec.class_colors)
    if class_names is None:
        class_names = [f"class {i}" for i in range(n_classes)]
    if len(class_names) < n_classes:
        raise ValueError(f"{n_classes} classes but only {len(class_names)} names")

    fig, ax = plt.subplots(figsize=spec.figsize)
    for c in range(n_classes):
        mask = labels == c
        if not mask.any():
            continue
        ax.scatter(coords[mask, 0], coords[mask, 1], s=spec.point_size,
                   color=colors[c], label=class_names[c], linewidths=0,
                   rasterized=True)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize=7, markerscale=4, framealpha=0.8)
    if report is not None:
        ax.text(0.02, 0.02,
                f"kNN {report.knn_accuracy:.1f}%  silhouette {report.silhouette:.2f}",
                transform=ax.transAxes, fontsize=8, va="bottom",
                bbox={"boxstyle": "round", "facecolor": "white", "alpha": 0.8})
    fig.tight_layout()
    return _save(fig, out_path, spec.dpi)


def select_cell_representatives(coords: np.ndarray, spec: FigureSpec) -> dict[tuple[int, int], int]:
    """Map occupied grid cells to the index of the point nearest each cell center.

    The embedding bounding box is divided into grid_size x grid_size equal
    cells; cells holding fewer than min_cell_count points get no entry.
    Selection is deterministic (nearest center, ties to the smallest index).
    """
    g = spec.grid_size
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    cell = np.clip((coords - lo) / span * g, 0, g - 1e-9).astype(np.int64)
    chosen: dict[tuple[int, int], int] = {}
    for cx in range(g):
        for cy in range(g):
            mask = (cell[:, 0] == cx) & (cell[:, 1] == cy)
            members = np.flatnonzero(mask)
            if len(members) < spec.min_cell_count:
                continue
            center = lo + (np.array([cx, cy]) + 0.5) / g * span
            d2 = ((coords[members] - center) ** 2).sum(axis=1)
            chosen[(cx, cy)] = int(members[d2.argmin()])
    return chosen


def grid_thumbnail_figure(coords: np.ndarray, images: np.ndarray, labels: np.ndarray,
                          spec: FigureSpec, out_path: str | Path,
                          seed: int = 0) -> Path:
    """Thumbnails of representative images on a grid over the embedding.

    Each sufficiently populated cell shows the source image of the point
    nearest its center, framed in that point's class color, over a gray
    scatter of the full embedding. ``seed`` is accepted for interface
    stability; the nearest-center choice does not use it.
    """
    coords, labels = _check_inputs(coords, labels)
    if len(images) != len(coords):
        raise ValueError(f"image count {len(images)} does not match point count {len(coords)}")
    n_classes = int(labels.max()) + 1
    colors = class_color_table(n_classes, spec.class_colors)
    g = spec.grid_size
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    chosen = select_cell_representatives(coords, spec)

    fig, ax = plt.subplots(figsize=spec.figsize)
    ax.scatter(coords[:, 0], coords[:, 1], s=1.0, color="0.8", linewidths=0,
               rasterized=True)
    cell_w, cell_h = span / g
    for (cx, cy), idx in sorted(chosen.items()):
        x0 = lo[0] + cx * cell_w
        y0 = lo[1] + cy * cell_h
        pad_x, pad_y = 0.08 * cell_w, 0.08 * cell_h
        extent = (x0 + pad_x, x0 + cell_w - pad_x, y0 + pad_y, y0 + cell_h - pad_y)
        ax.imshow(images[idx], extent=extent, origin="upper", zorder=2)
        ax.add_patch(Rectangle((extent[0], extent[2]),
                               extent[1] - extent[0], extent[3] - extent[2],
                               fill=False, edgecolor=colors[int(labels[idx])],
                               linewidth=1.5, zorder=3))
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    return _save(fig, out_path, spec.dpi)
