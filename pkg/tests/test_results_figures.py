"""Embedding persistence and figure rendering."""

import numpy as np
import pytest

from contravis.evaluation import EvalReport
from contravis.figures import (FigureSpec, class_color_table,
                               grid_thumbnail_figure, scatter_figure,
                               select_cell_representatives)
from contravis.results import EmbeddingResult, load_embedding, save_embedding
from contravis.synthetic import make_blob_dataset


def sample_result(rng, n=30, method="tsimcne"):
    coords = rng.normal(size=(n, 2)).astype(np.float32)
    labels = rng.integers(0, 3, n).astype(np.int64)
    return EmbeddingResult(coords=coords, labels=labels, method=method,
                           augmentations="crop+hflip", seed=4,
                           dataset="toy", extra={"note": "unit"})


class TestEmbeddingResult:
    def test_validation(self, rng):
        with pytest.raises(ValueError):
            EmbeddingResult(coords=np.zeros((4, 3)), labels=np.zeros(4))
        with pytest.raises(ValueError):
            EmbeddingResult(coords=np.zeros((4, 2)), labels=np.zeros(3))
        bad = np.zeros((4, 2))
        bad[0, 0] = np.nan
        with pytest.raises(ValueError):
            EmbeddingResult(coords=bad, labels=np.zeros(4))

    def test_round_trip_is_float32_exact(self, rng, tmp_path):
        result = sample_result(rng)
        path = save_embedding(result, tmp_path / "emb.csv")
        back = load_embedding(path)
        assert back.coords.dtype == np.float32
        assert np.array_equal(back.coords, result.coords)
        assert np.array_equal(back.labels, result.labels)

    def test_provenance_survives_round_trip(self, rng, tmp_path):
        result = sample_result(rng)
        back = load_embedding(save_embedding(result, tmp_path / "emb.csv"))
        assert back.method == "tsimcne"
        assert back.augmentations == "crop+hflip"
        assert back.seed == 4
        assert back.dataset == "toy"
        assert back.extra == {"note": "unit"}

    def test_header_lines_prefixed(self, rng, tmp_path):
        path = save_embedding(sample_result(rng), tmp_path / "emb.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "# method=tsimcne"
        assert "index,x,y,label" in lines
        header_end = lines.index("index,x,y,label")
        assert all(line.startswith("#") for line in lines[:header_end])


class TestClassColorTable:
    def test_distinct_colors_small(self):
        colors = class_color_table(5)
        assert len(colors) == 5
        assert len({tuple(np.atleast_1d(c).tolist()) if not isinstance(c, str)
                    else c for c in colors}) == 5

    def test_many_classes_supported(self):
        assert len(class_color_table(37)) == 37

    def test_override_applied(self):
        colors = class_color_table(3, overrides={1: "#000000"})
        assert tuple(colors[1]) == (0.0, 0.0, 0.0, 1.0)


class TestScatterFigure:
    def test_writes_file(self, rng, tmp_path):
        result = sample_result(rng)
        out = scatter_figure(result.coords, result.labels, FigureSpec(),
                             tmp_path / "fig.png",
                             class_names=["a", "b", "c"])
        assert out.exists()
        assert out.stat().st_size > 0

    def test_byte_deterministic(self, rng, tmp_path):
        result = sample_result(rng)
        report = EvalReport(knn_accuracy=0.9, silhouette=0.3, k=15,
                            split_seed=0, n_points=30, n_classes=3)
        p1 = scatter_figure(result.coords, result.labels, FigureSpec(),
                            tmp_path / "a.png", report=report, title="t")
        p2 = scatter_figure(result.coords, result.labels, FigureSpec(),
                            tmp_path / "b.png", report=report, title="t")
        assert p1.read_bytes() == p2.read_bytes()

    def test_inputs_not_mutated(self, rng, tmp_path):
        result = sample_result(rng)
        coords = result.coords.copy()
        labels = result.labels.copy()
        scatter_figure(result.coords, result.labels, FigureSpec(),
                       tmp_path / "fig.png")
        assert np.array_equal(coords, result.coords)
        assert np.array_equal(labels, result.labels)

    def test_svg_output(self, rng, tmp_path):
        out = scatter_figure(*_coords_labels(rng), FigureSpec(),
                             tmp_path / "fig.svg")
        assert out.suffix == ".svg"
        assert b"<svg" in out.read_bytes()


def _coords_labels(rng, n=25):
    return (rng.normal(size=(n, 2)).astype(np.float32),
            rng.integers(0, 2, n).astype(np.int64))


class TestCellRepresentatives:
    def test_sparse_cells_skipped(self):
        """A cell holding fewer points than min_cell_count gets no thumbnail."""
        gen = np.random.default_rng(0)
        left = gen.uniform(0.0, 0.4, size=(99, 2))
        right = gen.uniform(0.6, 1.0, size=(150, 2))
        coords = np.concatenate([left, right]).astype(np.float32)
        spec = FigureSpec(kind="grid_thumbnails", grid_size=2, min_cell_count=100)
        reps = select_cell_representatives(coords, spec)
        cells = set(reps)
        assert (1, 1) in cells
        assert (0, 0) not in cells

    def test_single_cell_grid(self, rng):
        coords = rng.normal(size=(120, 2)).astype(np.float32)
        spec = FigureSpec(kind="grid_thumbnails", grid_size=1, min_cell_count=1)
        reps = select_cell_representatives(coords, spec)
        assert len(reps) == 1

    def test_representative_is_nearest_to_cell_center(self):
        coords = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.9],
                           [0.45, 0.55]], dtype=np.float32)
        spec = FigureSpec(kind="grid_thumbnails", grid_size=1, min_cell_count=1)
        reps = select_cell_representatives(coords, spec)
        ((_, idx),) = reps.items()
        center = np.array([0.5, 0.5])
        dists = np.linalg.norm(coords - center, axis=1)
        assert idx == int(np.argmin(dists))

    def test_indices_in_range(self, rng):
        coords = rng.normal(size=(300, 2)).astype(np.float32)
        spec = FigureSpec(kind="grid_thumbnails", grid_size=4, min_cell_count=5)
        reps = select_cell_representatives(coords, spec)
        assert reps
        for (cx, cy), idx in reps.items():
            assert 0 <= cx < 4 and 0 <= cy < 4
            assert 0 <= idx < 300


class TestGridThumbnailFigure:
    def test_writes_file(self, tmp_path):
        ds = make_blob_dataset(n_images=60, size=16, seed=0)
        gen = np.random.default_rng(1)
        coords = gen.normal(size=(60, 2)).astype(np.float32)
        spec = FigureSpec(kind="grid_thumbnails", grid_size=3, min_cell_count=2)
        out = grid_thumbnail_figure(coords, ds.images, ds.labels, spec,
                                    tmp_path / "grid.png")
        assert out.exists()
        assert out.stat().st_size > 0

    def test_byte_deterministic(self, tmp_path):
        ds = make_blob_dataset(n_images=60, size=16, seed=0)
        gen = np.random.default_rng(1)
        coords = gen.normal(size=(60, 2)).astype(np.float32)
        spec = FigureSpec(kind="grid_thumbnails", grid_size=3, min_cell_count=2)
        p1 = grid_thumbnail_figure(coords, ds.images, ds.labels, spec,
                                   tmp_path / "g1.png")
        p2 = grid_thumbnail_figure(coords, ds.images, ds.labels, spec,
                                   tmp_path / "g2.png")
        assert p1.read_bytes() == p2.read_bytes()

    def test_image_count_mismatch_rejected(self, tmp_path):
        ds = make_blob_dataset(n_images=10, size=16, seed=0)
        coords = np.zeros((8, 2), dtype=np.float32)
        spec = FigureSpec(kind="grid_thumbnails", grid_size=2, min_cell_count=1)
        with pytest.raises(ValueError):
            grid_thumbnail_figure(coords, ds.images, ds.labels[:8], spec,
                                  tmp_path / "bad.png")


class TestFigureSpec:
    def test_invalid_kind_rejected(self):
        with pytest.raises(ValueError):
            FigureSpec(kind="heatmap")

    def test_invalid_grid_rejected(self):
        with pytest.raises(ValueError):
            FigureSpec(grid_size=0)
