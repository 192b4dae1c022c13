import numpy as np
import pytest

from conftest import random_unit_rows
from wincel.errors import DimMismatch, EmptyRaster
from wincel.simmap import (
    EmbeddingRaster,
    ScoreRaster,
    grid_similarity,
    load_raster_embeddings,
    minmax_scale,
    read_raster_csv,
    save_raster_embeddings,
    write_raster,
)


def make_raster(rng, w=3, h=3, d=6, missing=()):
    cells = random_unit_rows(rng, w * h, d)
    present = np.ones(w * h, dtype=bool)
    for idx in missing:
        present[idx] = False
        cells[idx] = 0.0
    return EmbeddingRaster(width=w, height=h, origin=(100.0, 200.0), cell_size_m=100.0,
                           cells=cells, present=present)


class TestGridSimilarity:
    def test_all_equal_prompt(self, rng):
        prompt = random_unit_rows(rng, 1, 6)[0]
        cells = np.tile(prompt, (9, 1))
        raster = EmbeddingRaster(3, 3, (0, 0), 100.0, cells, np.ones(9, dtype=bool))
        out = grid_similarity(raster, prompt)
        np.testing.assert_allclose(out.values, 1.0, atol=1e-9)

    def test_orthogonal_cell(self):
        cells = np.array([[1.0, 0.0], [0.0, 1.0]])
        raster = EmbeddingRaster(2, 1, (0, 0), 100.0, cells, np.ones(2, dtype=bool))
        out = grid_similarity(raster, np.array([1.0, 0.0]))
        np.testing.assert_allclose(out.values, [1.0, 0.0], atol=1e-12)

    def test_matches_loop(self, rng):
        raster = make_raster(rng, missing=(4,))
        prompt = random_unit_rows(rng, 1, 6)[0]
        out = grid_similarity(raster, prompt)
        for i in range(9):
            if raster.present[i]:
                assert out.values[i] == pytest.approx(float(raster.cells[i] @ prompt), abs=1e-9)
            else:
                assert not out.present[i]

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimMismatch):
            grid_similarity(make_raster(rng), np.ones(3))


class TestMinmaxScale:
    def _scores(self, values, present=None):
        values = np.asarray(values, dtype=float)
        present = np.ones(len(values), dtype=bool) if present is None else np.asarray(present)
        return ScoreRaster(len(values), 1, (0, 0), 100.0, values, present)

    def test_affine(self):
        out = minmax_scale(self._scores([0.2, 0.6, 1.0]))
        np.testing.assert_allclose(out.values, [0.0, 0.5, 1.0], atol=1e-12)

    def test_constant_maps_to_half(self):
        out = minmax_scale(self._scores([0.7, 0.7, 0.7]))
        np.testing.assert_allclose(out.values, 0.5, atol=1e-12)

    def test_missing_preserved(self):
        out = minmax_scale(self._scores([0.0, 5.0, 9.0, 1.0], [True, False, True, True]))
        assert not out.present[1]
        np.testing.assert_allclose(out.values[[0, 2, 3]], [0.0, 1.0, 1 / 9], atol=1e-12)

    def test_empty_raster(self):
        with pytest.raises(EmptyRaster):
            minmax_scale(self._scores([1.0], [False]))

    def test_positive_affine_invariance(self, rng):
        vals = rng.standard_normal(12)
        base = minmax_scale(self._scores(vals))
        scaled = minmax_scale(self._scores(3.5 * vals + 11.0))
        np.testing.assert_allclose(base.values, scaled.values, atol=1e-9)


class TestRasterIO:
    def test_pgm_single_cell(self, tmp_path):
        scores = ScoreRaster(1, 1, (10.0, 20.0), 100.0, np.array([1.0]), np.ones(1, dtype=bool))
        path = str(tmp_path / "one.pgm")
        write_raster(scores, path, format="pgm")
        content = open(path).read()
        assert content.splitlines()[0] == "P2"
        assert content.splitlines()[-1] == "255"
        assert "origin=10.0,20.0" in content

    def test_csv_roundtrip(self, rng, tmp_path):
        values = rng.random(12)
        present = rng.random(12) > 0.25
        present[0] = True
        scores = ScoreRaster(4, 3, (0, 0), 100.0, values, present)
        path = str(tmp_path / "scores.csv")
        write_raster(scores, path, format="csv")
        back = read_raster_csv(path, 4, 3)
        np.testing.assert_array_equal(back.present, present)
        np.testing.assert_allclose(back.values[present], values[present], atol=1e-6)

    def test_empty_raster_write(self, tmp_path):
        scores = ScoreRaster(1, 1, (0, 0), 100.0, np.zeros(1), np.zeros(1, dtype=bool))
        with pytest.raises(EmptyRaster):
            write_raster(scores, str(tmp_path / "e.csv"))

    def test_embedding_raster_roundtrip(self, rng, tmp_path):
        raster = make_raster(rng, missing=(2, 7))
        path = str(tmp_path / "cells.eemb")
        save_raster_embeddings(path, raster)
        back = load_raster_embeddings(path)
        assert back.width == raster.width and back.height == raster.height
        np.testing.assert_array_equal(back.present, raster.present)
        np.testing.assert_allclose(back.cells, raster.cells.astype(np.float32), atol=1e-7)
