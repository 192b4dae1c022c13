"""Country-scale prompt similarity rasters.

A raster holds one optional unit embedding per grid cell; scoring takes
per-cell cosine against a prompt embedding and min-max scales the result
into [0, 1] for rendering. Output formats are a plain row/col/value CSV
and 8-bit P2 PGM (rendering palettes are out of scope).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyRaster, IoFailure, ValidationError
from .io import atomic_write_bytes


@dataclass
class EmbeddingRaster:
    """Grid of optional unit vectors (row-major, row 0 at the top)."""

    width: int
    height: int
    origin: tuple[float, float]  # (easting, northing) meters
    cell_size_m: float
    cells: np.ndarray  # (height*width, dim)
    present: np.ndarray  # (height*width,) bool

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.float64)
        self.present = np.asarray(self.present, dtype=bool)
        if self.cells.ndim != 2 or self.cells.shape[0] != self.width * self.height:
            raise DimMismatch("cells must be (width*height, dim)")
        if self.present.shape != (self.width * self.height,):
            raise DimMismatch("present mask must have width*height entries")
        if self.present.any():
            norms = np.linalg.norm(self.cells[self.present], axis=1)
            if np.abs(norms - 1.0).max() > 1e-4:
                raise ValidationError("present cells must be unit-norm within 1e-4")


@dataclass
class ScoreRaster:
    """Same geometry as its source raster, scalar value per present cell."""

    width: int
    height: int
    origin: tuple[float, float]
    cell_size_m: float
    values: np.ndarray  # (height*width,)
    present: np.ndarray  # (height*width,) bool


def grid_similarity(raster: EmbeddingRaster, prompt) -> ScoreRaster:
    """Cosine of every present cell against the prompt; missing cells stay missing."""
    p = np.asarray(prompt, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] != raster.cells.shape[1]:
        raise DimMismatch("prompt dim must match raster cell dim")
    values = np.zeros(raster.cells.shape[0])
    values[raster.present] = raster.cells[raster.present] @ p
    return ScoreRaster(
        width=raster.width, height=raster.height, origin=raster.origin,
        cell_size_m=raster.cell_size_m, values=values, present=raster.present.copy(),
    )


def minmax_scale(scores: ScoreRaster) -> ScoreRaster:
    """(v - min)/(max - min) over present cells; constant rasters map to 0.5."""
    if not scores.present.any():
        raise EmptyRaster("no present cells to scale")
    vals = scores.values.copy()
    present_vals = vals[scores.present]
    lo, hi = present_vals.min(), present_vals.max()
    if hi == lo:
        vals[scores.present] = 0.5
    else:
        vals[scores.present] = (present_vals - lo) / (hi - lo)
    return ScoreRaster(
        width=scores.width, height=scores.height, origin=scores.origin,
        cell_size_m=scores.cell_size_m, values=vals, present=scores.present.copy(),
    )


def write_raster(scores: ScoreRaster, path: str, format: str = "csv") -> None:
    """Write scores as ``row,col,value`` CSV (missing omitted) or 0-255 P2 PGM."""
    if not scores.present.any():
        raise EmptyRaster("refusing to write a raster with no present cells")
    if format == "csv":
        lines = ["row,col,value"]
        for idx in range(scores.values.shape[0]):
            if not scores.present[idx]:
                continue
            row, col = divmod(idx, scores.width)
            lines.append(f"{row},{col},{float(scores.values[idx])!r}")
        atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))
    elif format == "pgm":
        header = (
            f"P2\n"
            f"# origin={float(scores.origin[0])!r},{float(scores.origin[1])!r}"
            f" cell_size_m={float(scores.cell_size_m)!r}\n"
            f"{scores.width} {scores.height}\n255\n"
        )
        rows = []
        for r in range(scores.height):
            vals = []
            for c in range(scores.width):
                idx = r * scores.width + c
                if scores.present[idx]:
                    v = min(max(scores.values[idx], 0.0), 1.0)
                    vals.append(str(int(round(v * 255))))
                else:
                    vals.append("0")
            rows.append(" ".join(vals))
        atomic_write_bytes(path, (header + "\n".join(rows) + "\n").encode("utf-8"))
    else:
        raise ValidationError(f"unknown raster format {format!r} (use csv or pgm)")


def save_raster_embeddings(path: str, raster: EmbeddingRaster) -> None:
    """Persist cell embeddings as an interchange file plus a geometry sidecar.

    Missing cells are stored as zero rows (present cells are unit-norm, so
    zero rows are unambiguous).
    """
    from .io import write_embeddings, write_json

    cells = raster.cells.copy()
    cells[~raster.present] = 0.0
    write_embeddings(path, cells)
    write_json(path + ".geom.json", {
        "width": raster.width,
        "height": raster.height,
        "origin": [raster.origin[0], raster.origin[1]],
        "cell_size_m": raster.cell_size_m,
    })


def load_raster_embeddings(path: str) -> EmbeddingRaster:
    import json

    from .io import read_embeddings

    cells = read_embeddings(path).astype(np.float64)
    try:
        with open(path + ".geom.json", "r", encoding="utf-8") as fh:
            geom = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}.geom.json: {exc}") from exc
    present = np.linalg.norm(cells, axis=1) > 0.5
    return EmbeddingRaster(
        width=int(geom["width"]),
        height=int(geom["height"]),
        origin=(float(geom["origin"][0]), float(geom["origin"][1])),
        cell_size_m=float(geom["cell_size_m"]),
        cells=cells,
        present=present,
    )


def read_raster_csv(path: str, width: int, height: int) -> ScoreRaster:
    """Read back a CSV written by :func:`write_raster` (for round-trip checks)."""
    values = np.zeros(width * height)
    present = np.zeros(width * height, dtype=bool)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "row,col,value":
                raise IoFailure(f"{path}: unexpected CSV header {header!r}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row_s, col_s, val_s = line.split(",")
                idx = int(row_s) * width + int(col_s)
                values[idx] = float(val_s)
                present[idx] = True
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return ScoreRaster(width=width, height=height, origin=(0.0, 0.0),
                       cell_size_m=0.0, values=values, present=present)
