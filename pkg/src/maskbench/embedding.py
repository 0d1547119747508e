"""Training-free block-mean embeddings, distance, and verification threshold calibration."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, InputError, ValidationError
from .imaging import FACE_SIZE, GRID, PERIOCULAR_REGIONS
from .raster import Raster


@dataclass(frozen=True, eq=False)
class Embedding:
    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValidationError("embedding contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        return isinstance(other, Embedding) and np.array_equal(self.values, other.values)

    __hash__ = None


Embedder = Callable[[Raster], Embedding]


def embed_blockmean(img: Raster, grid: int = GRID, cells: Sequence[int] | None = None) -> Embedding:
    """Per-cell, per-channel mean intensity over a ``grid`` x ``grid`` tiling, scaled to [0, 1].

    Layout is cell-major (row-major cells, channels innermost). ``cells`` keeps only
    the listed cell indices, e.g. the periocular band.
    """
    if grid <= 0 or img.width % grid or img.height % grid:
        raise ValidationError(f"grid {grid} does not divide image size {img.width}x{img.height}")
    a = img.to_array().astype(np.float64)
    ch, cw = img.height // grid, img.width // grid
    means = a.reshape(grid, ch, grid, cw, img.channels).mean(axis=(1, 3)) / 255.0
    flat = means.reshape(grid * grid, img.channels)
    tag = f"blockmean(grid={grid})"
    if cells is not None:
        cells = list(cells)
        if any(not 0 <= c < grid * grid for c in cells):
            raise ValidationError(f"cell index out of range for grid {grid}")
        flat = flat[cells]
        tag = f"blockmean(grid={grid},cells={cells[0]}..{cells[-1]})" if cells else tag
    return Embedding(flat.ravel(), tag)


def periocular_cells(grid: int = GRID) -> list[int]:
    """Grid cells covering the periocular band (regions 25-30 of the 8x8 face grid)."""
    if grid == GRID:
        return list(PERIOCULAR_REGIONS)
    if grid % GRID:
        raise ValidationError(f"periocular cells are defined for grids that are multiples of {GRID}")
    f = grid // GRID
    out = []
    for region in PERIOCULAR_REGIONS:
        r, c = divmod(region, GRID)
        out.extend((r * f + i) * grid + (c * f + j) for i in range(f) for j in range(f))
    return sorted(out)


def blockmean_embedder(grid: int = GRID, features: str = "full") -> Embedder:
    if FACE_SIZE % grid:
        raise ValidationError(f"grid {grid} must divide {FACE_SIZE}")
    if features == "full":
        return lambda img: embed_blockmean(img, grid)
    if features == "periocular":
        cells = periocular_cells(grid)
        return lambda img: embed_blockmean(img, grid, cells)
    raise ValidationError(f"unknown feature set {features!r}; use 'full' or 'periocular'")


def euclidean(a, b) -> float:
    va = np.asarray(getattr(a, "values", a), dtype=float)
    vb = np.asarray(getattr(b, "values", b), dtype=float)
    if va.shape != vb.shape:
        raise ValidationError(f"embedding length mismatch: {va.shape[0]} vs {vb.shape[0]}")
    return float(np.sqrt(np.sum((va - vb) ** 2)))


@dataclass(frozen=True)
class ThresholdFit:
    threshold: float
    accuracy: float


def calibrate_threshold(train_pairs: Iterable[tuple[float, bool]]) -> ThresholdFit:
    """Pick the distance threshold (match iff d < threshold) maximising pair accuracy.

    Candidates are 0 (reject all), the midpoints between consecutive distinct
    distances, and max + 1 (accept all). Ties go to the larger threshold.
    """
    pairs = [(float(d), bool(s)) for d, s in train_pairs]
    if not any(s for _, s in pairs) or all(s for _, s in pairs):
        raise DataError("calibration needs at least one same-subject and one different-subject pair")
    d = np.array([p[0] for p in pairs])
    same = np.array([p[1] for p in pairs])
    order = np.argsort(d, kind="stable")
    d, same = d[order], same[order]
    distinct = np.unique(d)
    candidates = np.concatenate([[0.0], (distinct[:-1] + distinct[1:]) / 2, [distinct[-1] + 1.0]])
    # accepted(t) = pairs with d < t; correct = accepted same + rejected different
    n_acc = np.searchsorted(d, candidates, side="left")
    cum_same = np.concatenate([[0], np.cumsum(same)])
    total_diff = int((~same).sum())
    correct = cum_same[n_acc] + (total_diff - (n_acc - cum_same[n_acc]))
    best = int(np.flatnonzero(correct == correct.max())[-1])
    return ThresholdFit(float(candidates[best]), float(correct[best]) / len(pairs))


def read_embeddings(path) -> dict[str, Embedding]:
    """Load ``image_path,v0,v1,...`` CSV; the header fixes the dimension."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise InputError(f"embedding file not found: {path}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[0].strip() != "image_path" or len(header) < 2:
        raise InputError(f"{path}:1: expected header image_path,v0,v1,...")
    dim = len(header) - 1
    out = {}
    for row in reader:
        if not row:
            continue
        if len(row) != dim + 1:
            raise InputError(f"{path}:{reader.line_num}: expected {dim} values, got {len(row) - 1}")
        try:
            out[row[0]] = Embedding(np.array([float(v) for v in row[1:]]), f"file:{path.name}")
        except ValueError as exc:
            raise InputError(f"{path}:{reader.line_num}: {exc}") from exc
    return out


def write_embeddings(items: dict[str, Embedding]) -> str:
    dims = {len(e) for e in items.values()}
    if len(dims) > 1:
        raise ValidationError("embeddings of mixed length")
    dim = dims.pop() if dims else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_path"] + [f"v{i}" for i in range(dim)])
    for k, e in items.items():
        w.writerow([k] + [repr(float(v)) for v in e.values])
    return buf.getvalue()
