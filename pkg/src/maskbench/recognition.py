"""Verification (1:1) and identification (1:N) scoring and condition-matrix reports."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, InputError, ValidationError


@dataclass(frozen=True)
class PairTrial:
    subject_a: str
    subject_b: str
    match: bool  # decision
    same: bool  # ground truth

    @property
    def outcome(self) -> str:
        if self.same:
            return "TP" if self.match else "FN"
        return "FP" if self.match else "TN"


def confusion(trials: Iterable[PairTrial]) -> dict[str, int]:
    c = {"TP": 0, "TN": 0, "FP": 0, "FN": 0}
    for t in trials:
        c[t.outcome] += 1
    return c


def accuracy(trials: Sequence[PairTrial]) -> float:
    """(TP + TN) / (TP + TN + FP + FN)."""
    c = confusion(trials)
    total = sum(c.values())
    if total == 0:
        raise DataError("accuracy of an empty trial list")
    return (c["TP"] + c["TN"]) / total


def identify_top1(probe, gallery: Sequence[tuple[str, object]]) -> str:
    """Subject of the nearest gallery embedding (Euclidean); earliest entry wins ties."""
    if not gallery:
        raise DataError("empty gallery")
    p = np.asarray(getattr(probe, "values", probe), dtype=float)
    g = np.stack([np.asarray(getattr(v, "values", v), dtype=float) for _, v in gallery])
    if g.shape[1] != p.shape[0]:
        raise ValidationError(f"embedding length mismatch: probe {p.shape[0]}, gallery {g.shape[1]}")
    d = np.sqrt(((g - p) ** 2).sum(axis=1))
    return gallery[int(np.argmin(d))][0]


def identification_accuracy(probes: Sequence[tuple[str, object]], gallery: Sequence[tuple[str, object]]) -> float:
    if not probes:
        raise DataError("no probes")
    hits = sum(identify_top1(v, gallery) == s for s, v in probes)
    return hits / len(probes)


@dataclass
class Cell:
    mean: float
    std: float = 0.0
    n: int = 1

    def __str__(self):
        return f"{self.mean:.4f} ± {self.std:.4f}"


@dataclass
class ConditionMatrix:
    """Train-condition rows x test-condition columns of fold-averaged accuracy."""

    rows: list[str]
    cols: list[str]
    cells: dict[tuple[str, str], Cell]
    title: str = ""

    def __post_init__(self):
        for (r, c), cell in self.cells.items():
            if not 0.0 <= cell.mean <= 1.0 or cell.std < 0:
                raise ValidationError(f"cell ({r}, {c}) out of range: {cell}")

    def __getitem__(self, key: tuple[str, str]) -> Cell:
        try:
            return self.cells[key]
        except KeyError:
            raise DataError(f"no cell (train={key[0]}, test={key[1]}) in {self.title or 'matrix'}") from None

    @classmethod
    def from_table(cls, labels: Sequence[str], means, stds=None, title: str = "", cols: Sequence[str] | None = None):
        cols = list(cols or labels)
        means = np.asarray(means, dtype=float)
        stds = np.zeros_like(means) if stds is None else np.asarray(stds, dtype=float)
        cells = {
            (r, c): Cell(float(means[i, j]), float(stds[i, j]))
            for i, r in enumerate(labels)
            for j, c in enumerate(cols)
        }
        return cls(list(labels), cols, cells, title)

    def means(self) -> np.ndarray:
        return np.array([[self[(r, c)].mean for c in self.cols] for r in self.rows])

    def stds(self) -> np.ndarray:
        return np.array([[self[(r, c)].std for c in self.cols] for r in self.rows])

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "rows": self.rows,
            "cols": self.cols,
            "cells": [
                {"train": r, "test": c, "mean": self[(r, c)].mean, "std": self[(r, c)].std, "folds": self[(r, c)].n}
                for r in self.rows
                for c in self.cols
            ],
        }

    def format(self) -> str:
        """Aligned text table, train conditions down, test conditions across."""
        corner = "train\\test"
        w0 = max(len(corner), *(len(r) for r in self.rows))
        cw = max(17, *(len(c) for c in self.cols))
        lines = []
        if self.title:
            lines.append(self.title)
        lines.append(f"{corner:<{w0}} | " + " ".join(f"{c:>{cw}}" for c in self.cols))
        lines.append("-" * (w0 + 3 + (cw + 1) * len(self.cols) - 1))
        for r in self.rows:
            lines.append(f"{r:<{w0}} | " + " ".join(f"{str(self[(r, c)]):>{cw}}" for c in self.cols))
        return "\n".join(lines)


def degradation_delta(
    matrix: ConditionMatrix,
    baseline_cell: tuple[str, str],
    degraded_cell: tuple[str, str],
    degraded_matrix: ConditionMatrix | None = None,
) -> float:
    """Baseline mean minus degraded mean; the degraded cell may come from a second matrix."""
    other = matrix if degraded_matrix is None else degraded_matrix
    return matrix[baseline_cell].mean - other[degraded_cell].mean


def build_condition_matrix(
    per_fold_results: Iterable[tuple[str, str, int, float]],
    rows: Sequence[str] | None = None,
    cols: Sequence[str] | None = None,
    title: str = "",
) -> ConditionMatrix:
    """Mean and population std over folds for each (train, test) cell."""
    acc = defaultdict(dict)
    for train, test, fold, value in per_fold_results:
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"accuracy {value} outside [0, 1] for ({train}, {test}, fold {fold})")
        acc[(train, test)][fold] = float(value)
    rows = list(rows) if rows is not None else _ordered(k[0] for k in acc)
    cols = list(cols) if cols is not None else _ordered(k[1] for k in acc)
    missing = [(r, c) for r in rows for c in cols if (r, c) not in acc]
    if missing:
        raise DataError("missing condition cells: " + ", ".join(f"({r}, {c})" for r, c in missing))
    cells = {}
    for r in rows:
        for c in cols:
            v = np.array([acc[(r, c)][f] for f in sorted(acc[(r, c)])])
            cells[(r, c)] = Cell(float(v.mean()), float(v.std()), len(v))
    return ConditionMatrix(rows, cols, cells, title)


def _ordered(items) -> list[str]:
    seen = {}
    for it in items:
        seen.setdefault(it, None)
    return list(seen)


RESULT_COLUMNS = ("train_cond", "test_cond", "fold", "accuracy")


def read_fold_results(path) -> list[tuple[str, str, int, float]]:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise InputError(f"results file not found: {path}") from exc
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader, [])]
    if tuple(header) != RESULT_COLUMNS:
        raise InputError(f"{path}:1: expected header {','.join(RESULT_COLUMNS)}")
    out = []
    for row in reader:
        if not row:
            continue
        try:
            out.append((row[0].strip(), row[1].strip(), int(row[2]), float(row[3])))
        except (IndexError, ValueError) as exc:
            raise InputError(f"{path}:{reader.line_num}: {exc}") from exc
    return out


def write_fold_results(results: Iterable[tuple[str, str, int, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for train, test, fold, a in results:
        w.writerow([train, test, fold, repr(float(a))])
    return buf.getvalue()


def round4(x: float) -> float:
    """Round to 4 decimals, half away from zero, absorbing float noise from subtraction."""
    return math.floor(abs(x) * 1e4 + 0.5 + 1e-9) / 1e4 * (1 if x >= 0 else -1)
