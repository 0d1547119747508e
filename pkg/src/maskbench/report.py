"""Report output: JSON documents, aligned text tables, CSV, and PNG figures.

Figures are drawn on bare ``Figure`` objects with the Agg canvas, so no pyplot state or
display backend is involved.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from . import __version__
from .detection import PRCurve, area_under_envelope
from .recognition import ConditionMatrix

PNG_METADATA = {"Software": None}


def envelope(payload: dict, config: dict, command: str) -> dict:
    """Wrap a report payload with the command, resolved configuration, and toolkit version."""
    return {"tool": "maskbench", "version": __version__, "command": command, "config": config, **payload}


def write_json(path, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=False, default=_jsonable) + "\n", encoding="utf-8")
    return path


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    return path


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=110, metadata=PNG_METADATA)
    return path


def plot_condition_matrix(matrix: ConditionMatrix, path) -> Path:
    means = matrix.means()
    stds = matrix.stds()
    n_r, n_c = means.shape
    fig = Figure(figsize=(1.6 + 1.35 * n_c, 1.2 + 0.9 * n_r))
    ax = fig.add_subplot()
    im = ax.imshow(means, vmin=0.0, vmax=1.0, cmap="viridis")
    for i in range(n_r):
        for j in range(n_c):
            color = "black" if means[i, j] > 0.6 else "white"
            ax.text(j, i, f"{means[i, j]:.4f}\n±{stds[i, j]:.4f}", ha="center", va="center", fontsize=8, color=color)
    ax.set_xticks(range(n_c), matrix.cols, rotation=30, ha="right")
    ax.set_yticks(range(n_r), matrix.rows)
    ax.set_xlabel("test")
    ax.set_ylabel("train")
    if matrix.title:
        ax.set_title(matrix.title, fontsize=10)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    return _save(fig, path)


def plot_pr_curves(curves: dict[str, PRCurve], path, title: str = "") -> Path:
    fig = Figure(figsize=(5, 4))
    ax = fig.add_subplot()
    for label, c in curves.items():
        r = np.concatenate([[0.0], c.recall])
        p = np.concatenate([[c.precision[0] if len(c.precision) else 0.0], c.precision])
        ax.step(r, p, where="post", label=f"{label} (AP {area_under_envelope(c):.3f})")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    if title:
        ax.set_title(title, fontsize=10)
    if curves:
        ax.legend(fontsize=8, loc="lower left")
    fig.tight_layout()
    return _save(fig, path)


def plot_map_by_threshold(per_threshold: dict[float, float], path) -> Path:
    fig = Figure(figsize=(5, 3.2))
    ax = fig.add_subplot()
    ts = list(per_threshold)
    ax.plot(ts, [per_threshold[t] for t in ts], marker="o")
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("mAP")
    ax.set_ylim(0, 1.05)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_deltas(names: Sequence[str], values: Sequence[float], path) -> Path:
    fig = Figure(figsize=(7, 0.6 + 0.45 * len(names)))
    ax = fig.add_subplot()
    y = np.arange(len(names))
    ax.barh(y, values, color="tab:red")
    for yi, v in zip(y, values):
        ax.text(v, yi, f" {v:.4f}", va="center", fontsize=8)
    ax.set_yticks(y, names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("accuracy delta")
    ax.set_xlim(0, max(1.0, max(values, default=0) * 1.15))
    fig.tight_layout()
    return _save(fig, path)


def matrix_csv(matrix: ConditionMatrix) -> str:
    lines = ["train,test,mean,std,folds"]
    for r in matrix.rows:
        for c in matrix.cols:
            cell = matrix[(r, c)]
            lines.append(f"{r},{c},{cell.mean:.6f},{cell.std:.6f},{cell.n}")
    return "\n".join(lines) + "\n"
