"""Reference losses for the detector and the Siamese verifier, with analytic gradients.

Each loss has a ``*_grad`` companion returning the partial derivatives with respect to
its real-valued inputs, and ``grad_check`` compares those against central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError

DEFAULT_MARGIN = 1.0


@dataclass(frozen=True)
class BinarySample:
    y: int
    y_pred: float

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValidationError(f"binary label must be 0 or 1, got {self.y}")
        if not 0.0 < self.y_pred < 1.0:
            raise ValidationError(f"y_pred must lie strictly inside (0, 1), got {self.y_pred}")


@dataclass(frozen=True)
class BoxRegressionSample:
    predicted: tuple[float, float, float, float]
    target: tuple[float, float, float, float]
    true_class: int = 1

    def __post_init__(self):
        if len(self.predicted) != 4 or len(self.target) != 4:
            raise ValidationError("box regression vectors must have length 4 (x, y, w, h)")
        object.__setattr__(self, "predicted", tuple(float(v) for v in self.predicted))
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))


@dataclass(frozen=True)
class ContrastiveSample:
    y: int
    d: float
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValidationError(f"pair label must be 0 or 1, got {self.y}")
        if self.d < 0:
            raise ValidationError(f"distance must be non-negative, got {self.d}")
        if self.margin <= 0:
            raise ValidationError(f"margin must be positive, got {self.margin}")


def bce_loss(s: BinarySample) -> float:
    if not 0.0 < s.y_pred < 1.0:
        raise ValidationError(f"y_pred must lie strictly inside (0, 1), got {s.y_pred}")
    return -s.y * math.log(s.y_pred) - (1 - s.y) * math.log(1.0 - s.y_pred)


def bce_grad(s: BinarySample) -> dict[str, float]:
    return {"y_pred": -s.y / s.y_pred + (1 - s.y) / (1.0 - s.y_pred)}


def smooth_l1(x: float) -> float:
    ax = abs(x)
    return 0.5 * x * x if ax <= 1.0 else ax - 0.5


def smooth_l1_grad(x: float) -> float:
    if abs(x) <= 1.0:
        return x
    return 1.0 if x > 0 else -1.0


def box_loss(s: BoxRegressionSample) -> float:
    return sum(smooth_l1(t - v) for t, v in zip(s.predicted, s.target))


_AXES = ("x", "y", "w", "h")


def box_grad(s: BoxRegressionSample) -> dict[str, float]:
    g = {}
    for axis, t, v in zip(_AXES, s.predicted, s.target):
        d = smooth_l1_grad(t - v)
        g[f"t_{axis}"] = d
        g[f"v_{axis}"] = -d
    return g


def multitask_loss(cls: float, box: float) -> float:
    if cls < 0 or box < 0:
        raise ValidationError("loss components must be non-negative")
    return cls + box


def contrastive_loss(s: ContrastiveSample) -> float:
    hinge = max(s.margin - s.d, 0.0)
    return s.y * s.d * s.d + (1 - s.y) * hinge * hinge


def contrastive_grad(s: ContrastiveSample) -> dict[str, float]:
    hinge = max(s.margin - s.d, 0.0)
    return {
        "d": 2.0 * s.y * s.d - 2.0 * (1 - s.y) * hinge,
        "margin": 2.0 * (1 - s.y) * hinge,
    }


@dataclass
class _LossSpec:
    # Flattens a sample to named real coordinates and back, so finite differences are generic.
    coords: Callable[[object], dict[str, float]]
    rebuild: Callable[[object, dict[str, float]], object]
    value: Callable[[object], float]
    grad: Callable[[object], dict[str, float]]


def _box_coords(s: BoxRegressionSample) -> dict[str, float]:
    c = {f"t_{a}": t for a, t in zip(_AXES, s.predicted)}
    c.update({f"v_{a}": v for a, v in zip(_AXES, s.target)})
    return c


def _box_rebuild(s: BoxRegressionSample, c: dict[str, float]) -> BoxRegressionSample:
    return BoxRegressionSample(
        tuple(c[f"t_{a}"] for a in _AXES), tuple(c[f"v_{a}"] for a in _AXES), s.true_class
    )


def _pair(v: Sequence[float]) -> tuple[float, float]:
    cls, box = v
    return float(cls), float(box)


LOSSES: dict[str, _LossSpec] = {
    "bce": _LossSpec(
        coords=lambda s: {"y_pred": s.y_pred},
        rebuild=lambda s, c: BinarySample(s.y, c["y_pred"]),
        value=bce_loss,
        grad=bce_grad,
    ),
    "smooth_l1": _LossSpec(
        coords=lambda x: {"x": float(x)},
        rebuild=lambda _, c: c["x"],
        value=smooth_l1,
        grad=lambda x: {"x": smooth_l1_grad(x)},
    ),
    "box": _LossSpec(coords=_box_coords, rebuild=_box_rebuild, value=box_loss, grad=box_grad),
    "multitask": _LossSpec(
        coords=lambda v: dict(zip(("cls", "box"), _pair(v))),
        rebuild=lambda _, c: (c["cls"], c["box"]),
        value=lambda v: multitask_loss(*v),
        grad=lambda v: {"cls": 1.0, "box": 1.0},
    ),
    "contrastive": _LossSpec(
        coords=lambda s: {"d": s.d, "margin": s.margin},
        rebuild=lambda s, c: ContrastiveSample(s.y, c["d"], c["margin"]),
        value=contrastive_loss,
        grad=contrastive_grad,
    ),
}


@dataclass
class GradCheckRow:
    coordinate: str
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    loss_id: str
    step: float
    tol: float
    rows: list[GradCheckRow] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((r.rel_error for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    @property
    def worst(self) -> GradCheckRow | None:
        return max(self.rows, key=lambda r: r.rel_error, default=None)

    def format(self) -> str:
        head = f"{'coordinate':<12}{'analytic':>16}{'numeric':>16}{'rel_error':>12}"
        lines = [f"grad_check {self.loss_id} step={self.step:g} tol={self.tol:g}", head]
        for r in self.rows:
            lines.append(f"{r.coordinate:<12}{r.analytic:>16.9g}{r.numeric:>16.9g}{r.rel_error:>12.3e}")
        if self.passed:
            lines.append("PASS")
        else:
            lines.append(f"FAIL at {self.worst.coordinate} (rel_error {self.worst.rel_error:.3e})")
        return "\n".join(lines)


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(loss_id: str, sample, step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients to central finite differences, coordinate by coordinate.

    The sample must sit at least ``step`` away from any kink (|x| = 1 for smooth-L1,
    d = margin for the contrastive hinge) and from the edges of the BCE domain.
    """
    if step <= 0 or tol <= 0:
        raise ValidationError("step and tol must be positive")
    try:
        entry = LOSSES[loss_id]
    except KeyError:
        raise ValidationError(f"unknown loss {loss_id!r}; choose from {sorted(LOSSES)}") from None
    coords = entry.coords(sample)
    analytic = entry.grad(sample)
    report = GradCheckReport(loss_id, step, tol)
    for name, x0 in coords.items():
        hi = dict(coords, **{name: x0 + step})
        lo = dict(coords, **{name: x0 - step})
        numeric = (entry.value(entry.rebuild(sample, hi)) - entry.value(entry.rebuild(sample, lo))) / (2 * step)
        a = analytic[name]
        report.rows.append(GradCheckRow(name, a, numeric, relative_error(a, numeric)))
    return report


def random_valid_sample(loss_id: str, rng: np.random.Generator, clearance: float = 1e-3):
    """Draw a sample of ``loss_id`` that keeps ``clearance`` away from kinks and domain edges."""
    if loss_id == "bce":
        return BinarySample(int(rng.integers(2)), float(rng.uniform(clearance, 1 - clearance)))
    if loss_id == "smooth_l1":
        return _off_kink(rng, lambda: float(rng.uniform(-3, 3)), lambda x: abs(abs(x) - 1.0), clearance)
    if loss_id == "box":
        t = rng.uniform(-3, 3, 4)
        v = rng.uniform(-3, 3, 4)
        while np.any(np.abs(np.abs(t - v) - 1.0) < clearance):
            t = rng.uniform(-3, 3, 4)
        return BoxRegressionSample(tuple(t.tolist()), tuple(v.tolist()), int(rng.integers(2)))
    if loss_id == "multitask":
        return (float(rng.uniform(0.01, 5)), float(rng.uniform(0.01, 5)))
    if loss_id == "contrastive":
        y = int(rng.integers(2))
        margin = float(rng.uniform(0.5, 2.0))
        d = _off_kink(rng, lambda: float(rng.uniform(clearance, 3.0)), lambda d: abs(d - margin), clearance)
        return ContrastiveSample(y, d, margin)
    raise ValidationError(f"unknown loss {loss_id!r}")


def _off_kink(rng, draw, dist, clearance):
    x = draw()
    while dist(x) < clearance:
        x = draw()
    return x
