"""Detection scoring: IoU, greedy matching, precision/recall, AP and threshold-swept mAP."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, InputError, ValidationError
from .raster import BBox, Detection, GroundTruth

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def _overlap(a0: float, al: float, b0: float, bl: float) -> float:
    # When one span contains the other, use its length directly: (x + w) - x can
    # round below w, which would leave identical boxes short of IoU 1.
    a1, b1 = a0 + al, b0 + bl
    if b0 <= a0 and a1 <= b1:
        return al
    if a0 <= b0 and b1 <= a1:
        return bl
    return min(min(a1, b1) - max(a0, b0), al, bl)


def iou(a: BBox, b: BBox) -> float:
    iw = _overlap(a.x, a.w, b.x, b.w)
    ih = _overlap(a.y, a.h, b.y, b.h)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return min(1.0, inter / (a.area + b.area - inter))


@dataclass(frozen=True)
class MatchCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValidationError("match counts must be non-negative")


@dataclass
class MatchResult:
    counts: MatchCounts
    is_tp: list[bool]  # aligned with the input detection order
    order: list[int]  # detection indices by descending score (stable)
    assigned: list[int | None]  # ground-truth index claimed by each detection


def _score_order(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thresh: float) -> MatchResult:
    """Greedy one-to-one matching.

    Detections are visited by descending score (input order breaks ties). Each claims
    the unclaimed ground truth of the same class and image with the highest IoU, provided
    IoU >= ``iou_thresh``; lower ground-truth index wins IoU ties.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise ValidationError(f"iou_thresh must lie in (0, 1), got {iou_thresh}")
    order = _score_order(dets)
    claimed = [False] * len(gts)
    by_key = defaultdict(list)
    for j, g in enumerate(gts):
        by_key[(g.image, g.class_id)].append(j)
    is_tp = [False] * len(dets)
    assigned: list[int | None] = [None] * len(dets)
    for i in order:
        d = dets[i]
        best, best_iou = None, -1.0
        for j in by_key.get((d.image, d.class_id), ()):
            if claimed[j]:
                continue
            o = iou(d.box, gts[j].box)
            if o >= iou_thresh and o > best_iou:
                best, best_iou = j, o
        if best is not None:
            claimed[best] = True
            is_tp[i] = True
            assigned[i] = best
    tp = sum(is_tp)
    counts = MatchCounts(tp=tp, fp=len(dets) - tp, fn=len(gts) - tp)
    return MatchResult(counts, is_tp, order, assigned)


def precision(c: MatchCounts) -> float:
    n = c.tp + c.fp
    return c.tp / n if n else 0.0


def recall(c: MatchCounts) -> float:
    n = c.tp + c.fn
    return c.tp / n if n else 0.0


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def pr_curve(dets: Sequence[Detection], gts: Sequence[GroundTruth], class_id: int, iou_thresh: float) -> PRCurve:
    cd = [d for d in dets if d.class_id == class_id]
    cg = [g for g in gts if g.class_id == class_id]
    if not cg:
        raise DataError(f"no ground truth for class {class_id}")
    m = match_detections(cd, cg, iou_thresh)
    hits = np.array([m.is_tp[i] for i in m.order], dtype=np.int64)
    ctp = np.cumsum(hits)
    cfp = np.cumsum(1 - hits)
    rec = ctp / len(cg)
    prec = ctp / np.maximum(ctp + cfp, 1)
    return PRCurve(rec.astype(float), prec.astype(float))


def area_under_envelope(curve: PRCurve) -> float:
    """Exact area under the monotone (right-maximum) precision envelope on recall [0, 1]."""
    mrec = np.concatenate([[0.0], curve.recall, [1.0]])
    mpre = np.concatenate([[0.0], curve.precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def average_precision(dets, gts, class_id: int, iou_thresh: float) -> float:
    return area_under_envelope(pr_curve(dets, gts, class_id, iou_thresh))


@dataclass
class MapResult:
    map: float
    per_threshold: dict[float, float]
    per_class: dict[int, float]
    ap: dict[tuple[int, float], float] = field(repr=False)
    counts: dict[float, MatchCounts] = field(repr=False, default_factory=dict)

    def at(self, thresh: float) -> float | None:
        for t, v in self.per_threshold.items():
            if math.isclose(t, thresh, abs_tol=1e-9):
                return v
        return None

    @property
    def map50(self) -> float | None:
        return self.at(0.5)

    @property
    def map75(self) -> float | None:
        return self.at(0.75)

    def to_dict(self) -> dict:
        return {
            "mAP": self.map,
            "mAP50": self.map50,
            "mAP75": self.map75,
            "per_class": {str(c): v for c, v in self.per_class.items()},
            "per_threshold": {f"{t:.2f}": v for t, v in self.per_threshold.items()},
            "counts": {
                f"{t:.2f}": {"tp": c.tp, "fp": c.fp, "fn": c.fn} for t, c in self.counts.items()
            },
        }


def mean_ap(dets, gts, thresholds: Sequence[float] = COCO_THRESHOLDS, classes: Sequence[int] | None = None) -> MapResult:
    """AP averaged over classes at each threshold, then over thresholds.

    ``classes`` defaults to every class id seen in the ground truth or detections; each
    must have at least one ground-truth box.
    """
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValidationError("need at least one IoU threshold")
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise ValidationError(f"IoU threshold {t} outside (0, 1)")
    if classes is None:
        classes = sorted({g.class_id for g in gts} | {d.class_id for d in dets})
    if not classes:
        raise DataError("no classes to evaluate")
    ap = {}
    per_threshold = {}
    counts = {}
    for t in thresholds:
        for c in classes:
            ap[(c, t)] = average_precision(dets, gts, c, t)
        per_threshold[t] = float(np.mean([ap[(c, t)] for c in classes]))
        counts[t] = match_detections(dets, gts, t).counts
    per_class = {c: float(np.mean([ap[(c, t)] for t in thresholds])) for c in classes}
    overall = float(np.mean(list(per_threshold.values())))
    return MapResult(overall, per_threshold, per_class, ap, counts)


def parse_thresholds(text: str) -> list[float]:
    """Parse ``start:step:stop`` (inclusive) or a comma list, e.g. ``0.5:0.05:0.95``."""
    text = text.strip()
    if ":" in text:
        try:
            start, step, stop = (float(p) for p in text.split(":"))
        except ValueError as exc:
            raise ValidationError(f"bad threshold range {text!r}; expected start:step:stop") from exc
        if step <= 0:
            raise ValidationError("threshold step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return [float(p) for p in text.split(",") if p.strip()]


def _load_boxes(path, with_score: bool):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise InputError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, list):
        raise InputError(f"{path}: expected a JSON array of boxes")
    out = []
    for i, r in enumerate(doc):
        try:
            box = BBox(float(r["x"]), float(r["y"]), float(r["w"]), float(r["h"]))
            if with_score:
                out.append(Detection(box, int(r["class_id"]), float(r["score"]), str(r["image_path"])))
            else:
                out.append(GroundTruth(box, int(r["class_id"]), str(r["image_path"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: record {i}: {exc}") from exc
    return out


def load_detections(path) -> list[Detection]:
    return _load_boxes(path, with_score=True)


def load_ground_truth(path) -> list[GroundTruth]:
    return _load_boxes(path, with_score=False)


def dump_boxes(items) -> str:
    rows = []
    for it in items:
        r = {"image_path": it.image, "class_id": it.class_id}
        if isinstance(it, Detection):
            r["score"] = it.score
        r.update(x=it.box.x, y=it.box.y, w=it.box.w, h=it.box.h)
        rows.append(r)
    return json.dumps(rows, indent=1)
