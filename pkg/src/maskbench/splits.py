"""Subject-disjoint hold-out and k-fold splitting."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, ValidationError
from .raster import Manifest

PARTITIONS = ("train", "validation", "test")


@dataclass(frozen=True)
class SplitPlan:
    """Maps each unit (subject id, or image path for sample-level splits) to a partition.

    Hold-out plans use ``train``/``validation``/``test``; fold ``i`` of a k-fold split marks
    group ``i`` as ``validation`` and the rest ``train``, with ``groups`` recording
    every unit's group index.
    """

    assignments: dict[str, str]
    seed: int | None
    scheme: dict = field(default_factory=dict)
    level: str = "subject"
    groups: dict[str, int] | None = None

    def members(self, partition: str) -> list[str]:
        return [u for u, p in self.assignments.items() if p == partition]

    def partition_of(self, entry) -> str:
        key = entry.subject_id if self.level == "subject" else entry.path
        try:
            return self.assignments[key]
        except KeyError:
            raise DataError(f"{self.level} {key!r} is not covered by the split plan") from None

    def to_json(self) -> str:
        doc = {"seed": self.seed, "level": self.level, "assignments": self.assignments}
        doc.update(self.scheme)
        if self.groups is not None:
            doc["groups"] = self.groups
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> SplitPlan:
        doc = json.loads(text)
        scheme = {k: doc[k] for k in ("fractions", "k", "fold", "explicit") if k in doc}
        return cls(doc["assignments"], doc.get("seed"), scheme, doc.get("level", "subject"), doc.get("groups"))


def _units(manifest: Manifest, level: str) -> list[str]:
    if level == "subject":
        return manifest.subjects
    if level == "sample":
        return sorted(e.path for e in manifest.entries)
    raise ValidationError(f"unknown split level {level!r}; use 'subject' or 'sample'")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def holdout_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    """Partition sizes: every partition after the first gets round(f * n); the first takes the rest."""
    tail = [_round_half_up(f * n) for f in fractions[1:]]
    return [n - sum(tail)] + tail


def split_holdout(
    manifest: Manifest,
    fractions: Sequence[float] = (0.7, 0.2, 0.1),
    seed: int = 0,
    level: str = "subject",
) -> SplitPlan:
    if len(fractions) != len(PARTITIONS):
        raise ValidationError(f"need {len(PARTITIONS)} fractions, got {len(fractions)}")
    if any(f <= 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValidationError(f"fractions must be positive and sum to 1, got {tuple(fractions)}")
    units = _units(manifest, level)
    sizes = holdout_sizes(len(units), fractions)
    if min(sizes) <= 0:
        raise DataError(f"too few {level}s ({len(units)}) for fractions {tuple(fractions)}: sizes {sizes}")
    perm = np.random.default_rng(seed).permutation(len(units))
    assignments = {}
    pos = 0
    for name, size in zip(PARTITIONS, sizes):
        for i in perm[pos : pos + size]:
            assignments[units[i]] = name
        pos += size
    return SplitPlan(dict(sorted(assignments.items())), seed, {"fractions": list(fractions)}, level)


def kfold_groups(units: Sequence[str], k: int, seed: int) -> dict[str, int]:
    """Shuffle and deal units into k groups; the first ``n % k`` groups get one extra."""
    n = len(units)
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    if n < k:
        raise DataError(f"k={k} is too large for {n} units")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    groups = {}
    pos = 0
    for g in range(k):
        size = base + (1 if g < extra else 0)
        for i in perm[pos : pos + size]:
            groups[units[i]] = g
        pos += size
    return groups


def split_kfold(manifest: Manifest, k: int = 5, seed: int = 0, level: str = "subject") -> list[SplitPlan]:
    units = _units(manifest, level)
    groups = dict(sorted(kfold_groups(units, k, seed).items()))
    plans = []
    for fold in range(k):
        assignments = {u: ("validation" if g == fold else "train") for u, g in groups.items()}
        plans.append(SplitPlan(assignments, seed, {"k": k, "fold": fold}, level, groups))
    return plans


def partition_counts(manifest: Manifest, plan: SplitPlan) -> dict[str, dict]:
    """Per-partition image counts by (spectrum, mask_state) and distinct subjects."""
    out = {}
    per = {}
    for e in manifest.entries:
        per.setdefault(plan.partition_of(e), []).append(e)
    for part in sorted(per, key=lambda p: PARTITIONS.index(p) if p in PARTITIONS else 99):
        entries = per[part]
        c = Counter((e.spectrum, e.mask_state) for e in entries)
        out[part] = {
            "images": len(entries),
            "subjects": len({e.subject_id for e in entries}),
            "by_condition": {f"{s}/{m}": n for (s, m), n in sorted(c.items())},
        }
    return out


def plan_from_lists(lists: dict[str, Sequence[str]], level: str = "subject") -> SplitPlan:
    """Build a plan from explicit partition membership lists."""
    assignments = {}
    for part, members in lists.items():
        for u in members:
            if u in assignments:
                raise ValidationError(f"{u!r} listed in both {assignments[u]} and {part}")
            assignments[u] = part
    return SplitPlan(assignments, None, {"explicit": True}, level)
