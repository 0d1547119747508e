"""End-to-end evaluation protocols over a manifest: verification, identification, checkpoint routing."""

from __future__ import annotations

import hashlib
import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .embedding import Embedder, Embedding, calibrate_threshold, euclidean
from .errors import DataError, ValidationError
from .imaging import FACE_SIZE, expand_channels, make_hybrid, to_face
from .raster import Manifest, ManifestEntry, Raster, read_image
from .recognition import (
    ConditionMatrix,
    PairTrial,
    accuracy,
    build_condition_matrix,
    identification_accuracy,
    identify_top1,
)
from .reference import IDENTIFICATION_DOMAINS, VERIFICATION_CONDITIONS
from .splits import SplitPlan, kfold_groups

log = logging.getLogger(__name__)

DOMAIN_SOURCES = {
    "visual": ("visual", "unmasked"),
    "masked-visual": ("visual", "masked"),
    "thermal": ("thermal", "unmasked"),
    "masked-thermal": ("thermal", "masked"),
}


def stable_seed(seed: int, key: str) -> int:
    """Per-item seed derived from the run seed, independent of processing order."""
    h = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(h[:8], "little")


class FaceLoader:
    """Reads manifest images once, rescaled to the 256x256 working size."""

    def __init__(self, manifest: Manifest, read: Callable = read_image):
        self.manifest = manifest
        self._read = read
        self._cache: dict[str, Raster] = {}

    def __call__(self, entry: ManifestEntry) -> Raster:
        img = self._cache.get(entry.path)
        if img is None:
            img = self._read(self.manifest.resolve(entry))
            if (img.width, img.height) != (FACE_SIZE, FACE_SIZE):
                img = to_face(img)
            self._cache[entry.path] = img
        return img


class EmbeddingSource:
    """Embeds manifest entries with an embedder, or looks them up in precomputed vectors.

    Grayscale faces are replicated to three channels first, so every spectrum yields
    vectors of one length.
    """

    def __init__(self, loader: FaceLoader | None, embedder: Embedder | None = None, table: dict | None = None):
        if embedder is None and table is None:
            raise ValidationError("need an embedder or a precomputed embedding table")
        self.loader = loader
        self.embedder = embedder
        self.table = table
        self._cache: dict[str, Embedding] = {}

    def __call__(self, entry: ManifestEntry) -> Embedding:
        e = self._cache.get(entry.path)
        if e is None:
            if self.table is not None:
                try:
                    e = self.table[entry.path]
                except KeyError:
                    raise DataError(f"no precomputed embedding for {entry.path}") from None
            else:
                e = self.embedder(expand_channels(self.loader(entry), 3))
            self._cache[entry.path] = e
        return e


# -- verification -----------------------------------------------------------------------

def _condition_ok(cond: str, a: ManifestEntry, b: ManifestEntry) -> bool:
    states = {a.mask_state, b.mask_state}
    if cond == "a":
        return states == {"unmasked"}
    if cond == "b":
        return states == {"masked"}
    if cond == "c":
        return states == {"unmasked", "masked"}
    raise ValidationError(f"unknown verification condition {cond!r}")


def verification_pairs(
    entries: Sequence[ManifestEntry],
    condition: str,
    seed: int,
    max_pairs: int | None = 2000,
) -> list[tuple[ManifestEntry, ManifestEntry, bool]]:
    """Balanced same/different pairs for one condition, drawn deterministically.

    All same-subject pairs are used (down-sampled to ``max_pairs // 2`` if needed) and an
    equal number of different-subject pairs is sampled.
    """
    same, diff = [], []
    for a, b in itertools.combinations(entries, 2):
        if _condition_ok(condition, a, b):
            (same if a.subject_id == b.subject_id else diff).append((a, b))
    rng = np.random.default_rng(stable_seed(seed, f"pairs:{condition}"))
    n = len(same)
    if max_pairs is not None:
        n = min(n, max_pairs // 2)
    n = min(n, len(diff))
    if n == 0:
        return []
    same = [same[i] for i in sorted(rng.choice(len(same), n, replace=False))]
    diff = [diff[i] for i in sorted(rng.choice(len(diff), n, replace=False))]
    return [(a, b, True) for a, b in same] + [(a, b, False) for a, b in diff]


@dataclass
class VerificationRun:
    matrix: ConditionMatrix
    fold_results: list[tuple[str, str, int, float]]
    thresholds: dict[tuple[int, str], float] = field(default_factory=dict)
    pair_counts: dict[tuple[int, str, str], int] = field(default_factory=dict)


def run_verification(
    manifest: Manifest,
    plans: Sequence[SplitPlan],
    embed: Callable[[ManifestEntry], Embedding],
    seed: int = 0,
    spectrum: str = "visual",
    conditions: Sequence[str] = tuple(VERIFICATION_CONDITIONS),
    max_pairs: int | None = 2000,
) -> VerificationRun:
    """Calibrate a distance threshold on each train condition, score every test condition.

    Per plan, pairs are formed inside the train partition (for calibration) and inside the
    held-out partition (``validation``, else ``test``) for scoring.
    """
    entries = [e for e in manifest.entries if e.spectrum == spectrum]
    if not entries:
        raise DataError(f"manifest has no {spectrum} images")
    states = {e.mask_state for e in entries}
    needed = {"a": {"unmasked"}, "b": {"masked"}, "c": {"unmasked", "masked"}}
    for c in conditions:
        if not needed[c] <= states:
            raise DataError(f"condition ({c}) {VERIFICATION_CONDITIONS[c]} needs {sorted(needed[c])} images")
    results = []
    run = VerificationRun(None, results)
    for fold, plan in enumerate(plans):
        held = "validation" if "validation" in plan.assignments.values() else "test"
        train = [e for e in entries if plan.partition_of(e) == "train"]
        test = [e for e in entries if plan.partition_of(e) == held]
        fits = {}
        for tc in conditions:
            pairs = verification_pairs(train, tc, stable_seed(seed, f"train:{fold}"), max_pairs)
            if not pairs:
                raise DataError(f"fold {fold}: no training pairs for condition ({tc})")
            fits[tc] = calibrate_threshold((euclidean(embed(a), embed(b)), s) for a, b, s in pairs)
            run.thresholds[(fold, tc)] = fits[tc].threshold
        for vc in conditions:
            pairs = verification_pairs(test, vc, stable_seed(seed, f"test:{fold}"), max_pairs)
            if not pairs:
                raise DataError(f"fold {fold}: no held-out pairs for condition ({vc})")
            dists = [euclidean(embed(a), embed(b)) for a, b, _ in pairs]
            for tc in conditions:
                thr = fits[tc].threshold
                trials = [PairTrial(a.subject_id, b.subject_id, d < thr, s) for (a, b, s), d in zip(pairs, dists)]
                results.append((tc, vc, fold, accuracy(trials)))
                run.pair_counts[(fold, tc, vc)] = len(trials)
        log.info("verification fold %d: %d train / %d held-out images", fold, len(train), len(test))
    run.matrix = build_condition_matrix(results, conditions, conditions, title="Verification accuracy")
    return run


# -- identification ---------------------------------------------------------------------

def frame_index(manifest: Manifest) -> dict[tuple[str, int], dict[tuple[str, str], ManifestEntry]]:
    """Group entries into frames: the k-th image of a subject in each (spectrum, mask state).

    Visual and thermal captures are paired by this ordinal, in manifest order.
    """
    counters: dict[tuple[str, str, str], int] = defaultdict(int)
    frames: dict[tuple[str, int], dict] = defaultdict(dict)
    for e in manifest.entries:
        k = counters[(e.subject_id, e.spectrum, e.mask_state)]
        counters[(e.subject_id, e.spectrum, e.mask_state)] += 1
        frames[(e.subject_id, k)][(e.spectrum, e.mask_state)] = e
    return dict(frames)


class DomainImages:
    """Face images for each identification domain, built lazily from frames."""

    def __init__(self, manifest: Manifest, loader: FaceLoader, embedder: Embedder):
        self.frames = frame_index(manifest)
        self.loader = loader
        self.embedder = embedder
        self._cache: dict[tuple, Embedding] = {}

    def hybrid_sources(self, frame) -> tuple[ManifestEntry, ManifestEntry] | None:
        # Top half: visual capture (masked if present; the mask sits below the seam).
        # Bottom half: unmasked thermal capture, standing in for a thermally "unmasked" face.
        f = self.frames[frame]
        vis = f.get(("visual", "masked")) or f.get(("visual", "unmasked"))
        th = f.get(("thermal", "unmasked"))
        if vis is None or th is None:
            return None
        return vis, th

    def available(self, domain: str, frame) -> bool:
        if domain == "hybrid":
            return self.hybrid_sources(frame) is not None
        return DOMAIN_SOURCES[domain] in self.frames[frame]

    def image(self, domain: str, frame) -> Raster:
        """Face image of ``frame`` rendered in ``domain``, always 3-channel so domains compare."""
        if domain == "hybrid":
            src = self.hybrid_sources(frame)
            if src is None:
                raise DataError(f"frame {frame}: hybrid needs a visual and an unmasked thermal capture")
            return expand_channels(make_hybrid(self.loader(src[0]), self.loader(src[1])), 3)
        return expand_channels(self.loader(self.frames[frame][DOMAIN_SOURCES[domain]]), 3)

    def embedding(self, domain: str, frame) -> Embedding:
        key = (domain, frame)
        if key not in self._cache:
            self._cache[key] = self.embedder(self.image(domain, frame))
        return self._cache[key]


def run_identification(
    manifest: Manifest,
    embedder: Embedder,
    domains: Sequence[str] = IDENTIFICATION_DOMAINS,
    k: int = 5,
    seed: int = 0,
    loader: FaceLoader | None = None,
) -> tuple[ConditionMatrix, list[tuple[str, str, int, float]]]:
    """k-fold closed-set identification over frames.

    In fold i, frames of group i are probes (rendered in the test domain) and the other
    frames form the gallery (rendered in the train domain); accuracy is top-1.
    """
    for d in domains:
        if d not in IDENTIFICATION_DOMAINS:
            raise ValidationError(f"unknown domain {d!r}; choose from {IDENTIFICATION_DOMAINS}")
    loader = loader or FaceLoader(manifest)
    imgs = DomainImages(manifest, loader, embedder)
    frames = sorted(imgs.frames)
    for d in domains:
        if not any(imgs.available(d, f) for f in frames):
            raise DataError(f"domain {d!r} cannot be derived from this manifest")
    keys = [f"{s}#{i}" for s, i in frames]
    groups = kfold_groups(keys, k, seed)
    results = []
    for fold in range(k):
        train = [f for f, key in zip(frames, keys) if groups[key] != fold]
        test = [f for f, key in zip(frames, keys) if groups[key] == fold]
        for td in domains:
            gallery = [(f[0], imgs.embedding(td, f)) for f in train if imgs.available(td, f)]
            if not gallery:
                raise DataError(f"fold {fold}: empty {td} gallery")
            for vd in domains:
                probes = [(f[0], imgs.embedding(vd, f)) for f in test if imgs.available(vd, f)]
                if not probes:
                    raise DataError(f"fold {fold}: no {vd} probes")
                results.append((td, vd, fold, identification_accuracy(probes, gallery)))
    matrix = build_condition_matrix(results, domains, domains, title="Identification accuracy")
    return matrix, results


# -- checkpoint -------------------------------------------------------------------------

@dataclass
class CheckpointDecision:
    route: str
    identity: str
    distance: float
    trace: list[str]
    hybrid: Raster | None = None

    def to_dict(self) -> dict:
        return {
            "route": self.route,
            "identity": self.identity,
            "distance": self.distance,
            "hybrid_built": self.hybrid is not None,
            "trace": self.trace,
        }


def checkpoint(
    visual: Raster,
    masked: bool,
    gallery: Manifest,
    embedder: Embedder,
    thermal: Raster | Callable[[], Raster] | None = None,
    loader: FaceLoader | None = None,
) -> CheckpointDecision:
    """Route a capture: unmasked faces go straight to visual identification; masked faces
    are rebuilt as visual-top / thermal-bottom hybrids and matched against enrolled hybrids.

    ``thermal`` may be a zero-argument callable so the thermal capture is only read when
    the masked route needs it.
    """
    loader = loader or FaceLoader(gallery)
    trace = []
    if (visual.width, visual.height) != (FACE_SIZE, FACE_SIZE):
        visual = to_face(visual)
        trace.append("rescaled visual capture to 256x256")
    visual = expand_channels(visual, 3)
    frames = frame_index(gallery)
    if not masked:
        trace.append("mask flag: unmasked -> visual route")
        probe = embedder(visual)
        enrolled = [
            (f[0], embedder(expand_channels(loader(fr[("visual", "unmasked")]), 3)))
            for f, fr in sorted(frames.items())
            if ("visual", "unmasked") in fr
        ]
        route, hybrid = "visual", None
    else:
        trace.append("mask flag: masked -> hybrid route")
        if callable(thermal):
            thermal = thermal()
        if thermal is None:
            raise DataError("masked route requires a thermal capture")
        if (thermal.width, thermal.height) != (FACE_SIZE, FACE_SIZE):
            thermal = to_face(thermal)
            trace.append("rescaled thermal capture to 256x256")
        hybrid = expand_channels(make_hybrid(visual, thermal), 3)
        trace.append("built hybrid: visual rows 0-127 + thermal rows 128-255")
        probe = embedder(hybrid)
        enrolled = [
            (f[0], embedder(expand_channels(make_hybrid(loader(fr[("visual", "unmasked")]), loader(fr[("thermal", "unmasked")])), 3)))
            for f, fr in sorted(frames.items())
            if ("visual", "unmasked") in fr and ("thermal", "unmasked") in fr
        ]
        route = "hybrid"
    if not enrolled:
        raise DataError(f"gallery has no enrolment images for the {route} route")
    identity = identify_top1(probe, enrolled)
    dist = min(euclidean(probe, v) for s, v in enrolled if s == identity)
    trace.append(f"compared against {len(enrolled)} enrolled templates; nearest {identity} at {dist:.6f}")
    return CheckpointDecision(route, identity, dist, trace, hybrid)
