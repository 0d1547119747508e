"""Acceptance criteria AC1-AC7, each timed against its runtime budget.

Every criterion records a PASS/FAIL line that is printed in the terminal summary.
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest

import oracles
from conftest import criterion
from instances import exact_thresholds, random_instance, to_oracle
from maskbench.detection import COCO_THRESHOLDS, iou, mean_ap
from maskbench.embedding import blockmean_embedder, euclidean
from maskbench.errors import DataError
from maskbench.imaging import (
    BORDER_REGIONS,
    PERIOCULAR_REGIONS,
    RegionMask,
    apply_region_mask,
    make_hybrid,
    occlude_lower_face,
    rescale_area,
)
from maskbench.losses import (
    LOSSES,
    BinarySample,
    ContrastiveSample,
    bce_loss,
    contrastive_loss,
    grad_check,
    random_valid_sample,
    smooth_l1,
)
from maskbench.raster import BBox, Detection, GroundTruth, make_manifest, read_image
from maskbench.recognition import PairTrial, accuracy, identification_accuracy, identify_top1
from maskbench.reference import quoted_deltas
from maskbench.report import envelope
from maskbench.splits import PARTITIONS, split_holdout, split_kfold
from maskbench.synthetic import synthetic_subjects

GOLDEN = Path(__file__).parent / "golden"


def test_ac1_quoted_deltas():
    with criterion(1, "quoted degradation deltas re-derived from fixture tables", 1.0):
        doc = envelope({"deltas": [d.to_dict() for d in quoted_deltas()]}, {}, "reference")
        emitted = json.loads(json.dumps(doc))["deltas"]
        quoted = emitted[:4]
        assert [f"{d['delta']:.4f}" for d in quoted] == ["0.3678", "0.3634", "0.5793", "0.6844"]
        assert [d["delta"] for d in quoted] == [0.3678, 0.3634, 0.5793, 0.6844]
        assert all(d["agrees"] for d in quoted)
        assert (quoted[0]["baseline_value"], quoted[0]["degraded_value"]) == (0.9978, 0.6300)
        assert (quoted[1]["baseline_value"], quoted[1]["degraded_value"]) == (0.9934, 0.6300)
        assert (quoted[2]["baseline_value"], quoted[2]["degraded_value"]) == (0.9982, 0.4189)
        assert (quoted[3]["baseline_value"], quoted[3]["degraded_value"]) == (0.9899, 0.3055)


def test_ac2_loss_gradients_and_spot_values():
    with criterion(2, "loss gradients vs central differences; closed-form spot values", 1.0):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for loss_id in sorted(LOSSES):
            for _ in range(100):
                rep = grad_check(loss_id, random_valid_sample(loss_id, rng), step=1e-5, tol=1e-4)
                assert rep.passed, rep.format()
                worst = max(worst, rep.max_rel_error)
        assert worst < 1e-4
        assert abs(bce_loss(BinarySample(1, 0.5)) - math.log(2)) <= 1e-9
        assert abs(smooth_l1(0.5) - 0.125) <= 1e-9
        assert abs(smooth_l1(2.0) - 1.5) <= 1e-9
        assert abs(contrastive_loss(ContrastiveSample(0, 0.5, 1.0)) - 0.25) <= 1e-9


def test_ac3_map_oracle_equivalence():
    with criterion(3, "mean_ap equals brute-force oracle on 1000 instances; perfect detector = 1.0", 30.0):
        rng = np.random.default_rng(31337)
        exact = exact_thresholds(COCO_THRESHOLDS)
        worst = 0.0
        for _ in range(1000):
            dets, gts, classes = random_instance(rng, max_classes=3, max_per_class=5)
            res = mean_ap(dets, gts, COCO_THRESHOLDS, classes)
            od, og = to_oracle(dets, gts)
            expect = oracles.map_oracle(od, og, classes, exact)
            worst = max(worst, abs(res.map - float(expect)))
        assert worst <= 1e-9
        for _ in range(20):
            _, gts, classes = random_instance(rng)
            perfect = [Detection(g.box, g.class_id, float(rng.uniform(0.01, 1)), g.image) for g in gts]
            res = mean_ap(perfect, gts, COCO_THRESHOLDS, classes)
            assert len(res.per_threshold) == 10
            assert all(v == 1.0 for v in res.per_threshold.values())
            assert res.map == 1.0


def test_ac4_imaging_golden_files():
    with criterion(4, "rescale / periocular mask / hybrid byte-identical to golden files", 5.0):
        src = read_image(GOLDEN / "src_gray_512.pgm")
        assert rescale_area(src, 256, 256).data == read_image(GOLDEN / "rescale_gray_512_to_256.pgm").data
        rgb = read_image(GOLDEN / "src_rgb_64x48.ppm")
        assert rescale_area(rgb, 16, 12).data == read_image(GOLDEN / "rescale_rgb_64x48_to_16x12.ppm").data
        assert rescale_area(rgb, 20, 9).data == read_image(GOLDEN / "rescale_rgb_64x48_to_20x9.ppm").data

        mask = RegionMask.from_int(int((GOLDEN / "mask_bits.txt").read_text(), 16))
        face = read_image(GOLDEN / "src_rgb_256.ppm")
        masked = apply_region_mask(face, mask)
        assert masked.data == read_image(GOLDEN / "masked_rgb_256.ppm").data
        a, f = masked.to_array(), face.to_array()
        for r in BORDER_REGIONS:
            y, x = divmod(r, 8)
            assert not a[32 * y : 32 * y + 32, 32 * x : 32 * x + 32].any()
        for r in PERIOCULAR_REGIONS:
            y, x = divmod(r, 8)
            cell = np.s_[32 * y : 32 * y + 32, 32 * x : 32 * x + 32]
            assert np.array_equal(a[cell], f[cell])

        vis = read_image(GOLDEN / "hybrid_visual.ppm")
        th = read_image(GOLDEN / "hybrid_thermal.pgm")
        hybrid = make_hybrid(vis, th)
        assert hybrid.data == read_image(GOLDEN / "hybrid_out.ppm").data
        h = hybrid.to_array()
        assert np.array_equal(h[127], vis.to_array()[127])
        assert np.array_equal(h[128, :, 0], th.to_array()[128, :, 0])


def _occlusion_study(seed):
    subjects = synthetic_subjects(n_subjects=40, images_per_subject=5, seed=seed)
    full = blockmean_embedder(8, "full")
    peri = blockmean_embedder(8, "periocular")

    def score(embed, occlude):
        gallery = [(s.subject_id, embed(s.visual[0])) for s in subjects]
        probes = [
            (s.subject_id, embed(occlude_lower_face(im) if occlude else im)) for s in subjects for im in s.visual[1:]
        ]
        return identification_accuracy(probes, gallery)

    return score(full, False), score(full, True), score(peri, True)


def test_ac5_periocular_direction():
    with criterion(5, "lower-face occlusion drops accuracy >= 0.15; periocular recovers within 0.05", 60.0):
        baseline, occluded, periocular = _occlusion_study(seed=0)
        print(f"baseline={baseline:.4f} occluded={occluded:.4f} periocular={periocular:.4f}")
        assert baseline - occluded >= 0.15
        assert abs(baseline - periocular) <= 0.05
        assert _occlusion_study(seed=0) == (baseline, occluded, periocular)


def test_ac6_split_integrity():
    with criterion(6, "10,000 randomized splits subject-disjoint and complete; 142 -> 100/28/14", 10.0):
        rng = np.random.default_rng(6)
        manifests = {
            n: make_manifest([(f"{s}/{k}", f"subj{s:03d}", "visual", "masked") for s in range(n) for k in range(2)])
            for n in range(5, 41)
        }
        for run in range(10_000):
            n = int(rng.integers(5, 41))
            m = manifests[n]
            seed = int(rng.integers(2**31))
            subjects = set(m.subjects)
            if run % 2 == 0:
                plan = split_holdout(m, (0.7, 0.2, 0.1), seed)
                parts = [set(plan.members(p)) for p in PARTITIONS]
                assert sum(map(len, parts)) == n and set().union(*parts) == subjects
                assert min(map(len, parts)) > 0
                assert sum(1 for e in m.entries if plan.partition_of(e) in PARTITIONS) == len(m)
            else:
                k = int(rng.integers(2, 6))
                plans = split_kfold(m, k, seed)
                held = [set(p.members("validation")) for p in plans]
                assert sum(map(len, held)) == n and set().union(*held) == subjects
                for p, h in zip(plans, held):
                    assert set(p.members("train")).isdisjoint(h)
                    assert set(p.assignments) == subjects
        m142 = make_manifest([(f"{s}.png", f"s{s:03d}", "thermal", "unmasked") for s in range(142)])
        plan = split_holdout(m142, (0.7, 0.2, 0.1), seed=0)
        assert [len(plan.members(p)) for p in PARTITIONS] == [100, 28, 14]


def test_ac7_metric_invariants():
    with criterion(7, "IoU, accuracy, argmin and Euclidean property suites (1000 cases each)", 10.0):
        rng = np.random.default_rng(7)

        for _ in range(1000):
            a = BBox(*rng.uniform(0, 50, 2), *rng.uniform(0.1, 40, 2))
            b = BBox(*rng.uniform(0, 50, 2), *rng.uniform(0.1, 40, 2))
            v = iou(a, b)
            assert v == iou(b, a) and 0.0 <= v <= 1.0
            assert iou(a, a) == 1.0

        for _ in range(1000):
            n = int(rng.integers(1, 30))
            ts = [PairTrial("p", "q", bool(m), bool(s)) for m, s in rng.integers(0, 2, (n, 2))]
            perm = rng.permutation(n)
            assert accuracy([ts[i] for i in perm]) == accuracy(ts)

        transforms = (np.square, np.exp, np.log1p, lambda d: 3.0 * d + 2.0, np.sqrt)
        for _ in range(1000):
            g = rng.normal(size=(int(rng.integers(1, 12)), 8))
            gallery = [(f"s{i}", row) for i, row in enumerate(g)]
            probe = rng.normal(size=8)
            who = identify_top1(probe, gallery)
            d = np.array([euclidean(probe, row) for row in g])
            for f in transforms:
                assert gallery[int(np.argmin(f(d)))][0] == who
            scale = 2.0 ** int(rng.integers(-4, 5))
            assert identify_top1(probe * scale, [(s, v * scale) for s, v in gallery]) == who

        for _ in range(1000):
            x, y, z = rng.normal(scale=10, size=(3, 16))
            dxy = euclidean(x, y)
            assert dxy >= 0 and dxy == euclidean(y, x)
            assert euclidean(x, x) == 0.0
            assert euclidean(x, z) <= dxy + euclidean(y, z) + 1e-12


def test_acceptance_gt_class_requirement_is_enforced():
    # a class listed for evaluation with no ground truth is an error, not a silent zero
    with pytest.raises(DataError, match="no ground truth"):
        mean_ap([], [GroundTruth(BBox(0, 0, 1, 1), 0)], classes=[0, 1])
