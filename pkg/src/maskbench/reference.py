"""Published accuracy tables for masked-face recognition, kept as report fixtures.

These numbers come from trained networks (Cascade R-CNN, Siamese and transfer-learned
Inception-v3) and are not reproduced by this toolkit; they feed the report generator so
that quoted degradation figures can be re-derived arithmetically.
"""

from __future__ import annotations

from dataclasses import dataclass

from .recognition import ConditionMatrix, degradation_delta, round4

VERIFICATION_CONDITIONS = {
    "a": "no mask / no mask",
    "b": "mask / mask",
    "c": "no mask / mask",
}
IDENTIFICATION_DOMAINS = ("visual", "masked-visual", "thermal", "masked-thermal", "hybrid")

_V = list(VERIFICATION_CONDITIONS)

VERIFICATION_FULL_FACE = ConditionMatrix.from_table(
    _V,
    [[0.9978, 0.9951, 0.6300], [0.9949, 0.9974, 0.6339], [0.9880, 0.9891, 0.9842]],
    [[0.0025, 0.0064, 0.0675], [0.0054, 0.0017, 0.1701], [0.0060, 0.0067, 0.0047]],
    title="Verification accuracy, full-face images",
)

VERIFICATION_PERIOCULAR = ConditionMatrix.from_table(
    _V,
    [[0.9990, 0.9989, 0.9934], [0.9932, 0.9932, 0.9881], [0.9975, 0.9974, 0.9955]],
    [[0.0010, 0.0010, 0.0030], [0.0113, 0.0114, 0.0108], [0.0023, 0.0023, 0.0031]],
    title="Verification accuracy, periocular images",
)

IDENTIFICATION = ConditionMatrix.from_table(
    IDENTIFICATION_DOMAINS,
    [
        [0.9982, 0.4189, 0.0111, 0.0118, 0.2220],
        [0.8334, 0.9899, 0.0124, 0.0121, 0.2123],
        [0.1079, 0.0175, 0.9899, 0.3035, 0.1079],
        [0.0191, 0.0172, 0.8421, 0.9937, 0.0212],
        [0.6362, 0.4704, 0.1111, 0.0300, 0.9803],
    ],
    [
        [0.0009, 0.1962, 0.0037, 0.0013, 0.2199],
        [0.1472, 0.0079, 0.0047, 0.0047, 0.3280],
        [0.0291, 0.0077, 0.0093, 0.1328, 0.0291],
        [0.0049, 0.0049, 0.1234, 0.0033, 0.0073],
        [0.1057, 0.0503, 0.0505, 0.0177, 0.0162],
    ],
    title="Identification accuracy, visual / thermal / hybrid",
)

# The prose quotes 0.3055 for (thermal, masked-thermal) while the table prints 0.3035.
IDENTIFICATION_QUOTED = ConditionMatrix.from_table(
    IDENTIFICATION_DOMAINS,
    [[IDENTIFICATION[(r, c)].mean for c in IDENTIFICATION_DOMAINS] for r in IDENTIFICATION_DOMAINS],
    title="Identification accuracy, values as quoted in prose",
)
IDENTIFICATION_QUOTED.cells[("thermal", "masked-thermal")].mean = 0.3055

# Cascade R-CNN mask detector: backbone -> (mAP@0.5:0.95, mAP50, mAP75)
DETECTION = {
    "thermal": {
        "ResNet-50-FPN": (0.873, 0.997, 0.986),
        "ResNet-101-FPN": (0.873, 0.997, 0.990),
        "ResNeXt-101-32x4d-FPN": (0.877, 0.997, 0.989),
        "ResNeXt-101-64x4d-FPN": (0.879, 0.997, 0.990),
    },
    "visual": {
        "ResNet-50-FPN": (0.945, 0.995, 0.994),
        "ResNet-101-FPN": (0.947, 0.995, 0.995),
        "ResNeXt-101-32x4d-FPN": (0.951, 0.995, 0.995),
        "ResNeXt-101-64x4d-FPN": (0.945, 0.995, 0.995),
    },
}

# Subject split of the detection dataset (one spectrum): partition -> (unmasked, masked, subjects)
DETECTION_SPLIT = {
    "train": (23188, 29842, 100),
    "validation": (5940, 8905, 28),
    "test": (4320, 3713, 14),
}
DETECTION_TOTALS = (33448, 42460, 142)


@dataclass(frozen=True)
class QuotedDelta:
    name: str
    baseline: str
    degraded: str
    baseline_value: float
    degraded_value: float
    value: float
    quoted: float | None = None

    @property
    def agrees(self) -> bool:
        return self.quoted is None or round4(self.value) == self.quoted

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "baseline": self.baseline,
            "degraded": self.degraded,
            "baseline_value": self.baseline_value,
            "degraded_value": self.degraded_value,
            "delta": round4(self.value),
            "quoted": self.quoted,
            "agrees": self.agrees,
        }


def _delta(name, m1, c1, m2, c2, quoted=None) -> QuotedDelta:
    v = degradation_delta(m1, c1, c2, degraded_matrix=m2)
    return QuotedDelta(
        name,
        f"{m1.title} {c1}",
        f"{m2.title} {c2}",
        m1[c1].mean,
        m2[c2].mean,
        v,
        quoted,
    )


def quoted_deltas() -> list[QuotedDelta]:
    """Degradation figures re-derived from the fixture tables."""
    vf, vp = VERIFICATION_FULL_FACE, VERIFICATION_PERIOCULAR
    idq, idt = IDENTIFICATION_QUOTED, IDENTIFICATION
    return [
        _delta("full-face mask degradation", vf, ("a", "a"), vf, ("a", "c"), 0.3678),
        _delta("periocular compensation", vp, ("a", "c"), vf, ("a", "c"), 0.3634),
        _delta("visual identification mask degradation", idt, ("visual", "visual"), idt, ("visual", "masked-visual"), 0.5793),
        _delta("thermal identification mask degradation", idq, ("thermal", "thermal"), idq, ("thermal", "masked-thermal"), 0.6844),
        _delta("thermal identification mask degradation (table cell)", idt, ("thermal", "thermal"), idt, ("thermal", "masked-thermal")),
        _delta("hybrid gain on masked visual probes", idt, ("hybrid", "masked-visual"), idt, ("visual", "masked-visual")),
    ]


def discrepancies() -> list[str]:
    """Quoted figures that no single pair of table cells reproduces."""
    return [
        "thermal/masked-thermal cell: prose quotes 0.3055, table prints 0.3035 "
        f"(deltas {round4(0.9899 - 0.3055):.4f} vs {round4(0.9899 - 0.3035):.4f})",
        "residual degradation quoted as 1.79% against a 98.21% periocular accuracy: "
        f"1 - 0.9821 = {round4(1 - 0.9821):.4f}, 0.999 - 0.9821 = {round4(0.999 - 0.9821):.4f}; "
        "98.21% does not appear in any table",
    ]
