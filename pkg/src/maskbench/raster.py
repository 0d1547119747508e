"""Core value types: rasters, boxes, labelled detections, and dataset manifests."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import DimensionError, InputError, ValidationError

SPECTRA = ("visual", "thermal")
MASK_STATES = ("masked", "unmasked")
MANIFEST_COLUMNS = ("path", "subject_id", "spectrum", "mask_state")


@dataclass(frozen=True)
class Raster:
    """Immutable 8-bit image, row-major, interleaved channels."""

    width: int
    height: int
    channels: int
    data: bytes = field(repr=False)

    def __post_init__(self):
        if not (isinstance(self.width, int) and isinstance(self.height, int)):
            raise DimensionError("raster dimensions must be integers")
        if self.width <= 0 or self.height <= 0:
            raise DimensionError(f"raster dimensions must be positive, got {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise DimensionError(f"channels must be 1 or 3, got {self.channels}")
        if not isinstance(self.data, bytes):
            object.__setattr__(self, "data", bytes(self.data))
        expected = self.width * self.height * self.channels
        if len(self.data) != expected:
            raise DimensionError(
                f"data length {len(self.data)} != {self.width}x{self.height}x{self.channels} = {expected}"
            )

    @classmethod
    def from_array(cls, arr) -> Raster:
        """Build from an (h, w) or (h, w, c) array; values must already fit in uint8."""
        a = np.asarray(arr)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3:
            raise DimensionError(f"expected 2-D or 3-D array, got shape {a.shape}")
        if a.dtype != np.uint8:
            if a.size and (a.min() < 0 or a.max() > 255):
                raise ValidationError("array values outside 0..255")
            a = a.astype(np.uint8)
        h, w, c = a.shape
        return cls(w, h, c, np.ascontiguousarray(a).tobytes())

    @classmethod
    def filled(cls, width: int, height: int, value: int, channels: int = 1) -> Raster:
        return cls(width, height, channels, bytes([value]) * (width * height * channels))

    def to_array(self) -> np.ndarray:
        """Read-only (h, w, c) uint8 view of the samples."""
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.height, self.width, self.channels)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)


def read_image(path) -> Raster:
    """Load a PNG or binary PGM/PPM file. Grayscale stays 1-channel; anything else becomes RGB."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("L" if im.mode in ("1", "I", "I;16", "F") else "RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise InputError(f"image not found: {path}") from exc
    except OSError as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc
    return Raster.from_array(arr)


def write_image(img: Raster, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = img.to_array()
    if img.channels == 1:
        arr = arr[:, :, 0]
    fmt = None
    if path.suffix.lower() in (".pgm", ".ppm", ".pnm"):
        fmt = "PPM"
    Image.fromarray(arr).save(path, format=fmt)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, top-left origin, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"box width/height must be positive, got w={self.w}, h={self.h}")
        if self.x < 0 or self.y < 0:
            raise ValidationError(f"box origin must be non-negative, got ({self.x}, {self.y})")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class GroundTruth:
    box: BBox
    class_id: int
    image: str = ""

    def __post_init__(self):
        if self.class_id < 0:
            raise ValidationError(f"class_id must be non-negative, got {self.class_id}")


@dataclass(frozen=True)
class Detection:
    box: BBox
    class_id: int
    score: float
    image: str = ""

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    subject_id: str
    spectrum: str
    mask_state: str


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]
    class_count: int = 2
    root: Path | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.class_count < 1:
            raise ValidationError(f"class_count must be >= 1, got {self.class_count}")
        seen = set()
        for i, e in enumerate(self.entries):
            _check_entry(e, f"entry {i}")
            if e.path in seen:
                raise ValidationError(f"duplicate image path {e.path!r} (entry {i})")
            seen.add(e.path)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def subjects(self) -> list[str]:
        """Distinct subject ids, sorted."""
        return sorted({e.subject_id for e in self.entries})

    def counts(self) -> dict[tuple[str, str], int]:
        """Image counts keyed by (spectrum, mask_state)."""
        c = Counter((e.spectrum, e.mask_state) for e in self.entries)
        return {(s, m): c.get((s, m), 0) for s in SPECTRA for m in MASK_STATES}

    def select(self, spectrum: str | None = None, mask_state: str | None = None) -> list[ManifestEntry]:
        return [
            e
            for e in self.entries
            if (spectrum is None or e.spectrum == spectrum) and (mask_state is None or e.mask_state == mask_state)
        ]

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p


def _check_entry(e: ManifestEntry, where: str) -> None:
    if not e.path:
        raise ValidationError(f"{where}: empty path")
    if not e.subject_id:
        raise ValidationError(f"{where}: empty subject_id")
    if e.spectrum not in SPECTRA:
        raise ValidationError(f"{where}: unknown spectrum {e.spectrum!r} (expected one of {SPECTRA})")
    if e.mask_state not in MASK_STATES:
        raise ValidationError(f"{where}: unknown mask_state {e.mask_state!r} (expected one of {MASK_STATES})")


def load_manifest(path) -> Manifest:
    """Read a manifest from CSV or JSON (chosen by file suffix)."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise InputError(f"manifest not found: {path}") from exc
    if path.suffix.lower() == ".json":
        m = parse_manifest_json(text, source=str(path))
    else:
        m = parse_manifest_csv(text, source=str(path))
    return Manifest(m.entries, m.class_count, root=path.parent)


def parse_manifest_csv(text: str, source: str = "<csv>") -> Manifest:
    """Parse manifest CSV. Leading ``# class_count=N`` comment lines are honoured."""
    class_count = 2
    lines = text.splitlines()
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        key, _, value = lines[start][1:].strip().partition("=")
        if key.strip() == "class_count":
            try:
                class_count = int(value)
            except ValueError as exc:
                raise InputError(f"{source}:{start + 1}: bad class_count {value!r}") from exc
        start += 1
    reader = csv.reader(lines[start:])
    try:
        header = next(reader)
    except StopIteration as exc:
        raise InputError(f"{source}: empty manifest") from exc
    header = [h.strip() for h in header]
    if tuple(header) != MANIFEST_COLUMNS:
        raise InputError(f"{source}:{start + 1}: expected header {','.join(MANIFEST_COLUMNS)}, got {','.join(header)}")
    entries = []
    seen: dict[str, int] = {}
    for row in reader:
        lineno = start + reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise InputError(f"{source}:{lineno}: expected 4 fields, got {len(row)}")
        e = ManifestEntry(*(c.strip() for c in row))
        _check_entry(e, f"{source}:{lineno}")
        if e.path in seen:
            raise ValidationError(f"{source}:{lineno}: duplicate image path {e.path!r} (first at line {seen[e.path]})")
        seen[e.path] = lineno
        entries.append(e)
    return Manifest(tuple(entries), class_count)


def parse_manifest_json(text: str, source: str = "<json>") -> Manifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}:{exc.lineno}: {exc.msg}") from exc
    if isinstance(doc, list):
        rows, class_count = doc, 2
    elif isinstance(doc, dict) and isinstance(doc.get("entries"), list):
        rows, class_count = doc["entries"], doc.get("class_count", 2)
    else:
        raise InputError(f"{source}: expected an array or an object with 'entries' and 'class_count'")
    entries = []
    for i, r in enumerate(rows):
        try:
            entries.append(ManifestEntry(*(str(r[k]) for k in MANIFEST_COLUMNS)))
        except (KeyError, TypeError) as exc:
            raise InputError(f"{source}: entry {i} missing field {exc}") from exc
    try:
        return Manifest(tuple(entries), int(class_count))
    except ValidationError as exc:
        raise ValidationError(f"{source}: {exc}") from exc


def manifest_to_csv(m: Manifest) -> str:
    buf = io.StringIO()
    buf.write(f"# class_count={m.class_count}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_COLUMNS)
    for e in m.entries:
        w.writerow([e.path, e.subject_id, e.spectrum, e.mask_state])
    return buf.getvalue()


def manifest_to_json(m: Manifest) -> str:
    doc = {
        "class_count": m.class_count,
        "entries": [{k: getattr(e, k) for k in MANIFEST_COLUMNS} for e in m.entries],
    }
    return json.dumps(doc, indent=1)


def save_manifest(m: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest_to_json(m) if path.suffix.lower() == ".json" else manifest_to_csv(m))


def make_manifest(rows: Iterable[Sequence[str]], class_count: int = 2) -> Manifest:
    return Manifest(tuple(ManifestEntry(*r) for r in rows), class_count)
