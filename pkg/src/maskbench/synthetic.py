"""Procedural face-like corpus for desk-scale runs.

Every subject shares a common coarse face layout. Upper grid rows deviate from it by a
moderate per-subject offset; lower rows (nose tip, mouth, chin) are drawn afresh per
subject, so they carry high-variance appearance the way beards and lips do. An
oriented sinusoidal texture is added on top. Visual and thermal templates are
independent. Images of a subject add brightness jitter and pixel noise; masked
variants come from ``occlude_lower_face``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import CELL, FACE_SIZE, GRID, occlude_lower_face
from .raster import Manifest, ManifestEntry, Raster, save_manifest, write_image


@dataclass
class SyntheticSubject:
    subject_id: str
    visual: list[Raster]
    thermal: list[Raster]


_LAYOUT = np.random.default_rng(12345).uniform(70, 180, size=(GRID, GRID, 1))
LOWER_ROWS = 4
IDENTITY_SPREAD = 30.0


def _template(rng, channels):
    cells = _LAYOUT + rng.normal(0.0, IDENTITY_SPREAD, size=(GRID, GRID, channels))
    cells[LOWER_ROWS:] = rng.uniform(30, 225, size=(GRID - LOWER_ROWS, GRID, channels))
    base = np.repeat(np.repeat(cells, CELL, axis=0), CELL, axis=1)
    yy, xx = np.mgrid[0:FACE_SIZE, 0:FACE_SIZE]
    fx, fy = rng.uniform(2, 12, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    texture = 18.0 * np.sin(2 * np.pi * (fx * xx + fy * yy) / FACE_SIZE + phase)
    return base + texture[:, :, None]


def _sample(rng, template, noise, jitter):
    img = template + rng.normal(0.0, jitter) + rng.normal(0.0, noise, size=template.shape)
    return Raster.from_array(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def synthetic_subjects(
    n_subjects: int = 40,
    images_per_subject: int = 5,
    seed: int = 0,
    noise: float = 12.0,
    jitter: float = 6.0,
) -> list[SyntheticSubject]:
    rng = np.random.default_rng(seed)
    out = []
    for s in range(n_subjects):
        vt = _template(rng, 3)
        tt = _template(rng, 1)
        visual = [_sample(rng, vt, noise, jitter) for _ in range(images_per_subject)]
        thermal = [_sample(rng, tt, noise, jitter) for _ in range(images_per_subject)]
        out.append(SyntheticSubject(f"s{s:03d}", visual, thermal))
    return out


def write_corpus(
    out_dir,
    n_subjects: int = 40,
    images_per_subject: int = 5,
    seed: int = 0,
    fill: int = 0,
    spectra: tuple[str, ...] = ("visual", "thermal"),
) -> Manifest:
    """Write PNGs for every subject/spectrum/mask state and a ``manifest.csv`` next to them."""
    out_dir = Path(out_dir)
    entries = []
    for subj in synthetic_subjects(n_subjects, images_per_subject, seed):
        for spectrum in spectra:
            images = subj.visual if spectrum == "visual" else subj.thermal
            for k, img in enumerate(images):
                for state, im in (("unmasked", img), ("masked", occlude_lower_face(img, fill))):
                    rel = f"{spectrum}/{state}/{subj.subject_id}_{k:02d}.png"
                    write_image(im, out_dir / rel)
                    entries.append(ManifestEntry(rel, subj.subject_id, spectrum, state))
    m = Manifest(tuple(entries), 2, root=out_dir)
    save_manifest(m, out_dir / "manifest.csv")
    return m
