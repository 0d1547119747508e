"""Face image procedures: area rescaling, 8x8 periocular blackout, visual/thermal hybrids.

All pixel arithmetic is integer-exact so outputs are byte-identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .raster import Raster

FACE_SIZE = 256
GRID = 8
CELL = FACE_SIZE // GRID
PERIOCULAR_REGIONS = tuple(range(25, 31))
BORDER_REGIONS = tuple(
    r * GRID + c for r in range(GRID) for c in range(GRID) if r in (0, GRID - 1) or c in (0, GRID - 1)
)
HYBRID_SEAM = FACE_SIZE // 2
OCCLUDER_TOP = 144


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    # Overlap of source pixel j with output cell i, both scaled by n_out*n_in so the
    # weights are integers; each row sums to n_in.
    i = np.arange(n_out)[:, None]
    j = np.arange(n_in)[None, :]
    lo = np.maximum(i * n_in, j * n_out)
    hi = np.minimum((i + 1) * n_in, (j + 1) * n_out)
    return np.clip(hi - lo, 0, None).astype(np.int64)


def rescale_area(src: Raster, out_w: int, out_h: int) -> Raster:
    """Resample by area averaging.

    Each output pixel is the area-weighted mean of the source pixels its footprint
    covers, rounded half-up. Integer downscale factors reduce to plain block means.
    """
    if out_w <= 0 or out_h <= 0:
        raise DimensionError(f"output size must be positive, got {out_w}x{out_h}")
    if (out_w, out_h) == (src.width, src.height):
        return src
    denom = src.height * src.width
    if src.height % out_h == 0 and src.width % out_w == 0:
        fy, fx = src.height // out_h, src.width // out_w
        blocks = src.to_array().astype(np.int64).reshape(out_h, fy, out_w, fx, src.channels)
        total = blocks.sum(axis=(1, 3)) * (out_h * out_w)
    else:
        # Integer-valued float64 products stay below 2**53 (255 * h * w), so BLAS is exact.
        a = src.to_array().astype(np.float64)
        wy = _area_weights(src.height, out_h).astype(np.float64)
        wx = _area_weights(src.width, out_w).astype(np.float64)
        total = np.stack([wy @ a[:, :, c] @ wx.T for c in range(src.channels)], axis=2)
        total = np.rint(total).astype(np.int64)
    out = (2 * total + denom) // (2 * denom)
    return Raster.from_array(out.astype(np.uint8))


def to_face(src: Raster) -> Raster:
    """Rescale any raster to the 256x256 working resolution (aspect ratio not preserved)."""
    return rescale_area(src, FACE_SIZE, FACE_SIZE)


def grid_region_of(px: int, py: int) -> int:
    """Index of the 32x32 cell containing pixel (px, py), row-major from the top-left."""
    if not (0 <= px < FACE_SIZE and 0 <= py < FACE_SIZE):
        raise DimensionError(f"pixel ({px}, {py}) outside the {FACE_SIZE}x{FACE_SIZE} face grid")
    return (py // CELL) * GRID + (px // CELL)


@dataclass(frozen=True)
class RegionMask:
    """Keep/drop flag per 8x8 grid cell, index = row * 8 + col.

    Direct construction accepts any 64 flags; ``sample_periocular_mask`` produces masks
    that satisfy the periocular rules (see ``is_periocular``).
    """

    keep: tuple[bool, ...]

    def __post_init__(self):
        keep = tuple(bool(k) for k in self.keep)
        if len(keep) != GRID * GRID:
            raise DimensionError(f"RegionMask needs {GRID * GRID} flags, got {len(keep)}")
        object.__setattr__(self, "keep", keep)

    @classmethod
    def all_keep(cls) -> RegionMask:
        return cls((True,) * (GRID * GRID))

    @classmethod
    def all_drop(cls) -> RegionMask:
        return cls((False,) * (GRID * GRID))

    @property
    def is_periocular(self) -> bool:
        return all(self.keep[i] for i in PERIOCULAR_REGIONS) and not any(self.keep[i] for i in BORDER_REGIONS)

    def as_grid(self) -> np.ndarray:
        return np.array(self.keep, dtype=bool).reshape(GRID, GRID)

    def to_int(self) -> int:
        """Pack into a 64-bit integer, bit i = keep[i]."""
        return sum(1 << i for i, k in enumerate(self.keep) if k)

    @classmethod
    def from_int(cls, bits: int) -> RegionMask:
        return cls(tuple(bool((bits >> i) & 1) for i in range(GRID * GRID)))


def sample_periocular_mask(seed) -> RegionMask:
    """Random blackout mask: borders dropped, regions 25-30 kept, others kept with p=0.5."""
    rng = np.random.default_rng(seed)
    keep = rng.random(GRID * GRID) < 0.5
    keep[list(BORDER_REGIONS)] = False
    keep[list(PERIOCULAR_REGIONS)] = True
    return RegionMask(tuple(keep.tolist()))


def _require_face(img: Raster, what: str = "image") -> None:
    if (img.width, img.height) != (FACE_SIZE, FACE_SIZE):
        raise DimensionError(f"{what} must be {FACE_SIZE}x{FACE_SIZE}, got {img.width}x{img.height}")


def apply_region_mask(img: Raster, mask: RegionMask) -> Raster:
    _require_face(img)
    cells = mask.as_grid()
    pixel_keep = np.repeat(np.repeat(cells, CELL, axis=0), CELL, axis=1)
    out = img.to_array().copy()
    out[~pixel_keep] = 0
    return Raster.from_array(out)


def expand_channels(img: Raster, channels: int) -> Raster:
    if img.channels == channels:
        return img
    if img.channels == 1 and channels == 3:
        return Raster.from_array(np.repeat(img.to_array(), 3, axis=2))
    raise DimensionError(f"cannot convert {img.channels}-channel image to {channels} channels")


def make_hybrid(visual: Raster, thermal: Raster) -> Raster:
    """Top half from the visual image, bottom half from the thermal image.

    A grayscale input is replicated to three channels when the other input is RGB.
    """
    _require_face(visual, "visual image")
    _require_face(thermal, "thermal image")
    channels = max(visual.channels, thermal.channels)
    top = expand_channels(visual, channels).to_array()
    bottom = expand_channels(thermal, channels).to_array()
    out = np.concatenate([top[:HYBRID_SEAM], bottom[HYBRID_SEAM:]], axis=0)
    return Raster.from_array(out)


def occlude_lower_face(img: Raster, fill: int = 0) -> Raster:
    """Paint rows 144..255 with ``fill``: a flat stand-in for a surgical mask."""
    _require_face(img)
    if not 0 <= fill <= 255:
        raise ValidationError(f"fill must be an 8-bit value, got {fill}")
    out = img.to_array().copy()
    out[OCCLUDER_TOP:] = fill
    return Raster.from_array(out)
