"""Align the RGN raster onto the thermal raster's pixel grid.

The warp is a zoom about the RGN image center, a resample to thermal
resolution and a planar translation, in that order. Translations follow the
field convention: positive ``translate_x`` moves content right, positive
``translate_y`` moves content *up* (toward row 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import BoundsError, OutsideFootprintError, ValidationError
from .raster import CaptureMeta, CapturePair, RgnImage, ThermalImage

UNITS = ("thermal", "source")
INTERPOLATIONS = ("bilinear", "nearest")
_EPS = 1e-9


@dataclass(frozen=True)
class RegistrationParams:
    """Warp parameters.

    ``units`` says which pixel grid the translation is measured in: ``"thermal"``
    pixels of the output frame, or ``"source"`` pixels of the full-resolution
    RGN image (converted through the zoom/resample scale).
    """

    translate_x: float = 0.0
    translate_y: float = 0.0
    zoom: float = 1.0
    units: str = "thermal"
    interpolation: str = "bilinear"

    def __post_init__(self):
        # store plain floats so equal parameters serialise (and hash) identically
        for name in ("translate_x", "translate_y", "zoom"):
            try:
                object.__setattr__(self, name, float(getattr(self, name)))
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{name} must be a number: {exc}") from exc
        if not (math.isfinite(self.zoom) and 0.0 < self.zoom <= 1.0):
            raise ValidationError(f"zoom must lie in (0, 1], got {self.zoom}")
        if not (math.isfinite(self.translate_x) and math.isfinite(self.translate_y)):
            raise ValidationError("translation must be finite")
        if self.units not in UNITS:
            raise ValidationError(f"units must be one of {UNITS}, got {self.units!r}")
        if self.interpolation not in INTERPOLATIONS:
            raise ValidationError(
                f"interpolation must be one of {INTERPOLATIONS}, got {self.interpolation!r}"
            )


# Values found by manual overlay on the field prototype (MAPIR 4000x3000 onto
# Lepton 160x120). 150 rows exceeds the thermal height, so they are source pixels.
FIELD_PARAMS = RegistrationParams(translate_x=50.0, translate_y=150.0, zoom=0.57,
                                  units="source")


@dataclass(frozen=True)
class _Warp:
    """Resolved affine mapping between thermal pixels and source pixels.

    Pixel centers sit at integer coordinates. Along x the mapping is
    ``xs = x0 + (x - tx + 0.5) * sx - 0.5`` and similarly along y with ``+ ty``.
    """

    src_w: int
    src_h: int
    dst_w: int
    dst_h: int
    x0: float
    y0: float
    sx: float
    sy: float
    tx: float
    ty: float

    @classmethod
    def resolve(cls, params: RegistrationParams, source_size, thermal_size) -> "_Warp":
        src_w, src_h = (int(v) for v in source_size)
        dst_w, dst_h = (int(v) for v in thermal_size)
        if min(src_w, src_h, dst_w, dst_h) <= 0:
            raise ValidationError("image sizes must be positive")
        z = params.zoom
        sx = z * src_w / dst_w
        sy = z * src_h / dst_h
        x0 = (src_w - z * src_w) / 2.0
        y0 = (src_h - z * src_h) / 2.0
        if params.units == "source":
            tx, ty = params.translate_x / sx, params.translate_y / sy
        else:
            tx, ty = params.translate_x, params.translate_y
        if abs(tx) >= dst_w or abs(ty) >= dst_h:
            raise ValidationError(
                f"translation ({tx:.3f}, {ty:.3f}) thermal px must be smaller than the "
                f"{dst_w}x{dst_h} thermal frame"
            )
        return cls(src_w, src_h, dst_w, dst_h, x0, y0, sx, sy, tx, ty)

    def unshift(self, x, y):
        return x - self.tx, y + self.ty

    def to_source(self, x, y):
        u, v = self.unshift(x, y)
        return self.x0 + (u + 0.5) * self.sx - 0.5, self.y0 + (v + 0.5) * self.sy - 0.5

    def to_thermal(self, xs, ys):
        u = (xs + 0.5 - self.x0) / self.sx - 0.5
        v = (ys + 0.5 - self.y0) / self.sy - 0.5
        return u + self.tx, v - self.ty

    def covered(self, u, limit):
        return (u >= -_EPS) & (u <= limit - 1 + _EPS)


@dataclass(frozen=True, eq=False)
class RegisteredPair:
    rgn_aligned: RgnImage
    thermal: ThermalImage
    valid_mask: np.ndarray
    meta: Optional[CaptureMeta] = None
    capture_id: str = ""

    def __post_init__(self):
        mask = np.asarray(self.valid_mask, dtype=bool).copy()
        mask.flags.writeable = False
        object.__setattr__(self, "valid_mask", mask)
        if not (self.rgn_aligned.shape == self.thermal.shape == mask.shape):
            raise ValidationError(
                f"registered planes disagree: rgn {self.rgn_aligned.shape}, "
                f"thermal {self.thermal.shape}, mask {mask.shape}"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.thermal.shape


def _sample_axis(coords: np.ndarray, size: int, interpolation: str):
    coords = np.clip(coords, 0.0, size - 1)
    if interpolation == "nearest":
        idx = np.floor(coords + 0.5).astype(np.intp)
        idx = np.minimum(idx, size - 1)
        return idx, idx, np.zeros_like(coords)
    lo = np.floor(coords).astype(np.intp)
    hi = np.minimum(lo + 1, size - 1)
    return lo, hi, coords - lo


def _resample_band(band: np.ndarray, rows, cols) -> np.ndarray:
    r0, r1, fr = rows
    c0, c1, fc = cols
    b = band.astype(np.float64)
    top = b[np.ix_(r0, c0)] * (1.0 - fc) + b[np.ix_(r0, c1)] * fc
    bottom = b[np.ix_(r1, c0)] * (1.0 - fc) + b[np.ix_(r1, c1)] * fc
    out = top * (1.0 - fr)[:, None] + bottom * fr[:, None]
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def register(pair: CapturePair, params: RegistrationParams) -> RegisteredPair:
    """Warp ``pair.rgn`` onto the thermal grid.

    Thermal pixels that the translated RGN footprint does not reach are marked
    false in ``valid_mask`` and hold zeros in ``rgn_aligned``; they are never
    extrapolated.
    """
    thermal = pair.thermal
    warp = _Warp.resolve(params, (pair.rgn.width, pair.rgn.height),
                         (thermal.width, thermal.height))
    xs_out = np.arange(thermal.width, dtype=np.float64)
    ys_out = np.arange(thermal.height, dtype=np.float64)
    u, v = warp.unshift(xs_out, ys_out)
    col_ok = warp.covered(u, thermal.width)
    row_ok = warp.covered(v, thermal.height)
    valid = row_ok[:, None] & col_ok[None, :]

    src_x, src_y = warp.to_source(xs_out, ys_out)
    cols = _sample_axis(src_x, pair.rgn.width, params.interpolation)
    rows = _sample_axis(src_y, pair.rgn.height, params.interpolation)
    bands = {}
    for name in ("red", "green", "nir"):
        plane = _resample_band(getattr(pair.rgn, name), rows, cols)
        plane[~valid] = 0
        bands[name] = plane
    return RegisteredPair(
        rgn_aligned=RgnImage(**bands),
        thermal=thermal,
        valid_mask=valid,
        meta=pair.meta,
        capture_id=pair.capture_id,
    )


def invert_registration(params: RegistrationParams, x: float, y: float,
                        source_size, thermal_size) -> Tuple[float, float]:
    """Source (RGN) coordinates that ``register`` samples for thermal pixel ``(x, y)``.

    Sizes are ``(width, height)`` tuples.
    """
    warp = _Warp.resolve(params, source_size, thermal_size)
    if not (0 <= x <= warp.dst_w - 1 and 0 <= y <= warp.dst_h - 1):
        raise BoundsError(f"({x}, {y}) outside the {warp.dst_w}x{warp.dst_h} thermal frame")
    u, v = warp.unshift(x, y)
    if not (warp.covered(u, warp.dst_w) and warp.covered(v, warp.dst_h)):
        raise OutsideFootprintError(f"thermal pixel ({x}, {y}) is not covered by the RGN footprint")
    xs, ys = warp.to_source(float(x), float(y))
    return float(xs), float(ys)


def forward_registration(params: RegistrationParams, xs: float, ys: float,
                         source_size, thermal_size) -> Tuple[float, float]:
    """Thermal-frame coordinates that source point ``(xs, ys)`` lands on."""
    warp = _Warp.resolve(params, source_size, thermal_size)
    x, y = warp.to_thermal(float(xs), float(ys))
    return float(x), float(y)


def footprint_size(params: RegistrationParams, source_size, thermal_size) -> Tuple[int, int]:
    """Number of valid ``(columns, rows)`` after warping, from the translation alone."""
    warp = _Warp.resolve(params, source_size, thermal_size)

    def count(shift, limit):
        # integers k in [0, limit-1] with 0 <= k - shift <= limit-1
        lo = max(0, math.ceil(shift - _EPS))
        hi = min(limit - 1, math.floor(limit - 1 + shift + _EPS))
        return max(0, hi - lo + 1)

    return count(warp.tx, warp.dst_w), count(-warp.ty, warp.dst_h)
