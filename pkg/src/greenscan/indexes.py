"""Per-tree health indexes: corrected canopy NDVI and canopy temperature depression."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, DegenerateScaleError, EmptyMaskError, ValidationError
from .raster import ThermalImage
from .registration import RegisteredPair

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PixelNdviPlane:
    """Raw per-pixel NDVI. ``values`` is 0.0 wherever ``defined_mask`` is false."""

    values: np.ndarray
    defined_mask: np.ndarray


@dataclass(frozen=True)
class TreeIndexes:
    instance_id: int
    ndvi_corrected_mean: float
    ctd: float
    canopy_pixel_count: int
    canopy_temperature: float


def ndvi_plane(reg: RegisteredPair) -> PixelNdviPlane:
    """(NIR - Red) / (NIR + Red) on valid pixels with a nonzero denominator."""
    nir = reg.rgn_aligned.nir.astype(np.float64)
    red = reg.rgn_aligned.red.astype(np.float64)
    total = nir + red
    defined = np.asarray(reg.valid_mask, dtype=bool) & (total > 0)
    values = np.zeros(total.shape, dtype=np.float64)
    np.divide(nir - red, total, out=values, where=defined)
    return PixelNdviPlane(values=values, defined_mask=defined)


def _as_mask(mask, shape) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape):
        raise ValidationError(f"mask shape {mask.shape} does not match plane {tuple(shape)}")
    return mask


def correction_scale(raw: np.ndarray) -> float:
    """|min| / |max| of the given raw NDVI values."""
    hi = float(raw.max())
    lo = float(raw.min())
    if hi == 0.0:
        raise DegenerateScaleError("maximum NDVI over the mask is 0; correction is undefined")
    if hi < 0.0:
        logger.warning("all masked NDVI values are negative (max %.4f, min %.4f)", hi, lo)
    return abs(lo) / abs(hi)


def corrected_ndvi(plane: PixelNdviPlane, mask) -> np.ma.MaskedArray:
    """Scale masked raw NDVI by |NDVI_min| / |NDVI_max| over the same pixels.

    Extrema are taken over pixels that are both in ``mask`` and defined. The
    result is masked everywhere else.

    Raises:
        EmptyMaskError: no defined pixel lies under the mask.
        DegenerateScaleError: the masked maximum is exactly zero.
    """
    mask = _as_mask(mask, plane.values.shape) & plane.defined_mask
    if not mask.any():
        raise EmptyMaskError("no defined NDVI pixels under the mask")
    raw = plane.values[mask]
    scale = correction_scale(raw)
    out = np.zeros_like(plane.values)
    out[mask] = raw * scale
    return np.ma.MaskedArray(out, mask=~mask)


def pixel_temperature(thermal: ThermalImage, x: int, y: int) -> float:
    if not (0 <= x < thermal.width and 0 <= y < thermal.height):
        raise BoundsError(f"pixel ({x}, {y}) outside {thermal.width}x{thermal.height} image")
    return decode_temperature(thermal.values[y, x], thermal.t_min, thermal.t_max)


def decode_temperature(p, t_min: float, t_max: float):
    """Temperature in degrees C for normalized pixel value(s) ``p``."""
    result = np.asarray(p, dtype=np.float64) / 255.0 * (t_max - t_min) + t_min
    return float(result) if result.ndim == 0 else result


def temperature_plane(thermal: ThermalImage) -> np.ndarray:
    return decode_temperature(thermal.values, thermal.t_min, thermal.t_max)


def canopy_temperature(thermal: ThermalImage, mask) -> float:
    mask = _as_mask(mask, thermal.shape)
    if not mask.any():
        raise EmptyMaskError("canopy mask is empty")
    temps = temperature_plane(thermal)[mask]
    return float(np.mean(temps, dtype=np.float64))


def ctd(thermal: ThermalImage, mask, air_temperature: float) -> float:
    """Mean canopy temperature under ``mask`` minus the air temperature."""
    return canopy_temperature(thermal, mask) - float(air_temperature)


def tree_indexes(reg: RegisteredPair, mask, instance_id: int, air_temperature: float,
                 correct: bool = True) -> TreeIndexes:
    """Indexes for one leaf mask.

    Pixels outside the registered footprint are dropped from the mask first.
    ``correct=False`` reports the plain mean of raw NDVI instead.
    """
    mask = _as_mask(mask, reg.shape) & reg.valid_mask
    if not mask.any():
        raise EmptyMaskError(f"instance {instance_id} has no pixels inside the footprint")
    plane = ndvi_plane(reg)
    if correct:
        ndvi_mean = float(corrected_ndvi(plane, mask).mean())
    else:
        used = mask & plane.defined_mask
        if not used.any():
            raise EmptyMaskError(f"instance {instance_id} has no defined NDVI pixels")
        ndvi_mean = float(plane.values[used].mean())
    t_canopy = canopy_temperature(reg.thermal, mask)
    return TreeIndexes(
        instance_id=int(instance_id),
        ndvi_corrected_mean=ndvi_mean,
        ctd=t_canopy - float(air_temperature),
        canopy_pixel_count=int(mask.sum()),
        canopy_temperature=t_canopy,
    )
