"""Raster types, capture metadata and raster/sidecar I/O.

Rasters are stored row-major with a top-left origin: ``x`` grows rightward
and indexes columns, ``y`` grows downward and indexes rows, so a plane is
addressed as ``plane[y, x]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import BoundsError, FormatError, MetadataError, ValidationError

BANDS = ("red", "green", "nir")
DEFAULT_BAND_ORDER = BANDS
DEFAULT_MAX_SKEW_S = 2.0

# Sidecar keys that must be present for a capture to be usable.
REQUIRED_META_KEYS = (
    "timestamp",
    "latitude",
    "longitude",
    "air_temperature_c",
    "t_min_c",
    "t_max_c",
)


def _frozen_plane(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D plane, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValidationError(f"{name} values must lie in [0, 255]")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.array_equal(arr, np.round(arr)):
                raise ValidationError(f"{name} values must be integers")
        arr = arr.astype(np.uint8)
    else:
        arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class RgnImage:
    """Three-band red / green / near-infrared raster, 8 bits per band."""

    red: np.ndarray
    green: np.ndarray
    nir: np.ndarray

    def __post_init__(self):
        for name in BANDS:
            object.__setattr__(self, name, _frozen_plane(getattr(self, name), name))
        if not (self.red.shape == self.green.shape == self.nir.shape):
            raise ValidationError(
                f"band shapes differ: red {self.red.shape}, green {self.green.shape}, "
                f"nir {self.nir.shape}"
            )

    @property
    def width(self) -> int:
        return self.red.shape[1]

    @property
    def height(self) -> int:
        return self.red.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.red.shape

    @classmethod
    def from_stack(cls, stack: np.ndarray, band_order: Sequence[str] = DEFAULT_BAND_ORDER):
        """Build from an ``(H, W, 3)`` array whose last axis follows ``band_order``."""
        stack = np.asarray(stack)
        if stack.ndim != 3 or stack.shape[2] != 3:
            raise FormatError(f"expected an (H, W, 3) raster, got shape {stack.shape}")
        order = normalize_band_order(band_order)
        planes = {name: stack[:, :, i] for i, name in enumerate(order)}
        return cls(red=planes["red"], green=planes["green"], nir=planes["nir"])

    def to_stack(self, band_order: Sequence[str] = DEFAULT_BAND_ORDER) -> np.ndarray:
        order = normalize_band_order(band_order)
        return np.dstack([getattr(self, name) for name in order])

    def __eq__(self, other):
        if not isinstance(other, RgnImage):
            return NotImplemented
        return all(np.array_equal(getattr(self, b), getattr(other, b)) for b in BANDS)


@dataclass(frozen=True, eq=False)
class ThermalImage:
    """Normalized single-band thermal raster and the range that decodes it.

    A pixel value ``P`` in ``[0, 255]`` maps linearly onto ``[t_min, t_max]``
    degrees Celsius.
    """

    values: np.ndarray
    t_min: float
    t_max: float

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_plane(self.values, "thermal values"))
        if not (math.isfinite(self.t_min) and math.isfinite(self.t_max)):
            raise ValidationError("thermal range must be finite")
        if not self.t_min < self.t_max:
            raise ValidationError(f"t_min ({self.t_min}) must be below t_max ({self.t_max})")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, ThermalImage):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values)
            and self.t_min == other.t_min
            and self.t_max == other.t_max
        )


@dataclass(frozen=True)
class CaptureMeta:
    timestamp: float
    latitude: float
    longitude: float
    air_temperature: float
    device_id: str = ""
    band_order: Tuple[str, ...] = DEFAULT_BAND_ORDER
    rgn_timestamp: Optional[float] = None
    thermal_timestamp: Optional[float] = None

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValidationError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValidationError(f"longitude {self.longitude} outside [-180, 180]")
        object.__setattr__(self, "band_order", normalize_band_order(self.band_order))


@dataclass(frozen=True)
class CapturePair:
    rgn: RgnImage
    thermal: ThermalImage
    meta: CaptureMeta
    capture_id: str = ""
    max_skew: float = field(default=DEFAULT_MAX_SKEW_S, compare=False)

    def __post_init__(self):
        rt, tt = self.meta.rgn_timestamp, self.meta.thermal_timestamp
        if rt is not None and tt is not None and abs(rt - tt) > self.max_skew:
            raise ValidationError(
                f"sensor timestamps differ by {abs(rt - tt):.3f} s (limit {self.max_skew} s)"
            )


Image2D = Union[RgnImage, ThermalImage]


def pixel_at(image: Image2D, x: int, y: int):
    """Return the value(s) at column ``x``, row ``y``.

    RGN images yield a ``(red, green, nir)`` tuple, thermal images a single int.
    """
    if not (0 <= x < image.width and 0 <= y < image.height):
        raise BoundsError(f"pixel ({x}, {y}) outside {image.width}x{image.height} image")
    if isinstance(image, RgnImage):
        return (int(image.red[y, x]), int(image.green[y, x]), int(image.nir[y, x]))
    return int(image.values[y, x])


def normalize_band_order(order) -> Tuple[str, ...]:
    if isinstance(order, str):
        compact = order.strip().upper()
        if compact and set(compact) <= {"R", "G", "N"} and len(compact) == 3:
            order = [{"R": "red", "G": "green", "N": "nir"}[c] for c in compact]
        else:
            order = [part.strip() for part in order.split(",")]
    order = tuple(str(b).strip().lower() for b in order)
    if sorted(order) != sorted(BANDS):
        raise MetadataError(f"band_order must be a permutation of {BANDS}, got {order}")
    return order


# --- raster I/O --------------------------------------------------------------


def _read_array(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            arr = np.array(img)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise FormatError(f"cannot read raster {path}: {exc}") from exc
    return mode, arr


def read_rgn(path, band_order: Sequence[str] = DEFAULT_BAND_ORDER) -> RgnImage:
    mode, arr = _read_array(path)
    if mode != "RGB" or arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"{path}: expected an 8-bit 3-channel raster, got mode {mode}")
    return RgnImage.from_stack(arr, band_order)


def read_thermal_values(path) -> np.ndarray:
    mode, arr = _read_array(path)
    if mode != "L" or arr.dtype != np.uint8 or arr.ndim != 2:
        raise FormatError(f"{path}: expected an 8-bit 1-channel raster, got mode {mode}")
    return arr


def write_rgn(image: RgnImage, path, band_order: Sequence[str] = DEFAULT_BAND_ORDER) -> None:
    Image.fromarray(np.ascontiguousarray(image.to_stack(band_order)), mode="RGB").save(path)


def write_thermal(image: ThermalImage, path) -> None:
    Image.fromarray(np.ascontiguousarray(image.values), mode="L").save(path)


def write_label_raster(labels: np.ndarray, path) -> None:
    """Save a 16-bit single-channel label raster (0 is background)."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 65535):
        raise ValidationError("labels must fit in 16 bits")
    Image.fromarray(labels.astype(np.uint16)).save(path)


def read_label_raster(path) -> np.ndarray:
    mode, arr = _read_array(path)
    if arr.ndim != 2:
        raise FormatError(f"{path}: label raster must have one channel, got mode {mode}")
    if mode not in ("I;16", "I;16B", "I;16L", "I", "L"):
        raise FormatError(f"{path}: unsupported label raster mode {mode}")
    return arr.astype(np.int64)


# --- sidecar -----------------------------------------------------------------


def read_sidecar(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, UnicodeDecodeError) as exc:
        raise MetadataError(f"cannot read sidecar {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MetadataError(f"sidecar {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise MetadataError(f"sidecar {path} must hold a JSON object")
    missing = [k for k in REQUIRED_META_KEYS if data.get(k) is None]
    if missing:
        raise MetadataError(f"sidecar {path} missing required field(s): {', '.join(missing)}")
    return data


def _number(data: dict, key: str, path) -> float:
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MetadataError(f"sidecar {path}: {key} must be a number, got {value!r}")
    return float(value)


def meta_from_sidecar(data: dict, path="<sidecar>") -> CaptureMeta:
    def optional(key):
        return None if data.get(key) is None else _number(data, key, path)

    return CaptureMeta(
        timestamp=_number(data, "timestamp", path),
        latitude=_number(data, "latitude", path),
        longitude=_number(data, "longitude", path),
        air_temperature=_number(data, "air_temperature_c", path),
        device_id=str(data.get("device_id", "")),
        band_order=normalize_band_order(data.get("band_order", DEFAULT_BAND_ORDER)),
        rgn_timestamp=optional("rgn_timestamp"),
        thermal_timestamp=optional("thermal_timestamp"),
    )


def sidecar_dict(meta: CaptureMeta, t_min: float, t_max: float) -> dict:
    data = {
        "timestamp": meta.timestamp,
        "latitude": meta.latitude,
        "longitude": meta.longitude,
        "air_temperature_c": meta.air_temperature,
        "t_min_c": t_min,
        "t_max_c": t_max,
        "band_order": list(meta.band_order),
        "device_id": meta.device_id,
    }
    if meta.rgn_timestamp is not None:
        data["rgn_timestamp"] = meta.rgn_timestamp
    if meta.thermal_timestamp is not None:
        data["thermal_timestamp"] = meta.thermal_timestamp
    return data


def load_capture(rgn_path, thermal_path, meta_path, max_skew: float = DEFAULT_MAX_SKEW_S,
                 capture_id: Optional[str] = None) -> CapturePair:
    """Load and validate one RGN + thermal + sidecar triplet.

    Raises:
        FormatError: a raster is unreadable or has the wrong channel count/depth.
        MetadataError: the sidecar is malformed or lacks a required field.
        ValidationError: the loaded data violates an invariant.
    """
    data = read_sidecar(meta_path)
    meta = meta_from_sidecar(data, meta_path)
    t_min = _number(data, "t_min_c", meta_path)
    t_max = _number(data, "t_max_c", meta_path)
    rgn = read_rgn(rgn_path, meta.band_order)
    thermal = ThermalImage(read_thermal_values(thermal_path), t_min, t_max)
    if capture_id is None:
        capture_id = Path(meta_path).name.removesuffix(".json").removesuffix("_meta")
    return CapturePair(rgn=rgn, thermal=thermal, meta=meta, capture_id=capture_id,
                       max_skew=max_skew)


def save_capture(pair: CapturePair, rgn_path, thermal_path, meta_path) -> None:
    write_rgn(pair.rgn, rgn_path, pair.meta.band_order)
    write_thermal(pair.thermal, thermal_path)
    data = sidecar_dict(pair.meta, pair.thermal.t_min, pair.thermal.t_max)
    Path(meta_path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
