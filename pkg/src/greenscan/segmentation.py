"""Two-stage leaf segmentation.

Stage one proposes canopy instances, either with the bundled NDVI threshold
segmenter or from label rasters produced by an external instance-segmentation
model. Stage two clears sub-cutoff NDVI pixels (trunks, branches, sky) inside
each instance and smooths the result with a boolean median filter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import EmptyFootprintError, FormatError, ValidationError
from .indexes import ndvi_plane
from .raster import read_label_raster, write_label_raster
from .registration import RegisteredPair

MODES = ("threshold", "external")
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class SegmenterConfig:
    ndvi_cutoff: float = 0.02
    median_kernel: int = 3
    min_instance_area: int = 50
    mode: str = "threshold"

    def __post_init__(self):
        try:
            object.__setattr__(self, "ndvi_cutoff", float(self.ndvi_cutoff))
            for name in ("median_kernel", "min_instance_area"):
                value = getattr(self, name)
                if int(value) != value:
                    raise ValueError(f"{name} must be an integer, got {value}")
                object.__setattr__(self, name, int(value))
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc)) from exc
        if self.median_kernel < 1 or self.median_kernel % 2 == 0:
            raise ValidationError(f"median_kernel must be odd and >= 1, got {self.median_kernel}")
        if self.min_instance_area < 1:
            raise ValidationError(f"min_instance_area must be >= 1, got {self.min_instance_area}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True, eq=False)
class Instance:
    mask: np.ndarray
    score: float
    label: int


@dataclass(frozen=True, eq=False)
class InstanceMaskSet:
    width: int
    height: int
    instances: Tuple[Instance, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        seen = set()
        for inst in self.instances:
            if inst.mask.shape != (self.height, self.width):
                raise ValidationError(
                    f"instance {inst.label} mask {inst.mask.shape} does not match "
                    f"{self.width}x{self.height}"
                )
            if inst.label in seen:
                raise ValidationError(f"duplicate instance id {inst.label}")
            seen.add(inst.label)

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def labels(self) -> List[int]:
        return [inst.label for inst in self.instances]

    def label_raster(self) -> np.ndarray:
        """Flatten to a label plane; later instances win where masks overlap."""
        out = np.zeros((self.height, self.width), dtype=np.int64)
        for inst in self.instances:
            out[inst.mask] = inst.label
        return out


def _bool_plane(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool).copy()
    mask.flags.writeable = False
    return mask


def label_components(binary: np.ndarray) -> Tuple[np.ndarray, int]:
    """8-connected component labels, numbered in row-major order of first pixel."""
    return ndimage.label(np.asarray(binary, dtype=bool), structure=_EIGHT_CONNECTED)


def propose_instances_threshold(reg: RegisteredPair, cfg: SegmenterConfig) -> InstanceMaskSet:
    """Reference stage-one segmenter: connected regions of NDVI >= cutoff.

    Each surviving component is scored with its mean raw NDVI clamped to [0, 1].
    """
    if not reg.valid_mask.any():
        raise EmptyFootprintError("registered pair has no valid pixels")
    plane = ndvi_plane(reg)
    binary = plane.defined_mask & (plane.values >= cfg.ndvi_cutoff)
    labels, count = label_components(binary)
    height, width = binary.shape
    instances = []
    next_id = 1
    for k in range(1, count + 1):
        mask = labels == k
        area = int(mask.sum())
        if area < cfg.min_instance_area:
            continue
        score = float(np.clip(plane.values[mask].mean(), 0.0, 1.0))
        instances.append(Instance(mask=_bool_plane(mask), score=score, label=next_id))
        next_id += 1
    return InstanceMaskSet(width=width, height=height, instances=instances)


def instances_from_labels(labels: np.ndarray, scores: Optional[dict] = None) -> InstanceMaskSet:
    labels = np.asarray(labels)
    scores = scores or {}
    height, width = labels.shape
    instances = []
    for value in np.unique(labels):
        if value == 0:
            continue
        score = float(scores.get(int(value), 1.0))
        instances.append(Instance(mask=_bool_plane(labels == value), score=score, label=int(value)))
    return InstanceMaskSet(width=width, height=height, instances=instances)


def read_scores(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read scores sidecar {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"scores sidecar {path} must map labels to scores")
    try:
        return {int(k): float(v) for k, v in raw.items()}
    except (TypeError, ValueError) as exc:
        raise FormatError(f"scores sidecar {path}: {exc}") from exc


def scores_path_for(path) -> Path:
    return Path(path).with_suffix(".json")


def load_external_masks(path, expected_dims: Optional[Tuple[int, int]] = None,
                        scores_path=None) -> InstanceMaskSet:
    """Read a 16-bit label raster (0 = background) and its optional scores sidecar.

    ``expected_dims`` is ``(width, height)``. The sidecar defaults to the raster
    path with a ``.json`` suffix; labels without a score get 1.0.
    """
    labels = read_label_raster(path)
    if expected_dims is not None:
        width, height = expected_dims
        if labels.shape != (height, width):
            raise ValidationError(
                f"{path}: label raster is {labels.shape[1]}x{labels.shape[0]}, "
                f"expected {width}x{height}"
            )
    scores_path = Path(scores_path) if scores_path is not None else scores_path_for(path)
    scores = read_scores(scores_path) if scores_path.exists() else {}
    return instances_from_labels(labels, scores)


def save_masks(masks: InstanceMaskSet, path) -> None:
    write_label_raster(masks.label_raster(), path)
    scores = {str(inst.label): inst.score for inst in masks}
    scores_path_for(path).write_text(json.dumps(scores, indent=2, sort_keys=True) + "\n")


def majority_filter(mask: np.ndarray, kernel: int) -> np.ndarray:
    """Boolean median over a ``kernel`` x ``kernel`` window; outside the image counts as false."""
    mask = np.asarray(mask, dtype=bool)
    if kernel == 1:
        return mask.copy()
    counts = ndimage.convolve(mask.astype(np.int32), np.ones((kernel, kernel), dtype=np.int32),
                              mode="constant", cval=0)
    return counts > (kernel * kernel) // 2


def remove_noise(instances: InstanceMaskSet, reg: RegisteredPair,
                 cfg: SegmenterConfig) -> InstanceMaskSet:
    """Drop low-NDVI pixels from each instance, then median-smooth its mask."""
    if (instances.height, instances.width) != reg.shape:
        raise ValidationError(
            f"instance masks are {instances.width}x{instances.height}, registered frame is "
            f"{reg.shape[1]}x{reg.shape[0]}"
        )
    plane = ndvi_plane(reg)
    leafy = plane.defined_mask & (plane.values >= cfg.ndvi_cutoff)
    kept = []
    for inst in instances:
        cleared = inst.mask & leafy
        smoothed = majority_filter(cleared, cfg.median_kernel)
        if smoothed.any():
            kept.append(Instance(mask=_bool_plane(smoothed), score=inst.score, label=inst.label))
    return InstanceMaskSet(width=instances.width, height=instances.height, instances=kept)


def segment(reg: RegisteredPair, cfg: SegmenterConfig,
            external: Optional[InstanceMaskSet] = None) -> InstanceMaskSet:
    """Run both stages. ``external`` supplies stage-one masks when ``cfg.mode`` is external."""
    if cfg.mode == "external":
        if external is None:
            raise ValidationError("external mode needs an externally produced InstanceMaskSet")
        proposals = external
    else:
        proposals = propose_instances_threshold(reg, cfg)
    return remove_noise(proposals, reg, cfg)
