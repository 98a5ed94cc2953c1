"""Pipeline configuration: YAML file, defaults from the field prototype."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import yaml

from .errors import ValidationError
from .inventory import DEFAULT_RADIUS_M
from .raster import DEFAULT_MAX_SKEW_S
from .registration import FIELD_PARAMS, RegistrationParams
from .segmentation import SegmenterConfig
from .stats import DEFAULT_CONDITION_ORDINAL


@dataclass(frozen=True)
class PipelineConfig:
    registration: RegistrationParams = FIELD_PARAMS
    segmenter: SegmenterConfig = SegmenterConfig()
    thermal_range: Tuple[float, float] = (-10.0, 40.0)
    correct_ndvi: bool = True
    match_radius: float = DEFAULT_RADIUS_M
    condition_ordinal: Dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_CONDITION_ORDINAL))
    alpha: float = 0.05
    max_skew: float = DEFAULT_MAX_SKEW_S
    workers: int = 1
    masks_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "condition_ordinal",
                           {str(k): float(v) for k, v in self.condition_ordinal.items()})
        object.__setattr__(self, "thermal_range", tuple(float(v) for v in self.thermal_range))
        lo, hi = self.thermal_range
        if not lo < hi:
            raise ValidationError(f"thermal range must be increasing, got {self.thermal_range}")
        if not self.match_radius > 0:
            raise ValidationError("match radius must be positive")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "registration": dataclasses.asdict(self.registration),
            "segmentation": {**dataclasses.asdict(self.segmenter), "masks_dir": self.masks_dir},
            "thermal": {"t_min": self.thermal_range[0], "t_max": self.thermal_range[1]},
            "indexes": {"correct_ndvi": self.correct_ndvi},
            "inventory": {"match_radius_m": self.match_radius},
            "stats": {"condition_ordinal": dict(self.condition_ordinal), "alpha": self.alpha},
            "capture": {"max_skew_s": self.max_skew},
            "pipeline": {"workers": self.workers},
        }

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "PipelineConfig":
        data = data or {}
        unknown = set(data) - set(cls().to_dict())
        if unknown:
            raise ValidationError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        reg = dict(data.get("registration") or {})
        seg = dict(data.get("segmentation") or {})
        masks_dir = seg.pop("masks_dir", None)
        thermal = data.get("thermal") or {}
        stats = data.get("stats") or {}
        default = cls()
        try:
            return cls(
                registration=dataclasses.replace(default.registration, **reg),
                segmenter=dataclasses.replace(default.segmenter, **seg),
                thermal_range=(float(thermal.get("t_min", default.thermal_range[0])),
                               float(thermal.get("t_max", default.thermal_range[1]))),
                correct_ndvi=bool((data.get("indexes") or {}).get("correct_ndvi", True)),
                match_radius=float((data.get("inventory") or {}).get(
                    "match_radius_m", default.match_radius)),
                condition_ordinal={str(k).lower(): float(v) for k, v in
                                   (stats.get("condition_ordinal")
                                    or default.condition_ordinal).items()},
                alpha=float(stats.get("alpha", default.alpha)),
                max_skew=float((data.get("capture") or {}).get("max_skew_s", default.max_skew)),
                workers=int((data.get("pipeline") or {}).get("workers", default.workers)),
                masks_dir=masks_dir,
            )
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from exc

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ValidationError(f"config {path} must be a mapping")
    return PipelineConfig.from_dict(data)
