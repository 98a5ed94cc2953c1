"""Municipal tree inventory ingestion and capture-to-tree matching."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

from .errors import SchemaError, ValidationError

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_008.8
CONDITIONS = ("good", "fair", "poor")
DEFAULT_RADIUS_M = 25.0
INVENTORY_COLUMNS = ("tree_id", "species", "condition", "remote_ndvi", "canopy_area_m2",
                     "latitude", "longitude")


@dataclass(frozen=True)
class InventoryRecord:
    tree_id: str
    species: str
    condition: str
    remote_ndvi: float
    canopy_area: float
    latitude: float
    longitude: float

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValidationError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if not self.canopy_area >= 0:
            raise ValidationError(f"canopy_area must be >= 0, got {self.canopy_area}")
        if not (-90 <= self.latitude <= 90 and -180 <= self.longitude <= 180):
            raise ValidationError(f"coordinates ({self.latitude}, {self.longitude}) out of range")


@dataclass(frozen=True)
class IndexRow:
    """One per-tree output row of the processing stage."""

    capture_id: str
    instance_id: int
    latitude: float
    longitude: float
    ndvi_corrected_mean: float
    ctd_c: float
    canopy_pixel_count: int


@dataclass(frozen=True)
class TreeHealthRecord:
    capture_id: str
    instance_id: int
    measured_ndvi: float
    measured_ctd: float
    tree_id: Optional[str] = None
    match_distance: Optional[float] = None
    duplicate: bool = False


@dataclass(frozen=True)
class RejectedRow:
    row: int
    reason: str


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters on a spherical Earth."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def _record(props: dict) -> InventoryRecord:
    try:
        return InventoryRecord(
            tree_id=str(props["tree_id"]).strip(),
            species=str(props["species"]).strip(),
            condition=str(props["condition"]).strip().lower(),
            remote_ndvi=float(props["remote_ndvi"]),
            canopy_area=float(props["canopy_area_m2"]),
            latitude=float(props["latitude"]),
            longitude=float(props["longitude"]),
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc


def _rows_from_csv(path: Path):
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in INVENTORY_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        for i, row in enumerate(reader, start=2):
            yield i, row


def _rows_from_geojson(path: Path):
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    features = data.get("features") if isinstance(data, dict) else None
    if features is None:
        raise SchemaError(f"{path}: expected a GeoJSON FeatureCollection")
    needed = [c for c in INVENTORY_COLUMNS if c not in ("latitude", "longitude")]
    for i, feat in enumerate(features):
        props = dict(feat.get("properties") or {})
        missing = [c for c in needed if c not in props]
        if missing:
            raise SchemaError(f"{path}: feature {i} missing propert(ies) {', '.join(missing)}")
        geom = feat.get("geometry") or {}
        if geom.get("type") == "Point":
            lon, lat = geom["coordinates"][:2]
            props.setdefault("longitude", lon)
            props.setdefault("latitude", lat)
        if "latitude" not in props or "longitude" not in props:
            raise SchemaError(f"{path}: feature {i} has no Point geometry or coordinates")
        yield i, props


def load_inventory(path, rejects: Optional[List[RejectedRow]] = None) -> List[InventoryRecord]:
    """Load inventory rows from CSV or GeoJSON (``.geojson`` / ``.json``).

    Rows that fail validation are skipped, logged, and appended to ``rejects``
    when a list is passed.
    """
    path = Path(path)
    if path.suffix.lower() in (".geojson", ".json"):
        rows = _rows_from_geojson(path)
    else:
        rows = _rows_from_csv(path)
    records = []
    for i, props in rows:
        try:
            records.append(_record(props))
        except ValidationError as exc:
            logger.warning("%s row %s rejected: %s", path, i, exc)
            if rejects is not None:
                rejects.append(RejectedRow(row=i, reason=str(exc)))
    return records


def match_capture(latitude: float, longitude: float, inventory: Sequence[InventoryRecord],
                  radius: float = DEFAULT_RADIUS_M) -> Tuple[Optional[InventoryRecord], Optional[float]]:
    """Nearest inventory tree within ``radius`` meters, as ``(record, distance)``.

    Equal distances resolve to the smaller ``tree_id``.
    """
    if not radius > 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    best, best_key = None, None
    for rec in inventory:
        d = haversine_m(latitude, longitude, rec.latitude, rec.longitude)
        if d > radius:
            continue
        key = (d, rec.tree_id)
        if best_key is None or key < best_key:
            best, best_key = rec, key
    if best is None:
        return None, None
    return best, best_key[0]


def join_results(rows: Iterable[IndexRow], inventory: Sequence[InventoryRecord],
                 radius: float = DEFAULT_RADIUS_M) -> List[TreeHealthRecord]:
    """Attach the nearest inventory tree to every index row.

    Unmatched rows are kept with ``tree_id=None``. Rows that land on the same
    tree are all kept and marked ``duplicate``.
    """
    rows = list(rows)
    matched = []
    for row in rows:
        rec, dist = match_capture(row.latitude, row.longitude, inventory, radius)
        matched.append((row, rec, dist))
    hits = Counter(rec.tree_id for _, rec, _ in matched if rec is not None)
    out = []
    for row, rec, dist in matched:
        tree_id = rec.tree_id if rec is not None else None
        out.append(TreeHealthRecord(
            capture_id=row.capture_id,
            instance_id=row.instance_id,
            measured_ndvi=row.ndvi_corrected_mean,
            measured_ctd=row.ctd_c,
            tree_id=tree_id,
            match_distance=dist,
            duplicate=tree_id is not None and hits[tree_id] > 1,
        ))
    return out


def record_dict(rec) -> dict:
    return asdict(rec)
