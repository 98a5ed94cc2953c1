import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from greenscan.errors import SchemaError, ValidationError
from greenscan.inventory import (EARTH_RADIUS_M, INVENTORY_COLUMNS, IndexRow, InventoryRecord,
                                 haversine_m, join_results, load_inventory, match_capture)

BASE_LAT, BASE_LON = 42.3601, -71.0942

ROWS = [
    dict(tree_id="T1", species="Red Pine", condition="good", remote_ndvi=0.41,
         canopy_area_m2=22.5, latitude=42.3601, longitude=-71.0942),
    dict(tree_id="T2", species="Eastern White Pine", condition="fair", remote_ndvi=0.46,
         canopy_area_m2=30.0, latitude=42.3605, longitude=-71.0950),
    dict(tree_id="T3", species="Red Pine", condition="Poor", remote_ndvi=0.28,
         canopy_area_m2=12.0, latitude=42.3610, longitude=-71.0930),
]


def offset(lat, lon, north_m=0.0, east_m=0.0):
    """Point displaced by a small local offset on the sphere."""
    dlat = math.degrees(north_m / EARTH_RADIUS_M)
    dlon = math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(lat))))
    return lat + dlat, lon + dlon


def equirectangular_m(lat1, lon1, lat2, lon2):
    x = math.radians(lon2 - lon1) * math.cos(math.radians((lat1 + lat2) / 2))
    y = math.radians(lat2 - lat1)
    return EARTH_RADIUS_M * math.hypot(x, y)


def write_csv(path, rows, columns=INVENTORY_COLUMNS):
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    return path


def write_geojson(path, rows):
    feats = [{"type": "Feature",
              "geometry": {"type": "Point", "coordinates": [r["longitude"], r["latitude"]]},
              "properties": {k: v for k, v in r.items() if k not in ("latitude", "longitude")}}
             for r in rows]
    path.write_text(json.dumps({"type": "FeatureCollection", "features": feats}))
    return path


def rec(tree_id, lat, lon, **kw):
    base = dict(species="Red Pine", condition="good", remote_ndvi=0.4, canopy_area=10.0)
    base.update(kw)
    return InventoryRecord(tree_id=tree_id, latitude=lat, longitude=lon, **base)


def index_row(cid, lat, lon, ndvi=0.3, ctd=1.0):
    return IndexRow(capture_id=cid, instance_id=1, latitude=lat, longitude=lon,
                    ndvi_corrected_mean=ndvi, ctd_c=ctd, canopy_pixel_count=100)


def test_load_csv(tmp_path):
    records = load_inventory(write_csv(tmp_path / "inv.csv", ROWS))
    assert [r.tree_id for r in records] == ["T1", "T2", "T3"]
    assert records[2].condition == "poor"
    assert records[1].canopy_area == 30.0


def test_unknown_condition_rejected(tmp_path):
    rows = ROWS + [dict(ROWS[0], tree_id="T4", condition="excellent")]
    rejects = []
    records = load_inventory(write_csv(tmp_path / "inv.csv", rows), rejects)
    assert [r.tree_id for r in records] == ["T1", "T2", "T3"]
    assert len(rejects) == 1 and rejects[0].row == 5 and "excellent" in rejects[0].reason


def test_missing_column(tmp_path):
    cols = [c for c in INVENTORY_COLUMNS if c != "remote_ndvi"]
    with pytest.raises(SchemaError, match="remote_ndvi"):
        load_inventory(write_csv(tmp_path / "inv.csv", ROWS, cols))


def test_geojson_equals_csv(tmp_path):
    a = load_inventory(write_csv(tmp_path / "inv.csv", ROWS))
    b = load_inventory(write_geojson(tmp_path / "inv.geojson", ROWS))
    assert a == b


def test_geojson_not_a_collection(tmp_path):
    path = tmp_path / "bad.geojson"
    path.write_text('{"type": "Point"}')
    with pytest.raises(SchemaError):
        load_inventory(path)


def test_record_invariants():
    with pytest.raises(ValidationError):
        rec("x", 0, 0, canopy_area=-1.0)
    with pytest.raises(ValidationError):
        rec("x", 0, 0, condition="dead")


def test_exact_location_match():
    inv = [rec("A", BASE_LAT, BASE_LON), rec("B", *offset(BASE_LAT, BASE_LON, 5, 5))]
    found, dist = match_capture(BASE_LAT, BASE_LON, inv, 25)
    assert found.tree_id == "A" and dist == 0.0


def test_radius_cutoff():
    inv = [rec("A", *offset(BASE_LAT, BASE_LON, north_m=30))]
    assert match_capture(BASE_LAT, BASE_LON, inv, 25) == (None, None)
    assert match_capture(BASE_LAT, BASE_LON, inv, 35)[0].tree_id == "A"


def test_nearest_wins():
    inv = [rec("far", *offset(BASE_LAT, BASE_LON, east_m=12)),
           rec("near", *offset(BASE_LAT, BASE_LON, north_m=-10))]
    found, dist = match_capture(BASE_LAT, BASE_LON, inv, 25)
    assert found.tree_id == "near"
    assert dist == pytest.approx(10.0, abs=1e-6)


def test_equal_distance_tie_uses_tree_id():
    p = offset(BASE_LAT, BASE_LON, north_m=8)
    inv = [rec("Z", *p), rec("M", *p)]
    assert match_capture(BASE_LAT, BASE_LON, inv, 25)[0].tree_id == "M"


def test_radius_must_be_positive():
    with pytest.raises(ValidationError):
        match_capture(0, 0, [], 0)


@settings(max_examples=200, deadline=None)
@given(lat=st.floats(-70, 70), lon=st.floats(-179, 179), bearing=st.floats(0, 2 * math.pi),
       dist=st.floats(0.5, 999))
def test_haversine_against_reference(lat, lon, bearing, dist):
    lat2, lon2 = offset(lat, lon, dist * math.cos(bearing), dist * math.sin(bearing))
    h = haversine_m(lat, lon, lat2, lon2)
    ref = equirectangular_m(lat, lon, lat2, lon2)
    assert abs(h - ref) <= 0.005 * ref
    assert h == pytest.approx(haversine_m(lat2, lon2, lat, lon), rel=1e-12)
    assert haversine_m(lat, lon, lat, lon) == 0.0


def test_haversine_known_distance():
    # one degree of latitude on the mean-radius sphere
    assert haversine_m(0, 0, 1, 0) == pytest.approx(EARTH_RADIUS_M * math.pi / 180, rel=1e-12)


def test_join_forty_trees(rng):
    inv, rows = [], []
    for k in range(40):
        lat, lon = offset(BASE_LAT, BASE_LON, north_m=100 * (k // 8), east_m=100 * (k % 8))
        inv.append(rec(f"T{k:02d}", lat, lon))
        jitter = rng.uniform(-8, 8, size=2)
        rows.append(index_row(f"c{k:02d}", *offset(lat, lon, *jitter)))
    joined = join_results(rows, inv, 25)
    assert len(joined) == 40
    assert [j.tree_id for j in joined] == [f"T{k:02d}" for k in range(40)]
    assert not any(j.duplicate for j in joined)
    assert all(j.match_distance <= 25 for j in joined)


def test_join_keeps_unmatched_and_flags_duplicates():
    inv = [rec("A", BASE_LAT, BASE_LON)]
    rows = [index_row("c1", *offset(BASE_LAT, BASE_LON, 3, 0), ndvi=0.5),
            index_row("c2", *offset(BASE_LAT, BASE_LON, -4, 2)),
            index_row("c3", *offset(BASE_LAT, BASE_LON, 500, 0))]
    joined = join_results(rows, inv, 25)
    assert [j.tree_id for j in joined] == ["A", "A", None]
    assert [j.duplicate for j in joined] == [True, True, False]
    assert joined[2].match_distance is None
    assert joined[0].measured_ndvi == 0.5 and joined[0].measured_ctd == 1.0


def test_join_is_deterministic(rng):
    inv = [rec(f"T{k}", *offset(BASE_LAT, BASE_LON, *rng.uniform(-50, 50, 2))) for k in range(20)]
    rows = [index_row(f"c{k}", *offset(BASE_LAT, BASE_LON, *rng.uniform(-60, 60, 2)))
            for k in range(30)]
    assert join_results(rows, inv) == join_results(rows, inv)
    assert np.all([j.match_distance <= 25 for j in join_results(rows, inv) if j.tree_id])
