import json

import numpy as np
import pytest
from PIL import Image

from greenscan.errors import BoundsError, FormatError, MetadataError, ValidationError
from greenscan.raster import (CapturePair, RgnImage, ThermalImage, load_capture, pixel_at,
                              save_capture)

from conftest import make_meta, make_pair

SIDECAR = {
    "timestamp": 1_640_000_000.0,
    "latitude": 42.36,
    "longitude": -71.09,
    "air_temperature_c": -2.5,
    "t_min_c": -10.0,
    "t_max_c": 40.0,
    "band_order": ["red", "green", "nir"],
    "device_id": "unit-1",
}


def write_triplet(tmp_path, rgn, thermal, sidecar=SIDECAR, suffix=".png"):
    rgn_path = tmp_path / f"c_rgn{suffix}"
    th_path = tmp_path / f"c_thermal{suffix}"
    meta_path = tmp_path / "c_meta.json"
    Image.fromarray(rgn).save(rgn_path)
    Image.fromarray(thermal).save(th_path)
    meta_path.write_text(json.dumps(sidecar))
    return rgn_path, th_path, meta_path


def test_load_field_resolution_capture(tmp_path):
    rgn = np.zeros((3000, 4000, 3), dtype=np.uint8)
    rgn[..., 2] = 200
    thermal = np.full((120, 160), 77, dtype=np.uint8)
    pair = load_capture(*write_triplet(tmp_path, rgn, thermal, suffix=".tif"))
    assert (pair.rgn.width, pair.rgn.height) == (4000, 3000)
    assert (pair.thermal.width, pair.thermal.height) == (160, 120)
    assert pair.meta.air_temperature == -2.5
    assert pair.thermal.t_min == -10.0 and pair.thermal.t_max == 40.0
    assert pixel_at(pair.rgn, 0, 0) == (0, 0, 200)


def test_missing_air_temperature(tmp_path):
    sidecar = {k: v for k, v in SIDECAR.items() if k != "air_temperature_c"}
    paths = write_triplet(tmp_path, np.zeros((4, 4, 3), np.uint8), np.zeros((4, 4), np.uint8),
                          sidecar)
    with pytest.raises(MetadataError, match="air_temperature"):
        load_capture(*paths)


@pytest.mark.parametrize("key", ["t_min_c", "t_max_c", "latitude", "longitude"])
def test_missing_required_fields(tmp_path, key):
    sidecar = {k: v for k, v in SIDECAR.items() if k != key}
    paths = write_triplet(tmp_path, np.zeros((4, 4, 3), np.uint8), np.zeros((4, 4), np.uint8),
                          sidecar)
    with pytest.raises(MetadataError):
        load_capture(*paths)


def test_three_channel_thermal_rejected(tmp_path):
    paths = write_triplet(tmp_path, np.zeros((4, 4, 3), np.uint8), np.zeros((4, 4, 3), np.uint8))
    with pytest.raises(FormatError):
        load_capture(*paths)


def test_corrupt_raster(tmp_path):
    paths = write_triplet(tmp_path, np.zeros((4, 4, 3), np.uint8), np.zeros((4, 4), np.uint8))
    paths[1].write_bytes(b"\x89PNG not really")
    with pytest.raises(FormatError):
        load_capture(*paths)


def test_bad_sidecar_json(tmp_path):
    paths = write_triplet(tmp_path, np.zeros((4, 4, 3), np.uint8), np.zeros((4, 4), np.uint8))
    paths[2].write_text("{not json")
    with pytest.raises(MetadataError):
        load_capture(*paths)


def test_inverted_thermal_range_is_validation_error(tmp_path):
    sidecar = dict(SIDECAR, t_min_c=40.0, t_max_c=-10.0)
    paths = write_triplet(tmp_path, np.zeros((4, 4, 3), np.uint8), np.zeros((4, 4), np.uint8),
                          sidecar)
    with pytest.raises(ValidationError):
        load_capture(*paths)


def test_band_order_from_sidecar(tmp_path):
    stack = np.zeros((2, 2, 3), np.uint8)
    stack[..., 0], stack[..., 1], stack[..., 2] = 10, 20, 30  # file order: nir, green, red
    sidecar = dict(SIDECAR, band_order=["nir", "green", "red"])
    pair = load_capture(*write_triplet(tmp_path, stack, np.zeros((2, 2), np.uint8), sidecar))
    assert pixel_at(pair.rgn, 1, 1) == (30, 20, 10)


def test_timestamp_skew():
    pair = make_pair(np.zeros((2, 2)), np.zeros((2, 2)), rgn_timestamp=10.0,
                     thermal_timestamp=11.5)
    assert pair.meta.thermal_timestamp == 11.5
    with pytest.raises(ValidationError):
        make_pair(np.zeros((2, 2)), np.zeros((2, 2)), rgn_timestamp=10.0, thermal_timestamp=12.5)


@pytest.mark.parametrize("lat,lon", [(91, 0), (-91, 0), (0, 181), (0, -180.5)])
def test_coordinate_ranges(lat, lon):
    with pytest.raises(ValidationError):
        make_meta(latitude=lat, longitude=lon)


def test_plane_invariants():
    with pytest.raises(ValidationError):
        RgnImage(red=np.zeros((2, 2)), green=np.zeros((2, 3)), nir=np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        ThermalImage(np.full((2, 2), 256), 0.0, 1.0)
    with pytest.raises(ValidationError):
        ThermalImage(np.zeros((2, 2)), 5.0, 5.0)


def test_images_are_read_only():
    img = RgnImage(red=np.zeros((2, 2)), green=np.zeros((2, 2)), nir=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        img.red[0, 0] = 1


def test_pixel_at_bounds():
    img = ThermalImage(np.full((3, 5), 7), 0.0, 1.0)
    assert pixel_at(img, 0, 0) == 7
    assert all(pixel_at(img, x, y) == 7 for y in range(3) for x in range(5))
    for x, y in [(5, 0), (0, 3), (-1, 0)]:
        with pytest.raises(BoundsError):
            pixel_at(img, x, y)


def test_pixel_at_visits_every_pixel_once(rng):
    vals = rng.integers(0, 256, (7, 11))
    img = ThermalImage(vals, 0.0, 1.0)
    seen = [pixel_at(img, x, y) for y in range(img.height) for x in range(img.width)]
    assert len(seen) == 77
    assert seen == list(vals.ravel())


@pytest.mark.parametrize("suffix", [".png", ".tif"])
def test_save_load_round_trip(tmp_path, rng, suffix):
    pair = make_pair(rng.integers(0, 256, (9, 13)), rng.integers(0, 256, (9, 13)),
                     thermal=rng.integers(0, 256, (9, 13)), green=rng.integers(0, 256, (9, 13)))
    paths = [tmp_path / f"a_rgn{suffix}", tmp_path / f"a_thermal{suffix}", tmp_path / "a_meta.json"]
    save_capture(pair, *paths)
    again = load_capture(*paths)
    assert again.rgn == pair.rgn
    assert again.thermal == pair.thermal
    assert again.meta == pair.meta
    paths2 = [tmp_path / f"b_rgn{suffix}", tmp_path / f"b_thermal{suffix}", tmp_path / "b_meta.json"]
    save_capture(again, *paths2)
    for p, q in zip(paths, paths2):
        assert p.read_bytes() == q.read_bytes()
    assert isinstance(again, CapturePair)
