import numpy as np
import pytest

from greenscan.raster import CaptureMeta, CapturePair, RgnImage, ThermalImage
from greenscan.registration import RegisteredPair


def make_meta(**kw):
    base = dict(timestamp=1_640_000_000.0, latitude=42.36, longitude=-71.09,
                air_temperature=20.0, device_id="test")
    base.update(kw)
    return CaptureMeta(**base)


def make_pair(red, nir, thermal=None, green=None, t_min=-10.0, t_max=40.0, **meta):
    red = np.asarray(red, dtype=np.uint8)
    nir = np.asarray(nir, dtype=np.uint8)
    green = np.zeros_like(red) if green is None else np.asarray(green, dtype=np.uint8)
    thermal = np.zeros_like(red) if thermal is None else np.asarray(thermal, dtype=np.uint8)
    return CapturePair(rgn=RgnImage(red=red, green=green, nir=nir),
                       thermal=ThermalImage(thermal, t_min, t_max), meta=make_meta(**meta))


def make_reg(red, nir, thermal=None, valid=None, **kw):
    pair = make_pair(red, nir, thermal, **kw)
    valid = np.ones(pair.rgn.shape, dtype=bool) if valid is None else valid
    return RegisteredPair(rgn_aligned=pair.rgn, thermal=pair.thermal, valid_mask=valid,
                          meta=pair.meta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: (number, title, passed, detail)
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}: {title} ({detail})")
