import numpy as np
import pytest
from hypothesis import settings

from coastcover.raster_model import GeoTransform, ImageRaster, LabelRaster, default_scheme

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def scheme():
    return default_scheme()


@pytest.fixture
def geo():
    return GeoTransform(1000.0, 5000.0, 0.4, 0.4)


def random_labels(rng, h, w, scheme, masked_frac=0.1, geo=None):
    ids = np.array(scheme.ids + (scheme.masked_id,), dtype=np.uint8)
    p = np.full(len(ids), (1 - masked_frac) / len(scheme))
    p[-1] = masked_frac
    return LabelRaster(rng.choice(ids, size=(h, w), p=p), scheme, geo or GeoTransform())


def random_image(rng, h, w, bands=3, geo=None):
    return ImageRaster(rng.integers(0, 256, size=(h, w, bands), dtype=np.uint8),
                       geo or GeoTransform())


# Manual per-class areas (ha) of the published before/after table
MANUAL_T0 = {"sand": 70.6, "dense_vegetation": 82.1, "sparse_vegetation": 55.4,
             "oyster_raft": 10.8, "debris": 0.0}
MANUAL_T1 = {"sand": 101.9, "dense_vegetation": 39.8, "sparse_vegetation": 48.0,
             "oyster_raft": 4.9, "debris": 0.5}
VEGETATION = {"total_vegetation": ["dense_vegetation", "sparse_vegetation"]}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
