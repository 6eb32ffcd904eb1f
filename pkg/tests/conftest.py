"""Shared, session-scoped families, models and maps.

Builds are deterministic and moderately expensive (seconds each), so each
is made once per session.  Wall times are kept in ``BUILD_SECONDS`` so the
acceptance checks can charge them against their time budgets.
"""

import time

import numpy as np
import pytest

from orbitmaps import dynamics as dyn
from orbitmaps import famap, families, prm

MU = dyn.MU_EARTH_MOON
BUILD_SECONDS: dict[str, float] = {}
ACCEPTANCE_LINES: list[str] = []


def timed(name, fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    BUILD_SECONDS[name] = time.perf_counter() - t0
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# -- families --------------------------------------------------------------

@pytest.fixture(scope="session")
def l1_table():
    return timed("l1_table", families.planar_family, "L1", MU, ds=1e-3, count=200)


@pytest.fixture(scope="session")
def l2_table():
    return timed("l2_table", families.planar_family, "L2", MU, ds=1e-3, count=200)


@pytest.fixture(scope="session")
def l1_halo():
    return timed("l1_halo", families.halo_family, "L1", MU, ds=1e-2, count=200)


@pytest.fixture(scope="session")
def l2_halo():
    return timed("l2_halo", families.halo_family, "L2", MU, ds=1e-2, count=200)


@pytest.fixture(scope="session")
def l1_dense():
    return timed("l1_dense", families.planar_family, "L1", MU, ds=5e-4, count=1000)


@pytest.fixture(scope="session")
def l2_dense():
    return timed("l2_dense", families.planar_family, "L2", MU, ds=5e-4, count=1000)


# -- models ---------------------------------------------------------------

@pytest.fixture(scope="session")
def l1_model(l1_dense):
    return timed("l1_model", prm.fit_global, l1_dense, 8, 30)


@pytest.fixture(scope="session")
def l2_model(l2_dense):
    return timed("l2_model", prm.fit_global, l2_dense, 8, 30)


# -- maps (operating point = mean kappa of the middle region) ---------------

def middle_op(model):
    return model.regions[len(model.regions) // 2].op_point


@pytest.fixture(scope="session")
def l2_map(l2_model):
    return timed("l2_map", famap.build_from_prm, l2_model, middle_op(l2_model), "normalized", 5)


@pytest.fixture(scope="session")
def l2_map_time(l2_model):
    return timed("l2_map_time", famap.build_from_prm, l2_model, middle_op(l2_model), "time", 5)


@pytest.fixture(scope="session")
def l1_map(l1_model):
    return timed("l1_map", famap.build_from_prm, l1_model, middle_op(l1_model), "normalized", 5)


@pytest.fixture(scope="session")
def l1_map_time(l1_model):
    return timed("l1_map_time", famap.build_from_prm, l1_model, middle_op(l1_model), "time", 5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
