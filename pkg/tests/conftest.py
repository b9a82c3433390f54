"""Shared fixtures: synthetic layouts and volume tensors are built once per session."""
from datetime import datetime

import numpy as np
import pytest

from sectorflow.synthgen import gen_counts, gen_layout, load_spec
from sectorflow.tessellation import AntennaGroup, StudyArea, TowerSite

QUAKE_SPAN = (datetime(2011, 8, 16), 8)
YEAR_START = datetime(2011, 1, 1)


@pytest.fixture(scope="session")
def spec():
    return load_spec()


@pytest.fixture(scope="session")
def layout(spec):
    return gen_layout(spec)


@pytest.fixture(scope="session")
def year_hourly(spec, layout):
    """Synthetic 2011 at hourly resolution, both channels, events on."""
    return gen_counts(spec, layout, YEAR_START, 365, "hour")


@pytest.fixture(scope="session")
def quake_minutes(spec, layout):
    """Eight days of minute counts covering the quake and the week before it."""
    start, days = QUAKE_SPAN
    return gen_counts(spec, layout, start, days, "minute")


@pytest.fixture(scope="session")
def area():
    return StudyArea()


@pytest.fixture(scope="session")
def three_towers(area):
    """Fixed-seed three-tower layout with azimuths 0, 120 and 240 degrees."""
    rng = np.random.default_rng(7)
    c = area.center_utm
    from sectorflow.geodesy import utm_to_latlon

    towers = []
    for i in range(3):
        r = 30_000 * np.sqrt(rng.uniform())
        th = rng.uniform(0, 2 * np.pi)
        lat, lon = utm_to_latlon(c[0] + r * np.cos(th), c[1] + r * np.sin(th))
        towers.append(TowerSite(f"T{i}", float(lat), float(lon)))
    antennas = [AntennaGroup(t.tower_id, az) for t in towers for az in (0.0, 120.0, 240.0)]
    return towers, antennas


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
