"""Randomised invariants across modules."""
from datetime import datetime

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from shapely.geometry import Polygon

from sectorflow.correlation import spatial_corr_matrix
from sectorflow.events import Zone, ZoneSeries, classify_response, divergence_detect, points_in_zone
from sectorflow.geodesy import interpolate_grid, latitude_order, latlon_to_utm, utm_to_latlon
from sectorflow.spectral import SpectralConfig, multitaper_cross, multitaper_psd
from sectorflow.tessellation import AntennaGroup, StudyArea, TowerSite, build_sectors, tower_only_tessellation
from sectorflow.volumes import AnomalyField, VolumeTensor, anomaly, minute_stats, resample

T0 = datetime(2011, 8, 1)
FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
AREA = StudyArea()


# ---------------------------------------------------------------------------
# tessellation

offsets = st.tuples(st.floats(-75_000, 75_000), st.floats(-75_000, 75_000))
azimuth_sets = st.lists(st.sampled_from([0.0, 60.0, 90.0, 120.0, 180.0, 240.0, 300.0]), min_size=1, max_size=4, unique=True)


@st.composite
def layouts(draw):
    pts = draw(st.lists(offsets, min_size=1, max_size=10))
    pts = np.array(pts)
    assume(np.all(np.hypot(pts[:, 0], pts[:, 1]) < 78_000))
    d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    np.fill_diagonal(d, np.inf)
    assume(d.min() > 200.0)
    c = AREA.center_utm
    towers, antennas = [], []
    for i, (dx, dy) in enumerate(pts):
        lat, lon = utm_to_latlon(c[0] + dx, c[1] + dy)
        towers.append(TowerSite(f"T{i}", float(lat), float(lon)))
        antennas += [AntennaGroup(f"T{i}", az) for az in draw(azimuth_sets)]
    return towers, antennas


@FAST
@given(layouts())
def test_partition_and_refinement(layout):
    towers, antennas = layout
    sectors = build_sectors(towers, antennas, AREA)
    total = sum(s.area_km2 for s in sectors)
    assert total == pytest.approx(AREA.area_km2, rel=1e-6)
    polys = [Polygon(s.polygon) for s in sectors]
    rng = np.random.default_rng(len(polys))
    for _ in range(min(30, len(polys) ** 2)):
        i, j = rng.choice(len(polys), 2, replace=len(polys) < 2)
        if i != j:
            assert polys[i].intersection(polys[j]).area / 1e6 < 1e-9
    # Each sector sits inside its tower cell relaxed by the exact bisector
    # shift: eps * (|x - p| + |x - q|) / |p - q| for every other tower q.
    eps = 1.0
    pos = {t.tower_id: np.array(latlon_to_utm(t.lat, t.lon)[:2], float) for t in towers}
    for s in sectors:
        x = s.polygon
        p = pos[s.tower_id]
        for tid, q in pos.items():
            if tid == s.tower_id:
                continue
            dpq = np.linalg.norm(p - q)
            dp, dq = np.linalg.norm(x - p, axis=1), np.linalg.norm(x - q, axis=1)
            side = (dp**2 - dq**2) / (2 * dpq)
            assert np.all(side <= eps * (dp + dq) / dpq + 1e-4)
    cells = {c.tower_id: Polygon(c.polygon) for c in tower_only_tessellation(towers, AREA)}
    assert sum(c.area for c in cells.values()) / 1e6 == pytest.approx(AREA.area_km2, rel=1e-6)
    again = build_sectors(towers, antennas, AREA)
    assert all(np.array_equal(a.polygon, b.polygon) for a, b in zip(sectors, again))


# ---------------------------------------------------------------------------
# geodesy

disc_points = st.tuples(st.floats(40.03, 41.48), st.floats(-74.94, -73.03))


@settings(max_examples=200, deadline=None)
@given(disc_points)
def test_projection_round_trip(p):
    lat, lon = p
    e, n, _ = latlon_to_utm(lat, lon)
    lat2, lon2 = utm_to_latlon(e, n)
    assert abs(lat2 - lat) < 1e-9 and abs(lon2 - lon) < 1e-9


@FAST
@given(
    st.integers(4, 40),
    st.floats(-5, 5),
    st.floats(-5, 5),
    st.floats(-100, 100),
    st.integers(0, 2**31),
)
def test_interpolation_linear_precision_and_bounds(n, a, b, c, seed):
    pts = np.random.default_rng(seed).uniform(0, 5000, (n, 2))
    assume(np.linalg.matrix_rank(pts - pts.mean(axis=0)) == 2)
    vals = a * pts[:, 0] / 1000 + b * pts[:, 1] / 1000 + c
    r = interpolate_grid(pts, vals, cell_m=250)
    ok = r.values != r.nodata
    xs, ys = r.cell_centers()
    want = a * xs / 1000 + b * ys / 1000 + c
    assert np.allclose(r.values[ok], want[ok], rtol=1e-9, atol=1e-9 * (abs(c) + 10))
    noisy = np.random.default_rng(seed + 1).normal(size=n)
    r = interpolate_grid(pts, noisy, cell_m=250)
    ok = r.values != r.nodata
    assert np.all(r.values[ok] >= noisy.min() - 1e-12) and np.all(r.values[ok] <= noisy.max() + 1e-12)


@FAST
@given(st.lists(st.floats(40.0, 41.5), min_size=1, max_size=30))
def test_latitude_order_is_a_permutation(lats):
    from collections import namedtuple

    S = namedtuple("S", "sector_id centroid_latlon")
    secs = [S(f"s{i}", (lat, -74.0)) for i, lat in enumerate(lats)]
    order = latitude_order(secs)
    assert sorted(order) == sorted(s.sector_id for s in secs)
    by_id = {s.sector_id: s for s in secs}
    assert latitude_order([by_id[i] for i in order]) == order


# ---------------------------------------------------------------------------
# volumes

counts = arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 4).map(lambda d: d * 1440)), elements=st.integers(0, 50))


@FAST
@given(counts)
def test_resample_conserves_totals(x):
    t = VolumeTensor("calls", "minute", T0, [f"s{i}" for i in range(x.shape[0])], x)
    h, d = resample(t, "hour"), resample(t, "day")
    assert np.array_equal(h.counts.sum(axis=1), x.sum(axis=1))
    assert np.array_equal(d.counts, resample(h, "day").counts)


@FAST
@given(arrays(np.int64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.integers(0, 9)), st.integers(2, 4))
def test_periodic_anomaly_is_one(period, reps):
    x = np.tile(period, reps)
    t = VolumeTensor("calls", "hour", T0, [f"s{i}" for i in range(x.shape[0])], x)
    a = anomaly(t, period.shape[1])
    assert np.all(a.ratios[a.defined] == 1.0)
    assert a.defined[:, period.shape[1] :].all()


@FAST
@given(arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(1, 5)), elements=st.floats(0, 1e6)))
def test_minute_stats_bounds(x):
    s = minute_stats(VolumeTensor("calls", "hour", T0, [f"s{i}" for i in range(x.shape[0])], x))
    tol = 1e-9 * (1 + x.max())
    assert np.all(s.mu >= x.min(axis=0) - tol) and np.all(s.mu <= x.max(axis=0) + tol)
    assert np.all(s.sigma >= 0)


@FAST
@given(st.floats(-1e3, 1e3), st.integers(2, 10), st.integers(1, 4))
def test_minute_stats_constant_field(c, n, b):
    s = minute_stats(VolumeTensor("calls", "hour", T0, [f"s{i}" for i in range(n)], np.full((n, b), c)))
    assert np.all(s.mu == c) and np.all(s.sigma == 0)


# ---------------------------------------------------------------------------
# spectral

series = arrays(np.float64, st.integers(32, 300), elements=st.floats(-100, 100))


@FAST
@given(series, series, st.sampled_from([2.0, 3.0, 4.0]))
def test_coherency_in_unit_interval(x, y, nw):
    n = min(x.size, y.size)
    c = multitaper_cross(x[:n], y[:n], SpectralConfig(nw=nw))
    assert np.all(c.coherency >= 0) and np.all(c.coherency <= 1 + 1e-12)


@FAST
@given(series, st.floats(0.1, 10), st.floats(-1e3, 1e3))
def test_psd_scaling_and_offset(x, c, k):
    assume(np.ptp(x) > 1e-3)
    cfg = SpectralConfig(adaptive=False)
    a = multitaper_psd(x, cfg).psd
    assert np.allclose(multitaper_psd(c * x, cfg).psd, c * c * a, rtol=1e-9, atol=1e-12 * c * c * a.max())
    assert np.allclose(multitaper_psd(x + k, cfg).psd, a, rtol=1e-6, atol=1e-9 * a.max())


# ---------------------------------------------------------------------------
# correlation

@FAST
@given(
    arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(2, 6)), elements=st.floats(0, 1000)),
    st.integers(0, 5),
    st.floats(0.5, 20),
    st.floats(-50, 50),
)
def test_correlation_symmetry_and_affine_rows(x, col, scale, shift):
    col = col % x.shape[1]
    ids = [f"s{i}" for i in range(x.shape[0])]
    a = spatial_corr_matrix(VolumeTensor("calls", "day", T0, ids, x)).m
    assert np.array_equal(np.isnan(a), np.isnan(a.T))
    assert np.allclose(a, a.T, equal_nan=True)
    diag = np.diag(a)
    assert np.all((diag == 1.0) | np.isnan(diag))
    y = x.copy()
    y[:, col] = scale * y[:, col] + shift
    b = spatial_corr_matrix(VolumeTensor("calls", "day", T0, ids, y)).m
    assume(np.all(np.isfinite(a[col])) and np.all(np.isfinite(b[col])))
    assert np.allclose(a[col], b[col], atol=1e-9)


# ---------------------------------------------------------------------------
# events

@FAST
@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(0, 50)), st.floats(0.01, 100))
def test_classify_scale_invariance(v, c):
    ids = [f"s{i}" for i in range(v.size)]
    ok = np.ones((v.size, 1), bool)
    a = AnomalyField("calls", "minute", T0, ids, v[:, None], ok, 1)
    b = a.scaled(c)
    assume(np.ptp(v) > 1e-6)
    mu, sd = v.mean(), v.std()
    # skip values within rounding of the thresholds
    assume(np.all(np.abs(np.abs(v - mu) - sd) > 1e-9 * (1 + abs(mu) + sd)))
    assert classify_response(b, 0) == classify_response(a, 0)


@FAST
@given(arrays(np.float64, st.integers(12, 72), elements=st.floats(0, 2) | st.just(np.nan)))
def test_divergence_none_for_symmetric_channels(x):
    z = ZoneSeries("z", [], T0, np.ones(x.size), np.ones(x.size), x, x.copy())
    assert divergence_detect(z).onset_bin is None


@FAST
@given(st.lists(st.tuples(st.floats(-1, 3), st.floats(-1, 3)), min_size=1, max_size=50), st.floats(0.1, 1.9))
def test_zone_partition(points, cut):
    left = Zone.from_lonlat("l", [(0, 0), (cut, 0), (cut, 2), (0, 2)])
    right = Zone.from_lonlat("r", [(cut, 0), (2, 0), (2, 2), (cut, 2)])
    whole = Zone.from_lonlat("w", [(0, 0), (2, 0), (2, 2), (0, 2)])
    lon, lat = np.array(points).T
    off_cut = np.abs(lon - cut) > 1e-9
    l, r, w = (points_in_zone(z, lon, lat) for z in (left, right, whole))
    assert np.array_equal((l | r)[off_cut], w[off_cut])
    assert not (l & r)[off_cut].any()
