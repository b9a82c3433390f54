from datetime import datetime, timedelta

import numpy as np
import pytest

from sectorflow.errors import InputError
from sectorflow.geodesy import density_values
from sectorflow.volumes import (
    AnomalyField,
    VolumeTensor,
    anomaly,
    load_volumes,
    max_sector_trace,
    minute_stats,
    ratio_of_means,
    resample,
    scaling_fit,
    write_volumes,
)

T0 = datetime(2011, 8, 1)
HEADER = "timestamp,sector_id,calls,texts\n"


def _tensor(counts, res="minute", ids=None, t0=T0):
    counts = np.asarray(counts)
    ids = ids or [f"s{i}" for i in range(counts.shape[0])]
    return VolumeTensor("calls", res, t0, ids, counts)


def test_empty_file_gives_zero_tensor(tmp_path):
    p = tmp_path / "v.csv"
    p.write_text(HEADER)
    calls, texts = load_volumes(p, ["s1", "s2"], T0, T0 + timedelta(days=1))
    assert calls.counts.shape == (2, 1440)
    assert calls.counts.sum() == 0 and texts.counts.sum() == 0


def test_single_row(tmp_path):
    p = tmp_path / "v.csv"
    p.write_text(HEADER + "2011-08-01 12:00,s1,3,0\n")
    calls, _ = load_volumes(p, ["s1", "s2"], T0, T0 + timedelta(days=1))
    assert calls.counts[0, 720] == 3
    assert calls.counts.sum() == 3


@pytest.mark.parametrize(
    "row, match",
    [
        ("2011-08-01 12:00,zz,1,1", "unknown sector ids: zz"),
        ("2011-08-01 12:00,s1,-1,1", r":3: negative"),
        ("2011-08-01 12:00,s1,1.5,1", r":3: calls is not an integer"),
        ("2011-13-01 12:00,s1,1,1", r":3: bad timestamp"),
        ("2011-08-03 12:00,s1,1,1", r":3: timestamp .* outside window"),
    ],
)
def test_malformed_rows(tmp_path, row, match):
    p = tmp_path / "v.csv"
    p.write_text(HEADER + "2011-08-01 00:00,s1,1,1\n" + row + "\n")
    with pytest.raises(InputError, match=match):
        load_volumes(p, ["s1"], T0, T0 + timedelta(days=1))


def test_bad_header(tmp_path):
    p = tmp_path / "v.csv"
    p.write_text("time,sector,calls,texts\n")
    with pytest.raises(InputError, match="header"):
        load_volumes(p, ["s1"], T0, T0 + timedelta(days=1))


def test_generator_round_trip(tmp_path, spec, layout):
    from sectorflow.synthgen import gen_counts

    calls, texts = gen_counts(spec, layout, datetime(2011, 8, 23), 1, "minute")
    p = tmp_path / "v.csv"
    write_volumes(p, calls, texts)
    c2, t2 = load_volumes(p, layout.sectors, datetime(2011, 8, 23), datetime(2011, 8, 24))
    assert np.array_equal(c2.counts, calls.counts)
    assert np.array_equal(t2.counts, texts.counts)


def test_hourly_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    c = _tensor(rng.poisson(3, (4, 48)), "hour")
    t = VolumeTensor("texts", "hour", T0, c.sector_ids, rng.poisson(3, (4, 48)))
    write_volumes(tmp_path / "h.csv", c, t)
    c2, t2 = load_volumes(tmp_path / "h.csv", c.sector_ids, T0, T0 + timedelta(days=2), "hour")
    assert np.array_equal(c2.counts, c.counts) and np.array_equal(t2.counts, t.counts)


def test_resample_examples():
    ones = _tensor(np.ones((1, 1440), dtype=np.int64))
    day = resample(ones, "day")
    assert day.counts.tolist() == [[1440]]
    rng = np.random.default_rng(1)
    x = _tensor(rng.poisson(2, (5, 3 * 1440)))
    via_hour = resample(resample(x, "hour"), "day")
    direct = resample(x, "day")
    assert np.array_equal(via_hour.counts, direct.counts)
    brute = np.array([[x.counts[s, d * 1440 : (d + 1) * 1440].sum() for d in range(3)] for s in range(5)])
    assert np.array_equal(direct.counts, brute)
    assert direct.counts.dtype == np.int64


def test_resample_drops_partial_bins(caplog):
    x = _tensor(np.ones((2, 150), dtype=np.int64))
    h = resample(x, "hour")
    assert h.n_bins == 2 and h.counts.sum() == 240
    assert "dropped 30" in caplog.text


def test_resample_errors():
    x = _tensor(np.ones((1, 48), dtype=np.int64), "hour")
    with pytest.raises(InputError):
        resample(x, "minute")
    with pytest.raises(InputError):
        resample(x, "hour")
    with pytest.raises(InputError, match="aligned"):
        resample(_tensor(np.ones((1, 48), dtype=np.int64), "hour", t0=datetime(2011, 8, 1, 3)), "day")


def test_anomaly_examples():
    x = _tensor([[7, 0, 3, 5, 7, 0, 6, 0]])
    a = anomaly(x, 4)
    assert not a.defined[0, :4].any()
    assert a.ratios[0, 4] == 1.0 and a.defined[0, 4]  # 7 / 7
    assert a.ratios[0, 5] == 1.0 and a.defined[0, 5]  # 0 / 0
    assert a.ratios[0, 6] == 2.0  # 6 / 3
    assert a.ratios[0, 7] == 0.0 and a.defined[0, 7]  # 0 / 5


def test_anomaly_masks_k_over_zero():
    a = anomaly(_tensor([[0, 4]]), 1)
    assert not a.defined[0, 1]


def test_anomaly_default_lag_and_errors():
    x = _tensor(np.ones((2, 24 * 8), dtype=int), "hour")
    assert anomaly(x).lag_bins == 168
    with pytest.raises(InputError):
        anomaly(x, 24 * 8)
    with pytest.raises(InputError):
        anomaly(x, 0)


def test_periodic_tensor_anomaly_is_one():
    rng = np.random.default_rng(2)
    week = rng.poisson(5, (6, 168))
    x = _tensor(np.tile(week, 3), "hour")
    a = anomaly(x)
    assert np.all(a.ratios[a.defined] == 1.0)
    assert a.defined[:, 168:].all()


def test_ratio_of_means():
    x = _tensor([[1, 2, 2, 4], [1, 0, 2, 0]])
    r = ratio_of_means(x, 2)
    assert np.isnan(r[:2]).all()
    assert r[2] == 2.0 and r[3] == 2.0


def test_minute_stats_examples():
    s = minute_stats(_tensor([[1], [3]]))
    assert s.mu[0] == 2.0 and s.sigma[0] == 1.0
    s = minute_stats(_tensor(np.full((4, 3), 5)))
    assert np.all(s.sigma == 0) and np.all(s.mu == 5)
    with pytest.raises(InputError):
        minute_stats(_tensor([[1, 2]]))


def test_minute_stats_skips_undefined():
    ratios = np.array([[2.0, 1.0], [4.0, 9.0], [100.0, 1.0]])
    defined = np.array([[True, False], [True, False], [False, False]])
    a = AnomalyField("calls", "minute", T0, ["a", "b", "c"], ratios, defined, 1)
    s = minute_stats(a)
    assert s.mu[0] == 3.0 and s.sigma[0] == 1.0 and s.count[0] == 2
    assert not s.defined[1] and np.isnan(s.mu[1])


def test_density_statistics(layout):
    rng = np.random.default_rng(3)
    x = VolumeTensor("calls", "hour", T0, layout.sector_ids, rng.poisson(50, (len(layout.sectors), 5)))
    areas = layout.areas
    s = minute_stats(x, areas)
    want = density_values(x.counts, layout.sectors, layout.sector_ids).mean(axis=0)
    np.testing.assert_allclose(s.mu, want, rtol=1e-12)


def test_max_sector_trace():
    one = max_sector_trace(_tensor([[1, 5, 2]], ids=["only"]))
    assert one.sector_ids == ["only"] * 3
    tie = max_sector_trace(_tensor([[3, 1], [3, 2]], ids=["s2", "s1"]))
    assert tie.sector_ids == ["s1", "s1"]
    assert tie.volumes.tolist() == [3, 2]
    rng = np.random.default_rng(4)
    c = rng.integers(0, 5, (8, 50))
    ids = [f"x{i}" for i in range(8)]
    tr = max_sector_trace(_tensor(c, ids=ids))
    for b in range(50):
        best = max(range(8), key=lambda i: (c[i, b], -i))
        assert tr.sector_ids[b] == ids[best]


def test_scaling_fit_examples():
    x = np.logspace(0, 4, 30)
    f = scaling_fit(x, x)
    assert f.slope == pytest.approx(1.0) and f.r == pytest.approx(1.0)
    f = scaling_fit(x, 100 * x**0.9)
    assert f.slope == pytest.approx(0.9) and f.intercept == pytest.approx(2.0)
    f = scaling_fit([0, 1, 2, 3], [1, 1, 2, 3])
    assert f.n_excluded == 1 and f.n_used == 3
    with pytest.raises(InputError):
        scaling_fit([1, 2], [1, 2])


def test_scaling_on_generator(spec, layout):
    from sectorflow.synthgen import gen_counts

    calls, _ = gen_counts(spec, layout, datetime(2011, 8, 1), 7, "hour")
    dens = density_values(calls.counts.sum(axis=1), layout.sectors, calls.sector_ids)
    f = scaling_fit(layout.density, dens)
    assert 0.9 <= f.slope <= 1.1
