from datetime import datetime, timedelta

import numpy as np
import pytest

from sectorflow.errors import ConfigError, InputError
from sectorflow.synthgen import (
    GeneratorSpec,
    gen_counts,
    gen_layout,
    gen_rates,
    ground_truth,
    inject_events,
    load_spec,
    make_quake,
    make_storm,
    read_ground_truth,
    write_ground_truth,
)
from sectorflow.volumes import anomaly

WEEKDAY = datetime(2011, 8, 17)  # Wednesday


@pytest.fixture(scope="module")
def small():
    spec = load_spec(n_towers=30, seed=99)
    return spec, gen_layout(spec)


def test_layout_counts_and_density(spec, layout):
    assert len(layout.towers) == 200
    assert len(layout.sectors) == spec.n_towers * spec.n_azimuths == 600
    assert layout.density.max() / layout.density.min() >= 1e4
    assert np.all(layout.call_base > 0) and np.all(layout.text_base > 0)


def test_layout_deterministic(small):
    spec, lay = small
    again = gen_layout(spec)
    assert [s.sector_id for s in again.sectors] == lay.sector_ids
    assert again.density.tobytes() == lay.density.tobytes()
    assert [s.area_km2 for s in again.sectors] == [s.area_km2 for s in lay.sectors]
    other = gen_layout(spec.replace(seed=100))
    assert other.density.tobytes() != lay.density.tobytes()


def test_daytime_text_call_ratio(spec, layout):
    c = gen_rates(spec, layout, WEEKDAY, 1, "hour", "calls", events=False).counts.sum(axis=0)
    t = gen_rates(spec, layout, WEEKDAY, 1, "hour", "texts", events=False).counts.sum(axis=0)
    ratio = t[9:17].sum() / c[9:17].sum()
    assert 1.8 <= ratio <= 2.2


def test_flat_profile_counts_equal_rate(small):
    spec, lay = small
    flat = spec.replace(
        call_harmonics=(0.0, 0.0), text_harmonics=(0.0, 0.0), deterministic=True, quake=False, storm=False
    )
    r = gen_rates(flat, lay, WEEKDAY, 1, "minute", "calls")
    assert np.all(r.counts == r.counts[:, :1])
    calls, _ = gen_counts(flat, lay, WEEKDAY, 1, "minute")
    assert np.array_equal(calls.counts, np.rint(r.counts).astype(np.int64))
    big = flat.replace(base_rate=100.0)
    r = gen_rates(big, lay, WEEKDAY, 1, "hour", "calls")
    calls, _ = gen_counts(big, lay, WEEKDAY, 1, "hour")
    np.testing.assert_allclose(calls.counts, r.counts, atol=0.5)


def test_zero_amplitude_quake_leaves_rates(small):
    spec, lay = small
    flat = spec.replace(quake_a_near=1.0, quake_a_far=1.0, quake_high_fraction=0.0, storm=False)
    day = datetime(2011, 8, 23)
    with_q = gen_rates(flat, lay, day, 1, "minute", "calls")
    without = gen_rates(flat, lay, day, 1, "minute", "calls", events=False)
    assert np.array_equal(with_q.counts, without.counts)


def test_peak_minute_multiplier_is_affine_in_distance(small):
    spec, lay = small
    day = datetime(2011, 8, 23)
    q = make_quake(spec, lay)
    base = gen_rates(spec, lay, day, 1, "minute", "calls", events=False)
    hit, gt = inject_events(base, quake=q)
    col = base.bin_of(spec.quake_onset + timedelta(minutes=spec.quake_call_peak_min))
    ratio = hit.counts[:, col] / base.counts[:, col]
    low = ~q.high
    d = q.distance_km[low]
    want = np.maximum(1.0, 3.0 + (1.5 - 3.0) * (d - 100.0) / 500.0)
    np.testing.assert_allclose(ratio[low], want, rtol=1e-12)
    assert np.all(ratio >= 1.0)
    assert gt.value("quake", "all", "onset") == "2011-08-23 13:51"
    # unchanged before arrival
    pre = base.bin_of(spec.quake_onset)
    assert np.array_equal(hit.counts[:, :pre], base.counts[:, :pre])


def test_storm_depth_half(spec, layout):
    s = spec.replace(storm_depth=0.5, storm_depth_jitter=0.0, storm_scatter_dex=0.0, quake=False, deterministic=True)
    storm = make_storm(s, layout)
    day = datetime(2011, 8, 27)
    with_s = gen_rates(s, layout, day, 1, "hour", "calls", storm=storm)
    without = gen_rates(s, layout, day, 1, "hour", "calls", events=False)
    coastal = [z for z, k in storm.kinds.items() if k == "coastal"]
    assert coastal
    for zid in coastal:
        rows = storm.members[zid]
        h = slice(16, 24)  # after the latest start plus the ramp
        a, b = with_s.counts[rows, h].sum(), without.counts[rows, h].sum()
        assert a == pytest.approx(0.5 * b, rel=1e-12)
    control = [z for z, k in storm.kinds.items() if k == "control"]
    for zid in control:
        rows = storm.members[zid]
        assert np.allclose(with_s.counts[rows], without.counts[rows])


def test_poisson_total_within_four_sigma(small):
    spec, lay = small
    calls, texts = gen_counts(spec, lay, WEEKDAY, 2, "hour")
    for tens, ch in ((calls, "calls"), (texts, "texts")):
        mean = gen_rates(spec, lay, WEEKDAY, 2, "hour", ch).counts.sum()
        assert abs(tens.counts.sum() - mean) <= 4 * np.sqrt(mean)


def test_event_free_deterministic_anomaly_is_one(small):
    spec, lay = small
    s = spec.replace(deterministic=True)
    calls, texts = gen_counts(s, lay, datetime(2011, 3, 7), 15, "hour", events=False)
    for t in (calls, texts):
        a = anomaly(t)
        assert np.all(a.ratios[a.defined] == 1.0)
        assert a.defined[:, 168:].all()


def test_threads_and_subwindows_identical(small):
    spec, lay = small
    a = gen_counts(spec, lay, WEEKDAY, 3, "hour", threads=1)
    b = gen_counts(spec, lay, WEEKDAY, 3, "hour", threads=3)
    for x, y in zip(a, b):
        assert x.counts.tobytes() == y.counts.tobytes()
    sub = gen_counts(spec, lay, WEEKDAY + timedelta(days=1), 1, "hour")
    for x, y in zip(a, sub):
        assert np.array_equal(x.counts[:, 24:48], y.counts)


def test_ground_truth_round_trip(tmp_path, small):
    spec, lay = small
    gt = ground_truth(spec, lay)
    write_ground_truth(tmp_path / "g.csv", gt)
    back = read_ground_truth(tmp_path / "g.csv")
    assert back.rows == gt.rows
    assert back.value("quake", "all", "call_peak_min") == "9"
    (tmp_path / "bad.csv").write_text("a,b\n")
    with pytest.raises(InputError):
        read_ground_truth(tmp_path / "bad.csv")


def test_spec_errors(tmp_path):
    with pytest.raises(ConfigError):
        GeneratorSpec(storm_depth=0.0)
    with pytest.raises(ConfigError):
        GeneratorSpec(call_weekly=(1, 1, 1, 1, 1, 1))
    with pytest.raises(ConfigError):
        GeneratorSpec(quake_call_tau_min=0)
    with pytest.raises(ConfigError):
        GeneratorSpec(storm_text_surge=0.5)
    p = tmp_path / "g.spec"
    p.write_text("seed = 1\nbogus = 2\n")
    with pytest.raises(ConfigError, match=":2: unknown key 'bogus'"):
        load_spec(p)
    p.write_text("n_towers = many\n")
    with pytest.raises(ConfigError, match=":1: n_towers"):
        load_spec(p)


def test_shipped_spec_matches_defaults():
    assert load_spec() == GeneratorSpec()


def test_rate_overflow_guard(small):
    spec, _ = small
    hot = spec.replace(base_rate=1e12)
    with pytest.raises(ConfigError, match="exceeds"):
        gen_rates(hot, gen_layout(hot), WEEKDAY, 1, "minute", "calls")


def test_span_errors(small):
    spec, lay = small
    with pytest.raises(InputError):
        gen_counts(spec, lay, WEEKDAY, 0)
    with pytest.raises(InputError):
        gen_counts(spec, lay, WEEKDAY + timedelta(hours=3), 1)
    with pytest.raises(InputError):
        inject_events(gen_rates(spec, lay, WEEKDAY, 1, "hour"))
