"""
Synthetic sector layouts and call/text volumes.

Rates follow an inhomogeneous Poisson model

    rate(s, t, ch) = base_ch(s) * weekly_ch(dow) * weekend_s(dow)
                     * profile_ch(daytype, minute) * events(s, t, ch)

with ``base_ch(s) = base_rate * density_s**gamma * scatter_s * area_s`` (calls;
texts carry an extra per-sector factor and a global scale fixing the
weekday daytime text/call ratio). Daily profiles are truncated Fourier
series with the same fundamental phase on every day type, so the text
fundamental lags the call fundamental by a fixed, known amount.

Counts are drawn per (channel, day, resolution) from a Philox stream keyed
on those indices, so every day regenerates identically on its own and the
output does not depend on the number of worker threads.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from importlib import resources

import numpy as np

from .config import TIME_FORMAT, load_dataclass
from .errors import ConfigError, InputError
from .events import Zone, points_in_zone
from .geodesy import great_circle_km, utm_to_latlon
from .io import atomic_write, fmt
from .tessellation import AntennaGroup, StudyArea, TowerSite, build_sectors
from .volumes import BIN_MINUTES, VolumeTensor

logger = logging.getLogger(__name__)

__all__ = [
    "GeneratorSpec",
    "QuakeInject",
    "StormInject",
    "Layout",
    "GroundTruth",
    "load_spec",
    "default_spec_path",
    "gen_layout",
    "daily_profile",
    "gen_rates",
    "gen_counts",
    "inject_events",
    "write_ground_truth",
]

MAX_RATE = 1e9
MINUTES_PER_DAY = 1440


@dataclass
class GeneratorSpec:
    """Generator parameters; every field can be set from a key=value spec file."""

    seed: int = 20110823
    # layout
    n_towers: int = 200
    n_azimuths: int = 3
    center_lat: float = 40.7580
    center_lon: float = -73.9855
    radius_km: float = 80.5
    epsilon_m: float = 1.0
    n_clusters: int = 14
    cluster_center_sd_km: float = 22.0
    cluster_spread_km: float = 4.0
    background_fraction: float = 0.3
    min_spacing_m: float = 150.0
    density_peak_dex: float = 4.6
    density_gradient_dex: float = 3.0
    density_noise_dex: float = 0.45
    business_radius_km: float = 12.0
    # rate law
    gamma: float = 1.0
    base_rate: float = 0.004
    scatter_dex: float = 0.3
    text_scatter_dex: float = 0.1
    text_ratio: float = 2.0
    call_harmonics: tuple = (0.947, 836.4, 0.0894, 346.66, 0.2407, 90.17, 0.0466, 678.82)
    text_harmonics: tuple = (0.5828, 1076.4, 0.309, 560.13, 0.0839, 272.39, 0.1056, 587.23)
    weekend_amplitude: float = 0.75
    call_weekly: tuple = (1.0, 1.02, 1.03, 1.04, 1.06, 0.8, 0.68)
    text_weekly: tuple = (1.0, 1.0, 1.01, 1.03, 1.08, 0.95, 0.85)
    weekend_business_dex: float = 0.35
    weekend_noise_dex: float = 0.08
    deterministic: bool = False
    # earthquake
    quake: bool = True
    quake_onset: datetime = datetime(2011, 8, 23, 13, 51)
    quake_lat: float = 37.936
    quake_lon: float = -77.933
    quake_arrival_min: float = 2.0
    quake_a_near: float = 3.0
    quake_d_near_km: float = 100.0
    quake_a_far: float = 1.5
    quake_d_far_km: float = 600.0
    quake_high_fraction: float = 0.4
    quake_high_mu_dex: float = 0.6
    quake_high_sd_dex: float = 0.2
    quake_d_cut_km: float = 530.0
    quake_call_peak_min: float = 9.0
    quake_call_tau_min: float = 22.0
    quake_text_peak_min: float = 24.0
    quake_text_tau_min: float = 30.0
    quake_text_gain: float = 0.4
    # storm
    storm: bool = True
    storm_landfall: datetime = datetime(2011, 8, 28, 9, 0)
    storm_start_min_hour: float = 13.0
    storm_start_max_hour: float = 14.0
    storm_ramp_min: float = 60.0
    storm_depth: float = 0.3
    storm_depth_jitter: float = 0.1
    storm_recovery_hour: float = 11.0
    storm_text_surge: float = 1.25
    storm_surge_start_hour: float = 12.0
    storm_scatter_dex: float = 0.4
    storm_scatter_start_hour: float = 6.0
    storm_scatter_end_hour: float = 24.0
    n_coastal_zones: int = 6
    zone_radius_km: float = 6.0
    storm_anomalous_zones: int = 0
    storm_anomalous_factor: float = 1.3

    def __post_init__(self):
        if self.n_towers < 1 or self.n_azimuths < 1:
            raise ConfigError("n_towers and n_azimuths must be >= 1")
        for name in ("call_harmonics", "text_harmonics"):
            h = getattr(self, name)
            if len(h) % 2 or not h:
                raise ConfigError(f"{name} needs amplitude,phase pairs")
        for name in ("call_weekly", "text_weekly"):
            w = getattr(self, name)
            if len(w) != 7 or min(w) <= 0:
                raise ConfigError(f"{name} needs 7 positive weights (Monday first)")
        if not 0 < self.storm_depth <= 1:
            raise ConfigError("storm_depth must be in (0, 1]")
        if self.storm_text_surge < 1:
            raise ConfigError("storm_text_surge must be >= 1")
        if self.quake_call_tau_min <= 0 or self.quake_text_tau_min <= 0:
            raise ConfigError("decay constants must be positive")
        if not self.quake_arrival_min < self.quake_call_peak_min:
            raise ConfigError("quake_call_peak_min must follow quake_arrival_min")
        if not self.quake_arrival_min < self.quake_text_peak_min:
            raise ConfigError("quake_text_peak_min must follow quake_arrival_min")
        if not 0 <= self.quake_high_fraction <= 1:
            raise ConfigError("quake_high_fraction must be in [0, 1]")
        if not 0 <= self.background_fraction <= 1:
            raise ConfigError("background_fraction must be in [0, 1]")

    @property
    def area(self) -> StudyArea:
        return StudyArea(self.center_lat, self.center_lon, self.radius_km)

    def replace(self, **kw) -> "GeneratorSpec":
        return dataclasses.replace(self, **kw)


def default_spec_path() -> str:
    return str(resources.files("sectorflow") / "data" / "default_generator.spec")


def load_spec(path=None, **overrides) -> GeneratorSpec:
    """Read a generator spec file (the shipped default when ``path`` is None)."""
    spec, _ = load_dataclass(GeneratorSpec, path or default_spec_path(), overrides=overrides)
    return spec


# ----------------------------------------------------------------------------
# randomness


def _rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent counter-based stream for a tuple of small non-negative indices."""
    key = 0
    for s in stream:
        key = (key * 1_000_003 + int(s) + 1) % (1 << 64)
    return np.random.Generator(np.random.Philox(key=[int(seed) % (1 << 64), key]))


# stream tags
_LAYOUT, _SECTOR_PARAMS, _QUAKE, _STORM, _ZONES, _COUNTS = range(6)
_RES_CODE = {"minute": 0, "hour": 1, "day": 2}


# ----------------------------------------------------------------------------
# layout


@dataclass
class Layout:
    """Towers, sectors and per-sector rate parameters (arrays aligned with ``sectors``)."""

    towers: list
    antennas: list
    sectors: list
    density: np.ndarray
    business: np.ndarray
    scatter: np.ndarray
    text_factor: np.ndarray
    weekend: np.ndarray
    call_base: np.ndarray
    text_base: np.ndarray
    zones: list = field(default_factory=list)
    zone_kind: dict = field(default_factory=dict)
    zone_members: dict = field(default_factory=dict)

    @property
    def sector_ids(self) -> list:
        return [s.sector_id for s in self.sectors]

    @property
    def areas(self) -> np.ndarray:
        return np.array([s.area_km2 for s in self.sectors])


def _place_towers(spec: GeneratorSpec, rng) -> np.ndarray:
    r = spec.radius_km * 1000.0
    n_bg = int(round(spec.background_fraction * spec.n_towers))
    centers = [np.zeros(2)]
    while len(centers) < spec.n_clusters:
        c = rng.normal(0, spec.cluster_center_sd_km * 1000.0, 2)
        if np.hypot(*c) < 0.85 * r:
            centers.append(c)
    centers = np.array(centers)
    # cluster weights fall off with distance from the centre
    w = np.exp(-np.hypot(centers[:, 0], centers[:, 1]) / (spec.cluster_center_sd_km * 1000.0))
    w /= w.sum()
    pts = []
    spacing = spec.min_spacing_m
    tries = 0
    while len(pts) < spec.n_towers:
        tries += 1
        if tries > 200 * spec.n_towers:
            raise ConfigError("could not place towers; lower min_spacing_m or n_towers")
        if len(pts) < n_bg:
            p = rng.uniform(-r, r, 2)
        else:
            c = centers[rng.choice(len(centers), p=w)]
            p = c + rng.normal(0, spec.cluster_spread_km * 1000.0, 2)
        if np.hypot(*p) > 0.97 * r:
            continue
        if pts and np.min(np.hypot(*(np.array(pts) - p).T)) < spacing:
            continue
        pts.append(p)
    return np.array(pts)


def gen_layout(spec: GeneratorSpec) -> Layout:
    """Clustered towers, azimuth-refined sectors and per-sector rate parameters."""
    area = spec.area
    rng = _rng(spec.seed, _LAYOUT)
    local = _place_towers(spec, rng)
    c = area.center_utm
    lat, lon = utm_to_latlon(local[:, 0] + c[0], local[:, 1] + c[1])
    towers = [TowerSite(f"T{i:04d}", round(float(a), 8), round(float(b), 8)) for i, (a, b) in enumerate(zip(lat, lon))]
    step = 360.0 / spec.n_azimuths
    antennas = []
    for t in towers:
        rot = float(rng.integers(0, max(1, int(step))))
        antennas.extend(AntennaGroup(t.tower_id, (rot + j * step) % 360.0) for j in range(spec.n_azimuths))
    sectors = build_sectors(towers, antennas, area, spec.epsilon_m)

    prng = _rng(spec.seed, _SECTOR_PARAMS)
    n = len(sectors)
    cu = np.array([s.centroid_utm for s in sectors]) - c
    r = np.hypot(cu[:, 0], cu[:, 1]) / (spec.radius_km * 1000.0)
    log_density = spec.density_peak_dex - spec.density_gradient_dex * r + prng.normal(0, spec.density_noise_dex, n)
    density = 10.0**log_density
    business = 1.0 / (1.0 + np.exp((r * spec.radius_km - spec.business_radius_km) / 4.0))
    scatter = 10.0 ** prng.normal(0, spec.scatter_dex, n)
    text_factor = 10.0 ** prng.normal(0, spec.text_scatter_dex, n)
    weekend = 10.0 ** (-spec.weekend_business_dex * business + prng.normal(0, spec.weekend_noise_dex, n))
    areas = np.array([s.area_km2 for s in sectors])
    call_base = spec.base_rate * density**spec.gamma * scatter * areas

    # global text scale: spatial-sum weekday 09-17 text/call ratio = text_ratio
    day = slice(9 * 60, 17 * 60)
    pc = daily_profile(spec.call_harmonics, 1.0)[day].mean()
    pt = daily_profile(spec.text_harmonics, 1.0)[day].mean()
    wc = np.mean(spec.call_weekly[:5])
    wt = np.mean(spec.text_weekly[:5])
    scale = spec.text_ratio * call_base.sum() * pc * wc / ((call_base * text_factor).sum() * pt * wt)
    text_base = call_base * text_factor * scale

    layout = Layout(towers, antennas, sectors, density, business, scatter, text_factor, weekend, call_base, text_base)
    if spec.storm:
        _make_zones(spec, layout)
    return layout


def _circle(lat: float, lon: float, radius_km: float, n: int = 48) -> np.ndarray:
    th = 2 * np.pi * np.arange(n + 1) / n
    dlat = radius_km / 111.195 * np.cos(th)
    dlon = radius_km / (111.195 * np.cos(np.radians(lat))) * np.sin(th)
    ring = np.column_stack([lon + dlon, lat + dlat])
    ring[-1] = ring[0]
    return ring


def _make_zones(spec: GeneratorSpec, layout: Layout) -> None:
    """Coastal evacuation zones on the southern rim plus one northern control zone."""
    rng = _rng(spec.seed, _ZONES)
    cen = np.array([s.centroid_latlon for s in layout.sectors])
    dlat = cen[:, 0] - spec.center_lat
    south = np.flatnonzero(dlat < -0.1)
    north = np.flatnonzero(dlat > 0.2)
    zones, kinds, members = [], {}, {}
    taken = np.zeros(len(cen), dtype=bool)

    def try_zone(zid, candidates, kind, want):
        order = rng.permutation(candidates)
        for i in order:
            ring = _circle(cen[i, 0], cen[i, 1], spec.zone_radius_km)
            z = Zone.from_lonlat(zid, ring)
            inside = points_in_zone(z, cen[:, 1], cen[:, 0])
            if inside.sum() >= 3 and not (inside & taken).any():
                # keep a gap so zones stay disjoint
                far = great_circle_km(cen[inside, 0], cen[inside, 1], cen[i, 0], cen[i, 1])
                if np.max(far) <= spec.zone_radius_km:
                    zones.append(z)
                    kinds[zid] = kind
                    members[zid] = [layout.sectors[j].sector_id for j in np.flatnonzero(inside)]
                    ring_all = great_circle_km(cen[:, 0], cen[:, 1], cen[i, 0], cen[i, 1])
                    taken[ring_all <= 2.2 * spec.zone_radius_km] = True
                    return True
        return False

    for k in range(spec.n_coastal_zones):
        kind = "anomalous" if k < spec.storm_anomalous_zones else "coastal"
        if not try_zone(f"coastal_{k + 1}", south, kind, 3):
            logger.warning("only %d coastal zones could be placed", k)
            break
    if not try_zone("control", north, "control", 3):
        logger.warning("no control zone could be placed")
    layout.zones, layout.zone_kind, layout.zone_members = zones, kinds, members


# ----------------------------------------------------------------------------
# profiles


def daily_profile(harmonics, amplitude: float = 1.0) -> np.ndarray:
    """``1 + amplitude * sum_k a_k cos(2 pi k (m - phi_k) / 1440)`` on the minute grid."""
    m = np.arange(MINUTES_PER_DAY, dtype=float)
    p = np.ones(MINUTES_PER_DAY)
    h = np.asarray(harmonics, dtype=float).reshape(-1, 2)
    for k, (a, phi) in enumerate(h, start=1):
        p += amplitude * a * np.cos(2 * np.pi * k * (m - phi) / MINUTES_PER_DAY)
    if p.min() <= 0:
        raise ConfigError("daily profile is not positive; reduce harmonic amplitudes")
    return p


def _profiles(spec: GeneratorSpec) -> dict:
    out = {}
    for ch, h in (("calls", spec.call_harmonics), ("texts", spec.text_harmonics)):
        out[ch] = (daily_profile(h, 1.0), daily_profile(h, spec.weekend_amplitude))
    return out


# ----------------------------------------------------------------------------
# events


@dataclass
class QuakeInject:
    onset: datetime
    lat: float
    lon: float
    arrival_min: float
    call_peak_min: float
    call_tau_min: float
    text_peak_min: float
    text_tau_min: float
    call_factor: np.ndarray  # per-sector peak multipliers
    text_factor: np.ndarray
    high: np.ndarray
    distance_km: np.ndarray
    a_params: tuple

    def a(self, d):
        """Low-response peak factor as an affine function of distance (floored at 1)."""
        a0, d0, a1, d1 = self.a_params
        return np.maximum(1.0, a0 + (a1 - a0) * (np.asarray(d, float) - d0) / (d1 - d0))

    def shape(self, t_min: np.ndarray, channel: str) -> np.ndarray:
        """Unit-peak response: zero before arrival, linear rise, exponential decay."""
        peak = self.call_peak_min if channel == "calls" else self.text_peak_min
        tau = self.call_tau_min if channel == "calls" else self.text_tau_min
        t = np.asarray(t_min, dtype=float)
        g = np.zeros_like(t)
        rise = (t >= self.arrival_min) & (t <= peak)
        g[rise] = (t[rise] - self.arrival_min) / (peak - self.arrival_min)
        fall = t > peak
        g[fall] = np.exp(-(t[fall] - peak) / tau)
        return g

    def span_minutes(self) -> float:
        return max(self.call_peak_min + 25 * self.call_tau_min, self.text_peak_min + 25 * self.text_tau_min)


@dataclass
class StormInject:
    landfall: datetime
    zone_start: dict  # zone_id -> suppression start
    zone_depth: dict
    ramp_min: float
    recovery: datetime
    members: dict  # zone_id -> sector row indices
    kinds: dict
    text_surge: float
    surge_start: datetime
    surge_end: datetime
    scatter_start: datetime
    scatter_end: datetime
    call_scatter: np.ndarray
    text_scatter: np.ndarray
    anomalous_factor: float = 1.0
    outside_zones: np.ndarray = None

    @property
    def window(self) -> tuple:
        first = min([self.scatter_start, self.surge_start] + list(self.zone_start.values()))
        return first, max(self.recovery, self.scatter_end, self.surge_end)


def make_quake(spec: GeneratorSpec, layout: Layout) -> QuakeInject:
    cen = np.array([s.centroid_latlon for s in layout.sectors])
    d = np.asarray(great_circle_km(cen[:, 0], cen[:, 1], spec.quake_lat, spec.quake_lon), float)
    q = QuakeInject(
        onset=spec.quake_onset,
        lat=spec.quake_lat,
        lon=spec.quake_lon,
        arrival_min=spec.quake_arrival_min,
        call_peak_min=spec.quake_call_peak_min,
        call_tau_min=spec.quake_call_tau_min,
        text_peak_min=spec.quake_text_peak_min,
        text_tau_min=spec.quake_text_tau_min,
        call_factor=np.ones(len(d)),
        text_factor=np.ones(len(d)),
        high=np.zeros(len(d), dtype=bool),
        distance_km=d,
        a_params=(spec.quake_a_near, spec.quake_d_near_km, spec.quake_a_far, spec.quake_d_far_km),
    )
    rng = _rng(spec.seed, _QUAKE)
    boost = 10.0 ** rng.normal(spec.quake_high_mu_dex, spec.quake_high_sd_dex, len(d))
    near = np.flatnonzero(d <= spec.quake_d_cut_km)
    n_high = int(round(spec.quake_high_fraction * near.size))
    if n_high:
        # the densest sectors inside the cutoff respond most
        order = near[np.argsort(-layout.density[near], kind="stable")]
        q.high[order[:n_high]] = True
    base = q.a(d)
    q.call_factor = np.where(q.high, base * np.maximum(boost, 1.0), base)
    q.text_factor = 1.0 + spec.quake_text_gain * (q.call_factor - 1.0)
    return q


def make_storm(spec: GeneratorSpec, layout: Layout) -> StormInject:
    rng = _rng(spec.seed, _STORM)
    day0 = datetime.combine((spec.storm_landfall - timedelta(days=1)).date(), datetime.min.time())
    ids = layout.sector_ids
    row = {s: i for i, s in enumerate(ids)}
    starts, depths, members = {}, {}, {}
    in_zone = np.zeros(len(ids), dtype=bool)
    for z in layout.zones:
        zid = z.zone_id
        rows = np.array([row[s] for s in layout.zone_members[zid]], dtype=int)
        members[zid] = rows
        in_zone[rows] = True
        h = rng.uniform(spec.storm_start_min_hour, spec.storm_start_max_hour)
        starts[zid] = day0 + timedelta(minutes=round(h * 60))
        depths[zid] = float(np.clip(spec.storm_depth + rng.uniform(-1, 1) * spec.storm_depth_jitter, 0.02, 1.0))
    n = len(ids)
    call_sc = 10.0 ** rng.normal(0, spec.storm_scatter_dex, n)
    text_sc = 10.0 ** rng.normal(0, spec.storm_scatter_dex, n)
    call_sc[in_zone] = 1.0
    text_sc[in_zone] = 1.0
    landfall_day = day0 + timedelta(days=1)
    return StormInject(
        landfall=spec.storm_landfall,
        zone_start=starts,
        zone_depth=depths,
        ramp_min=spec.storm_ramp_min,
        recovery=landfall_day + timedelta(hours=spec.storm_recovery_hour),
        members=members,
        kinds=dict(layout.zone_kind),
        text_surge=spec.storm_text_surge,
        surge_start=day0 + timedelta(hours=spec.storm_surge_start_hour),
        surge_end=landfall_day,
        scatter_start=day0 + timedelta(hours=spec.storm_scatter_start_hour),
        scatter_end=landfall_day + timedelta(hours=spec.storm_scatter_end_hour),
        call_scatter=call_sc,
        text_scatter=text_sc,
        anomalous_factor=spec.storm_anomalous_factor,
        outside_zones=~in_zone,
    )


def _minutes_between(a: datetime, b: datetime) -> float:
    return (b - a).total_seconds() / 60.0


def event_multiplier(quake, storm, channel: str, t0: datetime, n_minutes: int, n_sectors: int):
    """Multiplicative rate modification over ``n_minutes`` minutes from ``t0``.

    Returns ``(lo, hi, mult)`` with ``mult`` of shape (sectors, hi - lo) for
    the affected minute columns, or ``None`` when nothing overlaps.
    """
    spans = []
    if quake is not None:
        s = _minutes_between(t0, quake.onset)
        spans.append((s, s + quake.span_minutes()))
    if storm is not None:
        a, b = storm.window
        spans.append((_minutes_between(t0, a), _minutes_between(t0, b)))
    spans = [(max(0, math.floor(a)), min(n_minutes, math.ceil(b) + 1)) for a, b in spans]
    spans = [(a, b) for a, b in spans if b > a]
    if not spans:
        return None
    lo, hi = min(a for a, _ in spans), max(b for _, b in spans)
    t = np.arange(lo, hi, dtype=float)
    mult = np.ones((n_sectors, hi - lo))
    if quake is not None:
        rel = t - _minutes_between(t0, quake.onset)
        g = quake.shape(rel, channel)
        f = quake.call_factor if channel == "calls" else quake.text_factor
        if np.any(g):
            mult *= 1.0 + (f[:, None] - 1.0) * g[None, :]
    if storm is not None:
        rel = lambda when: t - _minutes_between(t0, when)  # noqa: E731
        if channel == "calls":
            rec = rel(storm.recovery)
            for zid, rows in storm.members.items():
                if storm.kinds.get(zid) == "control":
                    continue
                depth = storm.zone_depth[zid]
                if storm.kinds.get(zid) == "anomalous":
                    # raised earlier in the week's last day before the drop
                    pre = (rel(storm.zone_start[zid] - timedelta(hours=12)) >= 0) & (rel(storm.zone_start[zid]) < 0)
                    mult[np.ix_(rows, np.flatnonzero(pre))] *= storm.anomalous_factor
                down = np.clip(rel(storm.zone_start[zid]) / storm.ramp_min, 0.0, 1.0)
                up = np.clip(-rec / storm.ramp_min, 0.0, 1.0)
                level = 1.0 - (1.0 - depth) * np.minimum(down, up)
                mult[rows] *= level[None, :]
        else:
            surge = (rel(storm.surge_start) >= 0) & (rel(storm.surge_end) < 0)
            mult[:, surge] *= storm.text_surge
        sc = storm.call_scatter if channel == "calls" else storm.text_scatter
        on = (rel(storm.scatter_start) >= 0) & (rel(storm.scatter_end) < 0)
        mult[:, on] *= sc[:, None]
    return lo, hi, mult


# ----------------------------------------------------------------------------
# rates and counts


def _base_rates(spec, layout, channel, t0, n_minutes, prof=None):
    """Event-free per-minute rates for a span starting on a day boundary."""
    prof = prof or _profiles(spec)[channel]
    weekly = spec.call_weekly if channel == "calls" else spec.text_weekly
    base = layout.call_base if channel == "calls" else layout.text_base
    out = np.empty((len(base), n_minutes))
    for d0 in range(0, n_minutes, MINUTES_PER_DAY):
        day = t0 + timedelta(minutes=d0)
        dow = day.weekday()
        weekend = dow >= 5
        w = weekly[dow] * (layout.weekend if weekend else 1.0)
        p = prof[1] if weekend else prof[0]
        d1 = min(n_minutes, d0 + MINUTES_PER_DAY)
        out[:, d0:d1] = (base * w)[:, None] * p[None, : d1 - d0]
    return out


def _events(spec, layout, quake, storm):
    if quake is None and spec.quake:
        quake = make_quake(spec, layout)
    if storm is None and spec.storm and layout.zones:
        storm = make_storm(spec, layout)
    return quake, storm


def _check_span(start: datetime, days: int):
    if days < 1:
        raise InputError("span must cover at least one day")
    if start.hour or start.minute or start.second:
        raise InputError("span must start at midnight")


def gen_rates(
    spec: GeneratorSpec,
    layout: Layout,
    start: datetime,
    days: int,
    resolution: str = "minute",
    channel: str = "calls",
    events: bool = True,
    quake: QuakeInject | None = None,
    storm: StormInject | None = None,
) -> VolumeTensor:
    """Expected counts per bin (float tensor) for one channel."""
    _check_span(start, days)
    step = BIN_MINUTES[resolution]
    if events:
        quake, storm = _events(spec, layout, quake, storm)
    else:
        quake = storm = None
    n = len(layout.sectors)
    out = np.empty((n, days * MINUTES_PER_DAY // step))
    per_day = MINUTES_PER_DAY // step
    prof = _profiles(spec)[channel]
    for d in range(days):
        t0 = start + timedelta(days=d)
        lam = _base_rates(spec, layout, channel, t0, MINUTES_PER_DAY, prof)
        if quake is not None or storm is not None:
            em = event_multiplier(quake, storm, channel, t0, MINUTES_PER_DAY, n)
            if em is not None:
                lo, hi, mult = em
                lam[:, lo:hi] *= mult
        out[:, d * per_day : (d + 1) * per_day] = lam.reshape(n, per_day, step).sum(axis=2)
    if np.max(out) / step > MAX_RATE:
        raise ConfigError(f"expected rate exceeds {MAX_RATE:g} per minute; lower base_rate")
    return VolumeTensor(channel, resolution, start, layout.sector_ids, out)


def gen_counts(
    spec: GeneratorSpec,
    layout: Layout,
    start: datetime,
    days: int,
    resolution: str = "minute",
    threads: int = 1,
    events: bool = True,
) -> tuple[VolumeTensor, VolumeTensor]:
    """Poisson counts (or rounded expectations in deterministic mode) for both channels."""
    _check_span(start, days)
    if events:
        quake, storm = _events(spec, layout, None, None)
    else:
        quake = storm = None
    step = BIN_MINUTES[resolution]
    per_day = MINUTES_PER_DAY // step
    n = len(layout.sectors)
    day_index0 = (start - datetime(start.year, 1, 1)).days
    result = {}
    for ci, ch in enumerate(("calls", "texts")):
        counts = np.empty((n, days * per_day), dtype=np.int64)

        def run_day(d, ch=ch, ci=ci, counts=counts):
            lam = gen_rates(spec, layout, start + timedelta(days=d), 1, resolution, ch, events, quake, storm).counts
            cols = slice(d * per_day, (d + 1) * per_day)
            if spec.deterministic:
                counts[:, cols] = np.rint(lam).astype(np.int64)
            else:
                # one stream per (channel, day, resolution); sectors drawn in fixed order
                rng = _rng(spec.seed, _COUNTS, ci, start.year * 1000 + day_index0 + d, _RES_CODE[resolution])
                counts[:, cols] = rng.poisson(lam)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run_day, range(days)))
        else:
            for d in range(days):
                run_day(d)
        result[ch] = VolumeTensor(ch, resolution, start, layout.sector_ids, counts)
    return result["calls"], result["texts"]


def inject_events(rates: VolumeTensor, quake: QuakeInject | None = None, storm: StormInject | None = None):
    """Apply event multipliers to a minute-resolution rate tensor.

    Returns the modified tensor and a :class:`GroundTruth` for the events.
    """
    if rates.resolution != "minute":
        raise InputError("events are injected at minute resolution")
    em = event_multiplier(quake, storm, rates.channel, rates.t0, rates.n_bins, rates.n_sectors)
    counts = np.array(rates.counts, dtype=float)
    if em is not None:
        lo, hi, mult = em
        counts[:, lo:hi] *= mult
    gt = GroundTruth.build(rates.sector_ids, quake, storm, em is not None and quake is not None and storm is not None)
    return VolumeTensor(rates.channel, "minute", rates.t0, rates.sector_ids, counts), gt


# ----------------------------------------------------------------------------
# ground truth


@dataclass
class GroundTruth:
    rows: list

    @classmethod
    def build(cls, sector_ids, quake, storm, overlap: bool = False) -> "GroundTruth":
        rows = []
        if quake is not None:
            on = quake.onset.strftime(TIME_FORMAT)
            rows += [
                ("quake", "all", "onset", on),
                ("quake", "all", "epicenter_lat", fmt(quake.lat)),
                ("quake", "all", "epicenter_lon", fmt(quake.lon)),
                ("quake", "all", "arrival_min", fmt(quake.arrival_min)),
                ("quake", "all", "call_peak_min", fmt(quake.call_peak_min)),
                ("quake", "all", "text_peak_min", fmt(quake.text_peak_min)),
                ("quake", "all", "call_tau_min", fmt(quake.call_tau_min)),
                ("quake", "all", "text_tau_min", fmt(quake.text_tau_min)),
            ]
            for sid, fc, ft, hi, d in zip(sector_ids, quake.call_factor, quake.text_factor, quake.high, quake.distance_km):
                rows.append(("quake", sid, "call_peak_factor", fmt(fc)))
                rows.append(("quake", sid, "text_peak_factor", fmt(ft)))
                rows.append(("quake", sid, "high_response", str(int(hi))))
                rows.append(("quake", sid, "distance_km", fmt(d)))
        if storm is not None:
            rows.append(("storm", "all", "landfall", storm.landfall.strftime(TIME_FORMAT)))
            rows.append(("storm", "all", "recovery", storm.recovery.strftime(TIME_FORMAT)))
            rows.append(("storm", "all", "scatter_start", storm.scatter_start.strftime(TIME_FORMAT)))
            rows.append(("storm", "all", "scatter_end", storm.scatter_end.strftime(TIME_FORMAT)))
            rows.append(("storm", "all", "text_surge", fmt(storm.text_surge)))
            for zid in sorted(storm.members):
                rows.append(("storm", zid, "kind", storm.kinds.get(zid, "coastal")))
                rows.append(("storm", zid, "suppression_start", storm.zone_start[zid].strftime(TIME_FORMAT)))
                rows.append(("storm", zid, "depth", fmt(storm.zone_depth[zid])))
                rows.append(("storm", zid, "n_sectors", str(len(storm.members[zid]))))
        if overlap:
            rows.append(("meta", "all", "quake_storm_overlap", "1"))
        return cls(rows)

    def value(self, event: str, item: str, key: str) -> str:
        for e, i, k, v in self.rows:
            if (e, i, k) == (event, item, key):
                return v
        raise KeyError((event, item, key))


def ground_truth(spec: GeneratorSpec, layout: Layout) -> GroundTruth:
    quake, storm = _events(spec, layout, None, None)
    overlap = False
    if quake is not None and storm is not None:
        q_end = quake.onset + timedelta(minutes=quake.span_minutes())
        overlap = q_end > storm.window[0] and quake.onset < storm.window[1]
    return GroundTruth.build(layout.sector_ids, quake, storm, overlap)


def write_ground_truth(path, gt: GroundTruth) -> None:
    with atomic_write(path) as fh:
        fh.write("event,item,field,value\n")
        for row in gt.rows:
            fh.write(",".join(row) + "\n")


def read_ground_truth(path) -> GroundTruth:
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["event", "item", "field", "value"]:
            raise InputError(f"{path}: unexpected ground-truth header {header}")
        return GroundTruth([tuple(r) for r in reader])
