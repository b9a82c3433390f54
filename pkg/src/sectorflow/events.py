"""
Event analytics for impulsive (earthquake-like) and forecast (storm-like)
disruptions: distance profiles of anomaly ratios, response classes, onset
and decay timing, zone-aggregated series and call/text divergence.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Sequence

import numpy as np

from .errors import InputError
from .geodesy import great_circle_km
from .io import atomic_write, fmt
from .volumes import AnomalyField, MinuteStats, VolumeTensor, anomaly

logger = logging.getLogger(__name__)

__all__ = [
    "QuakeScenario",
    "ResponseProfile",
    "QuakeTiming",
    "Zone",
    "ZoneSeries",
    "Divergence",
    "quake_profile",
    "classify_response",
    "quake_timing",
    "points_in_zone",
    "zone_series",
    "divergence_detect",
    "read_zones",
    "write_zones",
]

LOW, NORMAL, HIGH = "low", "normal", "high"


@dataclass(frozen=True)
class QuakeScenario:
    onset: datetime
    epicenter_lat: float
    epicenter_lon: float

    def __post_init__(self):
        if not (-90 <= self.epicenter_lat <= 90 and -180 <= self.epicenter_lon <= 180):
            raise InputError("epicenter out of range")


@dataclass
class ResponseProfile:
    edges: np.ndarray
    q10: np.ndarray
    q50: np.ndarray
    q90: np.ndarray
    n: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def to_csv(self, path) -> None:
        with atomic_write(path) as fh:
            fh.write("bin_km,q10,q50,q90,n\n")
            for c, a, b, d, k in zip(self.centers, self.q10, self.q50, self.q90, self.n):
                fh.write(f"{fmt(c)},{fmt(a)},{fmt(b)},{fmt(d)},{int(k)}\n")


@dataclass
class QuakeTiming:
    """Bin indices are into the analysed series; minutes are relative to the scenario onset."""

    onset_bin: int | None
    peak_bin: int
    recovery_bin: int | None
    onset_minute: float | None
    peak_minute: float
    recovery_minute: float | None
    decay_tau: float
    peak_value: float
    baseline_mean: float
    baseline_sigma: float
    onset_time: datetime | None = None

    def row(self) -> list:
        return [
            self.onset_time.strftime("%Y-%m-%d %H:%M") if self.onset_time else "NA",
            fmt(self.onset_minute),
            fmt(self.peak_minute),
            fmt(self.recovery_minute),
            fmt(self.decay_tau),
            fmt(self.peak_value),
            fmt(self.baseline_mean),
            fmt(self.baseline_sigma),
        ]


TIMING_HEADER = ["channel", "onset_time", "onset_min", "peak_min", "recovery_min", "decay_tau_min", "peak_mu", "pre_mean", "pre_sigma"]


@dataclass
class Zone:
    """Polygonal zone in WGS84; each part is ``(exterior, holes)`` with (lon, lat) rows."""

    zone_id: str
    parts: list

    @classmethod
    def from_lonlat(cls, zone_id: str, ring) -> "Zone":
        return cls(zone_id, [(np.asarray(ring, dtype=float), [])])


@dataclass
class ZoneSeries:
    zone_id: str
    members: list
    t0: datetime
    calls: np.ndarray
    texts: np.ndarray
    call_anomaly: np.ndarray  # NaN where undefined
    text_anomaly: np.ndarray
    empty: bool = False

    @property
    def n_bins(self) -> int:
        return len(self.calls)


@dataclass
class Divergence:
    zone_id: str
    onset_bin: int | None
    onset_time: datetime | None
    call_slope: float
    text_slope: float
    details: dict = field(default_factory=dict, repr=False)


# ----------------------------------------------------------------------------
# earthquake


def _column(a: AnomalyField, when) -> int:
    if isinstance(when, datetime):
        b = a.bin_of(when)
    else:
        b = int(when)
    if not 0 <= b < a.n_bins:
        raise InputError(f"bin {b} outside anomaly field of {a.n_bins} bins")
    return b


def sector_distances(sectors, ids: Sequence[str], lat: float, lon: float) -> np.ndarray:
    geo = {s.sector_id: s.centroid_latlon for s in sectors}
    missing = [i for i in ids if i not in geo]
    if missing:
        raise InputError(f"no geometry for sectors {missing[:10]}")
    c = np.array([geo[i] for i in ids])
    return np.asarray(great_circle_km(c[:, 0], c[:, 1], lat, lon), dtype=float)


def quake_profile(
    a: AnomalyField,
    sectors,
    scenario: QuakeScenario,
    when=None,
    bin_km: float = 25.0,
) -> ResponseProfile:
    """Quantiles (10/50/90 %) of anomaly ratios in equal-width distance bins.

    ``when`` selects the column (timestamp or index); the scenario onset is
    used by default. Distances are great-circle km from sector centroid to
    the epicenter; bin edges are multiples of ``bin_km``.
    """
    if bin_km <= 0:
        raise InputError("bin_km must be positive")
    b = _column(a, scenario.onset if when is None else when)
    vals, ok = a.column(b)
    if ok.sum() < 10:
        raise InputError(f"only {int(ok.sum())} defined sectors; need 10")
    d = sector_distances(sectors, a.sector_ids, scenario.epicenter_lat, scenario.epicenter_lon)
    d, vals = d[ok], vals[ok]
    lo = np.floor(d.min() / bin_km) * bin_km
    hi = (np.floor(d.max() / bin_km) + 1) * bin_km
    edges = np.arange(lo, hi + bin_km / 2, bin_km)
    idx = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, len(edges) - 2)
    nb = len(edges) - 1
    q = np.full((3, nb), np.nan)
    n = np.bincount(idx, minlength=nb)
    for k in range(nb):
        if n[k]:
            q[:, k] = np.quantile(vals[idx == k], [0.1, 0.5, 0.9])
    if (n == 0).any():
        logger.info("quake profile: %d empty distance bins", int((n == 0).sum()))
    return ResponseProfile(edges, q[0], q[1], q[2], n)


def classify_response(a: AnomalyField, when) -> list:
    """Label each sector low / normal / high against the spatial mean +- one sigma.

    Sectors with an undefined ratio get ``None``.
    """
    b = _column(a, when)
    vals, ok = a.column(b)
    if not ok.any():
        raise InputError(f"no defined anomalies at bin {b}")
    mu = vals[ok].mean()
    sigma = vals[ok].std()
    labels = []
    for v, good in zip(vals, ok):
        if not good:
            labels.append(None)
        elif sigma > 0 and v > mu + sigma:
            labels.append(HIGH)
        elif sigma > 0 and v < mu - sigma:
            labels.append(LOW)
        else:
            labels.append(NORMAL)
    return labels


def quake_timing(
    stats: MinuteStats,
    scenario: QuakeScenario,
    window_min: int = 180,
    onset_sigma: float = 5.0,
    recovery_sigma: float = 2.0,
) -> QuakeTiming:
    """Onset, peak, recovery and decay constant of the spatial-mean anomaly.

    The baseline is the ``window_min`` minutes before the scenario onset.
    Onset is the first minute from the scenario onset on where ``mu`` exceeds
    the baseline mean by ``onset_sigma`` baseline sigma; the peak is the
    maximum of ``mu`` in the ``window_min`` minutes after onset; recovery is
    the first post-peak minute back within ``recovery_sigma``. ``decay_tau`` (minutes) comes from
    a least-squares line through ``log(mu - 1)`` from the peak up to the
    recovery minute.
    """
    if stats.resolution != "minute":
        raise InputError("quake timing needs minute resolution")
    mu = np.where(stats.defined, stats.mu, np.nan)
    t_on = stats.bin_of(scenario.onset)
    if t_on - window_min < 0 or t_on + window_min > len(mu):
        raise InputError(f"series must span onset +- {window_min} minutes")
    pre = mu[t_on - window_min : t_on]
    pre = pre[np.isfinite(pre)]
    if pre.size < 2:
        raise InputError("baseline window has no defined minutes")
    base, sd = float(pre.mean()), float(pre.std())

    post = mu[t_on : t_on + window_min]
    above = np.flatnonzero(np.nan_to_num(post, nan=-np.inf) > base + onset_sigma * sd)
    onset = int(above[0]) + t_on if above.size else None
    peak = int(np.nanargmax(post)) + t_on
    tail = mu[peak + 1 :]
    back = np.flatnonzero(np.nan_to_num(tail, nan=np.inf) <= base + recovery_sigma * sd)
    recovery = peak + 1 + int(back[0]) if back.size else None

    stop = recovery if recovery is not None else len(mu)
    seg = mu[peak:stop]
    tt = np.arange(seg.size, dtype=float)
    good = np.isfinite(seg) & (seg > 1.0)
    tau = float("nan")
    if good.sum() >= 3:
        slope = np.polyfit(tt[good], np.log(seg[good] - 1.0), 1)[0]
        if slope < 0:
            tau = -1.0 / slope
    offset = lambda b: None if b is None else float(b - t_on)  # noqa: E731
    return QuakeTiming(
        onset_bin=onset,
        peak_bin=peak,
        recovery_bin=recovery,
        onset_minute=offset(onset),
        peak_minute=float(peak - t_on),
        recovery_minute=offset(recovery),
        decay_tau=tau,
        peak_value=float(mu[peak]),
        baseline_mean=base,
        baseline_sigma=sd,
        onset_time=None if onset is None else scenario.onset + timedelta(minutes=onset - t_on),
    )


# ----------------------------------------------------------------------------
# zones


def _winding(ring: np.ndarray, pts: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Winding numbers of points about a closed ring, plus an on-boundary flag."""
    if np.allclose(ring[0], ring[-1]):
        ring = ring[:-1]
    a = ring
    b = np.roll(ring, -1, axis=0)
    px, py = pts[:, 0:1], pts[:, 1:2]
    ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    cross = (bx - ax) * (py - ay) - (px - ax) * (by - ay)
    seg_len = np.hypot(bx - ax, by - ay)
    on_line = np.abs(cross) <= tol * np.maximum(seg_len, 1.0)
    within = (
        (px >= np.minimum(ax, bx) - tol)
        & (px <= np.maximum(ax, bx) + tol)
        & (py >= np.minimum(ay, by) - tol)
        & (py <= np.maximum(ay, by) + tol)
    )
    boundary = (on_line & within).any(axis=1)
    up = (ay <= py) & (by > py) & (cross > 0)
    down = (ay > py) & (by <= py) & (cross < 0)
    wn = up.sum(axis=1) - down.sum(axis=1)
    return wn, boundary


def points_in_zone(zone: Zone, lon, lat) -> np.ndarray:
    """Winding-number membership; boundary points count as inside."""
    pts = np.column_stack([np.atleast_1d(lon), np.atleast_1d(lat)]).astype(float)
    inside = np.zeros(len(pts), dtype=bool)
    for ext, holes in zone.parts:
        wn, edge = _winding(np.asarray(ext, float), pts)
        part = (wn != 0) | edge
        for h in holes:
            hw, hedge = _winding(np.asarray(h, float), pts)
            part &= ~((hw != 0) & ~hedge)
        inside |= part
    return inside


def zone_series(calls: VolumeTensor, texts: VolumeTensor, sectors, zones: Sequence[Zone], lag_bins: int = 168) -> list:
    """Per-zone hourly sums and week-lag anomaly ratios.

    Sectors join a zone when their centroid falls inside it. Zones without
    members yield zero series flagged ``empty``.
    """
    if calls.resolution != "hour" or texts.resolution != "hour":
        raise InputError("zone series need hourly tensors")
    if calls.sector_ids != texts.sector_ids or calls.n_bins != texts.n_bins:
        raise InputError("call and text tensors are not aligned")
    geo = {s.sector_id: s.centroid_latlon for s in sectors}
    missing = [i for i in calls.sector_ids if i not in geo]
    if missing:
        raise InputError(f"no geometry for sectors {missing[:10]}")
    cen = np.array([geo[i] for i in calls.sector_ids])
    out = []
    for z in zones:
        member = points_in_zone(z, cen[:, 1], cen[:, 0])
        rows = np.flatnonzero(member)
        c = calls.counts[rows].sum(axis=0)
        t = texts.counts[rows].sum(axis=0)
        anoms = []
        for ch, series in (("calls", c), ("texts", t)):
            zt = VolumeTensor(ch, "hour", calls.t0, [z.zone_id], series[None, :])
            af = anomaly(zt, lag_bins)
            anoms.append(np.where(af.defined[0], af.ratios[0], np.nan))
        if not rows.size:
            logger.warning("zone %s contains no sector centroid", z.zone_id)
        out.append(
            ZoneSeries(z.zone_id, [calls.sector_ids[i] for i in rows], calls.t0, c, t, anoms[0], anoms[1], not rows.size)
        )
    return out


def divergence_detect(zone: ZoneSeries, window: tuple | None = None, theta: float = 0.3, fit_hours: int = 6) -> Divergence:
    """First hour where calls drop below ``1 - theta`` while texts hold ``>= 1 - theta/2``.

    ``window`` is a ``(start, stop)`` pair of bin indices or datetimes
    (default: the whole series). Slopes (ratio per hour) are least-squares
    fits over the ``fit_hours`` hours starting at the detected onset.
    """
    n = zone.n_bins
    if window is None:
        start, stop = 0, n
    else:
        start, stop = (
            int((w - zone.t0).total_seconds() // 3600) if isinstance(w, datetime) else int(w) for w in window
        )
    start, stop = max(0, start), min(n, stop)
    if stop - start < 12:
        raise InputError("divergence window needs at least 12 hourly bins")
    ca, ta = zone.call_anomaly, zone.text_anomaly
    onset = None
    for h in range(start, stop):
        if not (np.isfinite(ca[h]) and np.isfinite(ta[h])):
            continue
        if ca[h] < 1 - theta and ta[h] >= 1 - theta / 2:
            onset = h
            break
    if onset is None:
        return Divergence(zone.zone_id, None, None, float("nan"), float("nan"))

    def slope(y):
        seg = y[onset : min(n, onset + fit_hours + 1)]
        hrs = np.arange(seg.size, dtype=float)
        ok = np.isfinite(seg)
        return float(np.polyfit(hrs[ok], seg[ok], 1)[0]) if ok.sum() >= 2 else float("nan")

    return Divergence(zone.zone_id, onset, zone.t0 + timedelta(hours=onset), slope(ca), slope(ta))


# ----------------------------------------------------------------------------
# zone files


def _shape_to_zone(zone_id: str, geom) -> Zone:
    parts = []
    polys = getattr(geom, "geoms", [geom])
    for p in polys:
        if p.geom_type != "Polygon":
            raise InputError(f"zone {zone_id}: unsupported geometry {p.geom_type}")
        parts.append((np.asarray(p.exterior.coords), [np.asarray(h.coords) for h in p.interiors]))
    return Zone(zone_id, parts)


def read_zones(path) -> list:
    """Read ``zone_id,wkt`` rows (WGS84 lon/lat polygons or multipolygons)."""
    import pandas as pd
    from shapely import wkt as shapely_wkt

    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(df.columns) != ["zone_id", "wkt"]:
        raise InputError(f"{path}: header must be zone_id,wkt")
    zones = []
    for i, (zid, text) in enumerate(zip(df["zone_id"], df["wkt"])):
        try:
            geom = shapely_wkt.loads(text)
        except Exception as exc:  # shapely raises its own error types
            raise InputError(f"{path}:{i + 2}: bad WKT for zone {zid}: {exc}") from None
        zones.append(_shape_to_zone(zid, geom))
    return zones


def write_zones(path, zones: Sequence[Zone]) -> None:
    def ring(r):
        return "(" + ", ".join("%.6f %.6f" % (x, y) for x, y in r) + ")"

    with atomic_write(path) as fh:
        fh.write("zone_id,wkt\n")
        for z in zones:
            polys = []
            for ext, holes in z.parts:
                ext = np.asarray(ext)
                if not np.allclose(ext[0], ext[-1]):
                    ext = np.vstack([ext, ext[:1]])
                polys.append("(" + ", ".join([ring(ext)] + [ring(h) for h in holes]) + ")")
            body = "POLYGON " + polys[0] if len(polys) == 1 else "MULTIPOLYGON (" + ", ".join(polys) + ")"
            fh.write(f'{z.zone_id},"{body}"\n')
