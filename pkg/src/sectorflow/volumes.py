"""
Per-sector count tensors: loading, resampling, week-lag anomaly ratios and
per-bin spatial statistics.

Timestamps are local civil time on a uniform minute grid (no DST handling).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import InputError

logger = logging.getLogger(__name__)

__all__ = [
    "VolumeTensor",
    "AnomalyField",
    "MinuteStats",
    "MaxTrace",
    "ScalingFit",
    "BIN_MINUTES",
    "load_volumes",
    "write_volumes",
    "resample",
    "anomaly",
    "week_lag",
    "minute_stats",
    "ratio_of_means",
    "max_sector_trace",
    "scaling_fit",
]

BIN_MINUTES = {"minute": 1, "hour": 60, "day": 1440}
CHANNELS = ("calls", "texts")
TIME_FORMAT = "%Y-%m-%d %H:%M"


def _check_resolution(res: str) -> int:
    try:
        return BIN_MINUTES[res]
    except KeyError:
        raise InputError(f"unknown resolution {res!r}; expected one of {list(BIN_MINUTES)}") from None


@dataclass
class VolumeTensor:
    """Sectors x time-bins matrix of counts for one channel.

    ``counts`` holds integers for observed data; expected-rate tensors from
    the generator carry floats and are accepted wherever counts are.
    """

    channel: str
    resolution: str
    t0: datetime
    sector_ids: list
    counts: np.ndarray

    def __post_init__(self):
        _check_resolution(self.resolution)
        self.sector_ids = list(self.sector_ids)
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 2 or self.counts.shape[0] != len(self.sector_ids):
            raise InputError(
                f"counts shape {self.counts.shape} does not match {len(self.sector_ids)} sectors"
            )
        if len(set(self.sector_ids)) != len(self.sector_ids):
            raise InputError("duplicate sector ids")

    @property
    def n_sectors(self) -> int:
        return self.counts.shape[0]

    @property
    def n_bins(self) -> int:
        return self.counts.shape[1]

    @property
    def bin_minutes(self) -> int:
        return BIN_MINUTES[self.resolution]

    def timestamps(self) -> list:
        step = timedelta(minutes=self.bin_minutes)
        return [self.t0 + i * step for i in range(self.n_bins)]

    def bin_of(self, ts: datetime) -> int:
        delta = (ts - self.t0).total_seconds() / 60.0
        return int(np.floor(delta / self.bin_minutes))

    def index_of(self, ids: Sequence[str]) -> np.ndarray:
        pos = {s: i for i, s in enumerate(self.sector_ids)}
        try:
            return np.array([pos[s] for s in ids], dtype=int)
        except KeyError as exc:
            raise InputError(f"unknown sector id {exc.args[0]!r}") from None

    def total(self):
        return self.counts.sum()

    def window(self, start: int, stop: int) -> "VolumeTensor":
        """Sub-tensor over bins ``[start, stop)``."""
        start = max(0, start)
        stop = min(self.n_bins, stop)
        t0 = self.t0 + timedelta(minutes=start * self.bin_minutes)
        return VolumeTensor(self.channel, self.resolution, t0, self.sector_ids, self.counts[:, start:stop])

    def subset(self, ids: Sequence[str]) -> "VolumeTensor":
        return VolumeTensor(self.channel, self.resolution, self.t0, list(ids), self.counts[self.index_of(ids)])


@dataclass
class AnomalyField:
    """Ratio of each bin to the bin ``lag_bins`` earlier; ``defined`` masks k/0 cells."""

    channel: str
    resolution: str
    t0: datetime
    sector_ids: list
    ratios: np.ndarray
    defined: np.ndarray
    lag_bins: int

    @property
    def n_bins(self) -> int:
        return self.ratios.shape[1]

    @property
    def bin_minutes(self) -> int:
        return BIN_MINUTES[self.resolution]

    def bin_of(self, ts: datetime) -> int:
        return int(np.floor((ts - self.t0).total_seconds() / 60.0 / self.bin_minutes))

    def column(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        return self.ratios[:, b], self.defined[:, b]

    def scaled(self, c: float) -> "AnomalyField":
        return AnomalyField(
            self.channel, self.resolution, self.t0, self.sector_ids, self.ratios * c, self.defined, self.lag_bins
        )

    def subset(self, ids: Sequence[str]) -> "AnomalyField":
        pos = {s: i for i, s in enumerate(self.sector_ids)}
        missing = [s for s in ids if s not in pos]
        if missing:
            raise InputError(f"unknown sector ids: {missing[:10]}")
        idx = np.array([pos[s] for s in ids], dtype=int)
        return AnomalyField(
            self.channel, self.resolution, self.t0, list(ids), self.ratios[idx], self.defined[idx], self.lag_bins
        )


@dataclass
class MinuteStats:
    """Per-bin spatial mean and population standard deviation."""

    mu: np.ndarray
    sigma: np.ndarray
    defined: np.ndarray
    t0: datetime
    resolution: str
    count: np.ndarray = field(default=None, repr=False)

    @property
    def upper(self) -> np.ndarray:
        return self.mu + self.sigma

    def bin_of(self, ts: datetime) -> int:
        return int(np.floor((ts - self.t0).total_seconds() / 60.0 / BIN_MINUTES[self.resolution]))


@dataclass
class MaxTrace:
    sector_ids: list
    volumes: np.ndarray


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    r: float
    n_used: int
    n_excluded: int


# ----------------------------------------------------------------------------
# I/O


def load_volumes(
    path, sectors, start: datetime, end: datetime, resolution: str = "minute"
) -> tuple[VolumeTensor, VolumeTensor]:
    """Read ``timestamp,sector_id,calls,texts`` rows into dense tensors.

    The window is ``[start, end)``. Missing (sector, bin) pairs are zero.
    Files written at hourly or daily resolution load with the matching
    ``resolution``; timestamps must then fall on bin starts.
    Returns ``(calls, texts)``.
    """
    step = _check_resolution(resolution)
    ids = [s if isinstance(s, str) else s.sector_id for s in sectors]
    n_bins = int((end - start).total_seconds() // 60) // step
    if n_bins <= 0:
        raise InputError("empty time window")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.ParserError as exc:
        raise InputError(f"{path}: malformed CSV: {exc}") from exc
    expected = ["timestamp", "sector_id", "calls", "texts"]
    if list(df.columns) != expected:
        raise InputError(f"{path}: header must be {','.join(expected)}, got {','.join(df.columns)}")
    calls = np.zeros((len(ids), n_bins), dtype=np.int64)
    texts = np.zeros_like(calls)
    if len(df):
        lineno = np.arange(len(df)) + 2
        ts = pd.to_datetime(df["timestamp"], format=TIME_FORMAT, errors="coerce")
        bad = ts.isna().to_numpy()
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise InputError(f"{path}:{lineno[i]}: bad timestamp {df['timestamp'].iloc[i]!r}")
        counts = {}
        for ch in CHANNELS:
            raw = df[ch].str.strip()
            ok = raw.str.fullmatch(r"-?\d+").to_numpy()
            if not ok.all():
                i = int(np.flatnonzero(~ok)[0])
                raise InputError(f"{path}:{lineno[i]}: {ch} is not an integer: {df[ch].iloc[i]!r}")
            vals = raw.astype(np.int64).to_numpy()
            if (vals < 0).any():
                i = int(np.flatnonzero(vals < 0)[0])
                raise InputError(f"{path}:{lineno[i]}: negative {ch} count {vals[i]}")
            counts[ch] = vals
        pos = {s: i for i, s in enumerate(ids)}
        rows = df["sector_id"].map(pos)
        unknown = rows.isna().to_numpy()
        if unknown.any():
            names = sorted(set(df["sector_id"][unknown]))
            raise InputError(f"{path}: unknown sector ids: {', '.join(names[:20])}")
        minutes = ((ts - pd.Timestamp(start)).dt.total_seconds() // 60).astype(np.int64).to_numpy()
        if step > 1:
            off = minutes % step != 0
            if off.any():
                i = int(np.flatnonzero(off)[0])
                raise InputError(f"{path}:{lineno[i]}: timestamp not on a {resolution} boundary")
            minutes = minutes // step
        out = (minutes < 0) | (minutes >= n_bins)
        if out.any():
            i = int(np.flatnonzero(out)[0])
            raise InputError(f"{path}:{lineno[i]}: timestamp {df['timestamp'].iloc[i]} outside window")
        r = rows.astype(np.int64).to_numpy()
        np.add.at(calls, (r, minutes), counts["calls"])
        np.add.at(texts, (r, minutes), counts["texts"])
    return (
        VolumeTensor("calls", resolution, start, ids, calls),
        VolumeTensor("texts", resolution, start, ids, texts),
    )


def write_volumes(path, calls: VolumeTensor, texts: VolumeTensor) -> None:
    """Write non-zero (sector, bin) cells as ``timestamp,sector_id,calls,texts`` rows."""
    from .io import atomic_write

    if calls.sector_ids != texts.sector_ids or calls.counts.shape != texts.counts.shape:
        raise InputError("call and text tensors must share sectors and bins")
    c = np.asarray(calls.counts)
    t = np.asarray(texts.counts)
    if not (np.issubdtype(c.dtype, np.integer) and np.issubdtype(t.dtype, np.integer)):
        raise InputError("only integer count tensors can be written")
    stamps = pd.date_range(calls.t0, periods=calls.n_bins, freq=f"{calls.bin_minutes}min").strftime(TIME_FORMAT)
    stamps = np.asarray(stamps)
    ids = np.asarray(calls.sector_ids)
    with atomic_write(path) as fh:
        fh.write("timestamp,sector_id,calls,texts\n")
        # bin-major order so the file reads chronologically
        for b0 in range(0, calls.n_bins, 1440):
            b1 = min(calls.n_bins, b0 + 1440)
            cb, tb = c[:, b0:b1], t[:, b0:b1]
            bi, si = np.nonzero(((cb > 0) | (tb > 0)).T)
            if bi.size == 0:
                continue
            frame = pd.DataFrame(
                {
                    "timestamp": stamps[b0 + bi],
                    "sector_id": ids[si],
                    "calls": cb[si, bi],
                    "texts": tb[si, bi],
                }
            )
            frame.to_csv(fh, header=False, index=False, lineterminator="\n")


# ----------------------------------------------------------------------------
# aggregation


def resample(t: VolumeTensor, to: str) -> VolumeTensor:
    """Sum bins into a coarser resolution; trailing partial bins are dropped."""
    target = _check_resolution(to)
    source = t.bin_minutes
    if target <= source:
        raise InputError(f"cannot resample {t.resolution} to {to}: target must be coarser")
    factor = target // source
    start_minute = t.t0.hour * 60 + t.t0.minute
    if start_minute % target:
        raise InputError(f"tensor start {t.t0} is not aligned to {to} boundaries")
    keep = (t.n_bins // factor) * factor
    dropped = t.n_bins - keep
    if dropped:
        logger.warning("resample %s->%s: dropped %d trailing %s bins", t.resolution, to, dropped, t.resolution)
    counts = t.counts[:, :keep]
    dtype = np.int64 if np.issubdtype(counts.dtype, np.integer) else np.float64
    summed = counts.reshape(t.n_sectors, keep // factor, factor).sum(axis=2, dtype=dtype)
    return VolumeTensor(t.channel, to, t.t0, t.sector_ids, summed)


def week_lag(resolution: str) -> int:
    return 7 * 1440 // _check_resolution(resolution)


def anomaly(t: VolumeTensor, lag_bins: int | None = None) -> AnomalyField:
    """Ratio of counts to counts ``lag_bins`` earlier (default: one week).

    0/0 is defined as 1; k/0 with k > 0 is undefined; the first ``lag_bins``
    columns are undefined.
    """
    lag = week_lag(t.resolution) if lag_bins is None else int(lag_bins)
    if lag < 1:
        raise InputError("lag_bins must be >= 1")
    if lag >= t.n_bins:
        raise InputError(f"lag of {lag} bins leaves no data in a {t.n_bins}-bin tensor")
    num = t.counts[:, lag:]
    den = t.counts[:, :-lag]
    ratios = np.zeros(t.counts.shape, dtype=np.float64)
    defined = np.zeros(t.counts.shape, dtype=bool)
    pos = den > 0
    np.divide(num, den, out=ratios[:, lag:], where=pos)
    both_zero = (den == 0) & (num == 0)
    ratios[:, lag:][both_zero] = 1.0
    defined[:, lag:] = pos | both_zero
    return AnomalyField(t.channel, t.resolution, t.t0, t.sector_ids, ratios, defined, lag)


def ratio_of_means(t: VolumeTensor, lag_bins: int | None = None) -> np.ndarray:
    """Spatial-sum ratio per bin (NaN where undefined); alternative to mean-of-ratios."""
    lag = week_lag(t.resolution) if lag_bins is None else int(lag_bins)
    total = t.counts.sum(axis=0, dtype=np.float64)
    out = np.full(t.n_bins, np.nan)
    den = total[:-lag]
    num = total[lag:]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1), np.where(num == 0, 1.0, np.nan))
    out[lag:] = r
    return out


def minute_stats(x, areas: np.ndarray | None = None) -> MinuteStats:
    """Spatial mean and population standard deviation per bin.

    For an :class:`AnomalyField` only defined cells enter the statistics and
    bins with no defined cell are masked. ``areas`` (km^2, aligned with the
    sector rows) switches a :class:`VolumeTensor` to density statistics.
    """
    if isinstance(x, AnomalyField):
        vals, ok = x.ratios, x.defined
    else:
        vals = np.asarray(x.counts, dtype=np.float64)
        if areas is not None:
            vals = vals / np.asarray(areas, dtype=float)[:, None]
        ok = None
    if vals.shape[0] < 2:
        raise InputError("spatial statistics need at least 2 sectors")
    if ok is None:
        n = np.full(vals.shape[1], vals.shape[0])
        mu = vals.mean(axis=0)
        sigma = np.sqrt(((vals - mu) ** 2).mean(axis=0))
        defined = np.ones(vals.shape[1], dtype=bool)
    else:
        n = ok.sum(axis=0)
        defined = n > 0
        s = np.where(ok, vals, 0.0).sum(axis=0)
        mu = np.full(vals.shape[1], np.nan)
        mu[defined] = s[defined] / n[defined]
        dev = np.where(ok, vals - np.where(defined, mu, 0.0), 0.0)
        sigma = np.full(vals.shape[1], np.nan)
        sigma[defined] = np.sqrt((dev[:, defined] ** 2).sum(axis=0) / n[defined])
    # constant bins: exact value and zero spread, free of summation rounding
    lo = np.where(ok, vals, np.inf).min(axis=0) if ok is not None else vals.min(axis=0)
    hi = np.where(ok, vals, -np.inf).max(axis=0) if ok is not None else vals.max(axis=0)
    flat = defined & (lo == hi)
    mu[flat] = lo[flat]
    sigma[flat] = 0.0
    return MinuteStats(mu, sigma, defined, x.t0, x.resolution, n)


def max_sector_trace(t: VolumeTensor) -> MaxTrace:
    """Highest-volume sector per bin; ties go to the lexicographically smallest id."""
    if t.n_sectors == 0 or t.n_bins == 0:
        raise InputError("empty tensor")
    order = sorted(range(t.n_sectors), key=lambda i: t.sector_ids[i])
    c = t.counts[order]
    best = np.argmax(c, axis=0)
    return MaxTrace([t.sector_ids[order[i]] for i in best], c[best, np.arange(t.n_bins)])


def scaling_fit(x, y) -> ScalingFit:
    """Least-squares fit of log10(y) on log10(x) over points with x, y > 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 3:
        raise InputError(f"only {int(ok.sum())} usable points; need 3")
    lx, ly = np.log10(x[ok]), np.log10(y[ok])
    dx, dy = lx - lx.mean(), ly - ly.mean()
    sxx, syy = (dx * dx).sum(), (dy * dy).sum()
    if sxx == 0:
        raise InputError("covariate has no spread")
    slope = (dx * dy).sum() / sxx
    r = (dx * dy).sum() / np.sqrt(sxx * syy) if syy > 0 else 1.0
    return ScalingFit(float(slope), float(ly.mean() - slope * lx.mean()), float(r), int(ok.sum()), int((~ok).sum()))
