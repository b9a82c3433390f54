"""
Command line entry point.

Every subcommand reads a run configuration (``--config``), runs one stage of
the pipeline and writes CSV or ESRI ASCII outputs into the output directory.
Inputs that the configuration leaves unset are read from the output
directory, so ``synth`` followed by any analysis stage works out of the box.

Exit codes: 0 success, 1 input or configuration error, 2 internal error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig, parse_config
from .errors import InputError
from .io import atomic_write, fmt, write_csv

logger = logging.getLogger("sectorflow")

COMMANDS = {
    "tessellate": "build azimuth-refined sectors from towers and antennas",
    "synth": "generate a synthetic layout, volumes and ground truth",
    "aggregate": "resample minute volumes to hourly and daily totals",
    "anomaly": "week-over-week anomaly ratios per sector and bin",
    "stats": "per-bin spatial statistics and max-sector traces",
    "spectrum": "multitaper spectra of the hourly spatial totals",
    "corr": "spatial correlation matrices and disruption scores",
    "grid": "interpolated volume-density rasters",
    "tsmap": "daily time-space maps in latitude order",
    "quake": "earthquake response timing and distance profiles",
    "storm": "evacuation-zone series and call/text divergence",
}
CHANNELS = ("calls", "texts")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="run configuration file (key = value)")
    p.add_argument("--outdir", default=d, help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, default=d, help="worker threads; output does not depend on it")
    p.add_argument("--seed", type=int, default=d, help="generator seed (overrides the config)")
    p.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS if suppress else 0)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sectorflow", description="Sectorized call/text volume analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, text in COMMANDS.items():
        sp = sub.add_parser(name, help=text, description=text)
        _common(sp, suppress=True)
    return p


# ----------------------------------------------------------------------------
# shared loading


def _spec(cfg: RunConfig):
    from .synthgen import load_spec

    over = {"deterministic": cfg.deterministic or None}
    if cfg.seed:
        over["seed"] = cfg.seed
    return load_spec(cfg.generator_spec or None, **over)


def _area(cfg: RunConfig):
    from .tessellation import StudyArea

    return StudyArea(cfg.center_lat, cfg.center_lon, cfg.radius_km)


def _sectors(cfg: RunConfig):
    from .tessellation import build_sectors, read_antennas, read_towers

    cfg.require_inputs("towers", "antennas")
    towers = read_towers(cfg.input("towers"))
    antennas = read_antennas(cfg.input("antennas"))
    return build_sectors(towers, antennas, _area(cfg), cfg.epsilon_m)


def _minute_volumes(cfg: RunConfig, sectors):
    from .volumes import load_volumes

    cfg.require_inputs("volumes")
    return load_volumes(cfg.input("volumes"), sectors, cfg.start, cfg.end, "minute")


def _hourly_volumes(cfg: RunConfig, sectors):
    from .volumes import load_volumes

    cfg.require_inputs("volumes_hourly")
    return load_volumes(cfg.input("volumes_hourly"), sectors, cfg.hourly_start, cfg.hourly_end, "hour")


def _at_resolution(t, resolution):
    from .volumes import resample

    return t if t.resolution == resolution else resample(t, resolution)


# ----------------------------------------------------------------------------
# subcommands


def cmd_tessellate(cfg: RunConfig) -> None:
    from .tessellation import read_towers, tower_only_tessellation, write_sectors

    sectors = _sectors(cfg)
    write_sectors(cfg.output("sectors.csv"), sectors, cfg.output("sectors_wkt.csv"))
    cells = tower_only_tessellation(read_towers(cfg.input("towers")), _area(cfg))
    write_sectors(cfg.output("tower_cells.csv"), cells, cfg.output("tower_cells_wkt.csv"))
    ratio = np.median([s.area_km2 for s in sectors]) / np.median([c.area_km2 for c in cells])
    logger.info("%d sectors from %d towers; median area ratio %.3f", len(sectors), len(cells), ratio)


def cmd_synth(cfg: RunConfig) -> None:
    from .events import write_zones
    from .synthgen import gen_counts, gen_layout, ground_truth, write_ground_truth
    from .tessellation import write_antennas, write_towers
    from .volumes import write_volumes

    spec = _spec(cfg)
    layout = gen_layout(spec)
    write_towers(cfg.output("towers.csv"), layout.towers)
    write_antennas(cfg.output("antennas.csv"), layout.antennas)
    write_zones(cfg.output("zones.csv"), layout.zones)
    days = (cfg.end - cfg.start).days
    calls, texts = gen_counts(spec, layout, cfg.start, days, "minute", threads=cfg.threads)
    write_volumes(cfg.output("volumes.csv"), calls, texts)
    del calls, texts
    calls, texts = gen_counts(spec, layout, cfg.hourly_start, cfg.hourly_days, "hour", threads=cfg.threads)
    write_volumes(cfg.output("volumes_hourly.csv"), calls, texts)
    write_ground_truth(cfg.output("ground_truth.csv"), ground_truth(spec, layout))
    logger.info("synthetic layout: %d towers, %d sectors, %d zones", len(layout.towers), len(layout.sectors), len(layout.zones))


def cmd_aggregate(cfg: RunConfig) -> None:
    from .volumes import resample, write_volumes

    calls, texts = _minute_volumes(cfg, _sectors(cfg))
    for res in ("hour", "day"):
        write_volumes(cfg.output(f"volumes_{res}.csv"), resample(calls, res), resample(texts, res))


def cmd_anomaly(cfg: RunConfig) -> None:
    from .volumes import anomaly, week_lag

    vols = _minute_volumes(cfg, _sectors(cfg))
    for t in vols:
        t = _at_resolution(t, cfg.resolution)
        a = anomaly(t, cfg.lag_days * week_lag(cfg.resolution) // 7)
        stamps = [ts.strftime("%Y-%m-%d %H:%M") for ts in t.timestamps()]
        with atomic_write(cfg.output(f"anomaly_{t.channel}.csv")) as fh:
            fh.write("sector_id,bin,ratio,defined\n")
            for sid, ratio, ok in zip(a.sector_ids, a.ratios, a.defined):
                for b in range(a.lag_bins, a.n_bins):
                    fh.write(f"{sid},{stamps[b]},{fmt(ratio[b]) if ok[b] else 'NA'},{int(ok[b])}\n")


def cmd_stats(cfg: RunConfig) -> None:
    from .volumes import anomaly, max_sector_trace, minute_stats, week_lag

    sectors = _sectors(cfg)
    areas = {s.sector_id: s.area_km2 for s in sectors}
    for t in _minute_volumes(cfg, sectors):
        t = _at_resolution(t, cfg.resolution)
        vol = minute_stats(t)
        dens = minute_stats(t, np.array([areas[i] for i in t.sector_ids]))
        anom = minute_stats(anomaly(t, cfg.lag_days * week_lag(cfg.resolution) // 7))
        trace = max_sector_trace(t)
        stamps = [ts.strftime("%Y-%m-%d %H:%M") for ts in t.timestamps()]
        header = [
            "bin", "volume_mean", "volume_sigma", "density_mean", "density_sigma",
            "anomaly_mean", "anomaly_sigma", "anomaly_n", "max_sector", "max_volume",
        ]  # fmt: skip
        rows = (
            [
                stamps[b],
                fmt(vol.mu[b]),
                fmt(vol.sigma[b]),
                fmt(dens.mu[b]),
                fmt(dens.sigma[b]),
                fmt(anom.mu[b]) if anom.defined[b] else "NA",
                fmt(anom.sigma[b]) if anom.defined[b] else "NA",
                int(anom.count[b]),
                trace.sector_ids[b],
                fmt(trace.volumes[b]),
            ]
            for b in range(t.n_bins)
        )
        write_csv(cfg.output(f"stats_{t.channel}.csv"), header, rows)


def _spectrum_rows(freqs, *cols):
    with np.errstate(divide="ignore"):
        period = np.where(freqs > 0, 1.0 / np.where(freqs > 0, freqs, 1.0), np.inf)
    for i in range(1, freqs.size):
        yield [fmt(freqs[i]), fmt(period[i])] + [fmt(c[i]) for c in cols]


def cmd_spectrum(cfg: RunConfig) -> None:
    from .spectral import SpectralConfig, find_peak, multitaper_cross, multitaper_psd

    calls, texts = _hourly_volumes(cfg, _sectors(cfg))
    sc = SpectralConfig(nw=cfg.nw, k=cfg.k or None, adaptive=cfg.adaptive)
    series = {t.channel: np.asarray(t.counts, float).sum(axis=0) for t in (calls, texts)}
    peaks = []
    for ch, x in series.items():
        s = multitaper_psd(x, sc)
        write_csv(cfg.output(f"spectrum_{ch}.csv"), ["freq_cph", "period_h", "psd"], _spectrum_rows(s.freqs, s.psd))
        for period in (168.0, 84.0, 24.0, 12.0):
            p = find_peak(s.freqs, s.psd, 1.0 / period, int(np.ceil(cfg.nw)) + 2)
            peaks.append([ch, fmt(period), fmt(p.period), fmt(1.0 / s.freqs[p.argmax]), fmt(p.prominence)])
    cs = multitaper_cross(series["calls"], series["texts"], sc)
    write_csv(
        cfg.output("cross_spectrum.csv"),
        ["freq_cph", "period_h", "psd", "coherency", "phase"],
        _spectrum_rows(cs.freqs, np.abs(cs.csd), cs.coherency, cs.phase),
    )
    write_csv(cfg.output("spectral_peaks.csv"), ["channel", "target_h", "peak_h", "argmax_h", "prominence"], peaks)
    lag_h = cs.lag(1.0 / 24.0)
    i = int(np.argmin(np.abs(cs.freqs - 1.0 / 24.0)))
    logger.info("daily coherency %.4f, text lag %.2f h", cs.coherency[i], lag_h)


def cmd_corr(cfg: RunConfig) -> None:
    from .correlation import disruption_scores, spatial_corr_matrix

    for t in _hourly_volumes(cfg, _sectors(cfg)):
        t = _at_resolution(t, cfg.corr_resolution)
        c = spatial_corr_matrix(t, cfg.corr_transform, threads=cfg.threads)
        c.to_csv(cfg.output(f"corr_{t.channel}.csv"))
        scores = disruption_scores(c)
        write_csv(cfg.output(f"disruption_{t.channel}.csv"), ["bin", "score"], ([b, fmt(v)] for b, v in zip(c.bins, scores)))


def cmd_grid(cfg: RunConfig) -> None:
    from .geodesy import density_values, interpolate_grid, write_raster_asc

    sectors = _sectors(cfg)
    pts = np.array([s.centroid_utm for s in sectors])
    half = cfg.radius_km * 1000.0
    ce, cn = _area(cfg).center_utm
    extent = (ce - half, cn - half, ce + half, cn + half)
    for t in _minute_volumes(cfg, sectors):
        total = np.asarray(t.counts).sum(axis=1)
        dens = density_values(total, sectors, t.sector_ids)
        r = interpolate_grid(pts, dens, cfg.cell_m, extent)
        write_raster_asc(r, cfg.output(f"density_{t.channel}.asc"))


def cmd_tsmap(cfg: RunConfig) -> None:
    from .geodesy import time_space_map

    sectors = _sectors(cfg)
    for t in _hourly_volumes(cfg, sectors):
        m = time_space_map(_at_resolution(t, "day"), sectors, cfg.saturation_q)
        m.to_csv(cfg.output(f"tsmap_{t.channel}.csv"))


def cmd_quake(cfg: RunConfig) -> None:
    from .events import TIMING_HEADER, QuakeScenario, quake_profile, quake_timing
    from .volumes import anomaly, minute_stats

    sectors = _sectors(cfg)
    sc = QuakeScenario(cfg.quake_onset, cfg.epicenter_lat, cfg.epicenter_lon)
    rows = []
    for t in _minute_volumes(cfg, sectors):
        a = anomaly(t, cfg.lag_days * 1440)
        stats = minute_stats(a)
        tm = quake_timing(stats, sc, cfg.quake_window_min, cfg.onset_sigma, cfg.recovery_sigma)
        rows.append([t.channel] + tm.row())
        quake_profile(a, sectors, sc, tm.peak_bin, cfg.bin_km).to_csv(cfg.output(f"quake_profile_{t.channel}.csv"))
        lo = max(0, stats.bin_of(sc.onset) - cfg.quake_window_min)
        hi = min(a.n_bins, stats.bin_of(sc.onset) + 2 * cfg.quake_window_min)
        write_csv(
            cfg.output(f"quake_stats_{t.channel}.csv"),
            ["minute", "mean", "sigma", "upper", "n"],
            (
                [fmt(b - stats.bin_of(sc.onset)), fmt(stats.mu[b]), fmt(stats.sigma[b]), fmt(stats.upper[b]), int(stats.count[b])]
                if stats.defined[b]
                else [fmt(b - stats.bin_of(sc.onset)), "NA", "NA", "NA", int(stats.count[b])]
                for b in range(lo, hi)
            ),
        )
    write_csv(cfg.output("quake_timing.csv"), TIMING_HEADER, rows)


def cmd_storm(cfg: RunConfig) -> None:
    from .events import divergence_detect, read_zones, zone_series

    sectors = _sectors(cfg)
    cfg.require_inputs("zones")
    zones = read_zones(cfg.input("zones"))
    calls, texts = _hourly_volumes(cfg, sectors)
    series = zone_series(calls, texts, sectors, zones, cfg.lag_days * 24)
    stamps = [ts.strftime("%Y-%m-%d %H:%M") for ts in calls.timestamps()]
    b0, b1 = calls.bin_of(cfg.storm_start), calls.bin_of(cfg.storm_end)
    with atomic_write(cfg.output("zone_series.csv")) as fh:
        fh.write("zone_id,bin,calls,texts,call_anomaly,text_anomaly\n")
        for z in series:
            for b in range(max(0, b0), min(z.n_bins, b1)):
                fh.write(
                    f"{z.zone_id},{stamps[b]},{fmt(z.calls[b])},{fmt(z.texts[b])},"
                    f"{fmt(z.call_anomaly[b])},{fmt(z.text_anomaly[b])}\n"
                )
    rows = []
    for z in series:
        d = divergence_detect(z, (cfg.storm_start, cfg.storm_end), cfg.theta)
        when = d.onset_time.strftime("%Y-%m-%d %H:%M") if d.onset_time else "NA"
        rows.append([z.zone_id, len(z.members), when, fmt(d.call_slope), fmt(d.text_slope)])
    write_csv(cfg.output("divergence.csv"), ["zone_id", "n_sectors", "onset", "call_slope", "text_slope"], rows)


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# ----------------------------------------------------------------------------


def _load_config(args) -> RunConfig:
    if not args.config:
        raise InputError("--config is required")
    over = {"outdir": args.outdir, "threads": args.threads, "seed": args.seed}
    return parse_config(args.config, over)


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = _load_config(args)
        os.makedirs(cfg.outdir, exist_ok=True)
        HANDLERS[args.command](cfg)
    except ValueError as exc:  # InputError, ConfigError and malformed values
        print(f"sectorflow {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"sectorflow {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort report
        logger.debug("internal error", exc_info=True)
        print(f"sectorflow {args.command}: internal error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> None:
    sys.exit(dispatch(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
