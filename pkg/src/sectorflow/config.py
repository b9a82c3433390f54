"""
``key = value`` configuration files.

Used for the run configuration read by the command line and for generator
spec files. Lines starting with ``#`` are comments; inline ``#`` after a
value also starts a comment.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any

from .errors import ConfigError

__all__ = ["parse_kv", "coerce", "RunConfig", "parse_config", "TIME_FORMAT"]

TIME_FORMAT = "%Y-%m-%d %H:%M"


def parse_kv(path) -> dict:
    """Parse a key=value file into ``{key: (raw_value, line_number)}``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    out: dict[str, tuple[str, int]] = {}
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{no}: expected key = value, got {line.strip()!r}")
        key, val = (s.strip() for s in body.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{no}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{no}: duplicate key {key!r} (first set on line {out[key][1]})")
        out[key] = (val, no)
    return out


def coerce(raw: str, kind, where: str) -> Any:
    """Convert a raw string to ``kind`` (bool, int, float, str, datetime, tuple of float)."""
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw, 0)
        if kind is float:
            return float(raw)
        if kind is datetime:
            return datetime.strptime(raw, TIME_FORMAT)
        if kind is tuple:
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        name = getattr(kind, "__name__", str(kind))
        raise ConfigError(f"{where}: cannot parse {raw!r} as {name}") from None


_KINDS = {"bool": bool, "int": int, "float": float, "str": str, "datetime": datetime, "tuple": tuple}


def _field_kind(f: dataclasses.Field):
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    t = t.split("|")[0].strip()
    return _KINDS.get(t, str)


def load_dataclass(cls, path, required: tuple = (), overrides: dict | None = None):
    """Build dataclass ``cls`` from a key=value file, rejecting unknown keys."""
    entries = parse_kv(path)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init and not f.metadata.get("internal")}
    unknown = [(k, no) for k, (_, no) in entries.items() if k not in fields]
    if unknown:
        k, no = unknown[0]
        raise ConfigError(f"{path}:{no}: unknown key {k!r}")
    missing = [k for k in required if k not in entries]
    if missing:
        raise ConfigError(f"{path}: missing required keys: {', '.join(missing)}")
    kwargs = {}
    lines = {}
    for k, (raw, no) in entries.items():
        kwargs[k] = coerce(raw, _field_kind(fields[k]), f"{path}:{no}: {k}")
        lines[k] = no
    if overrides:
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
    obj = cls(**kwargs)
    return obj, lines


@dataclass
class RunConfig:
    """Validated run configuration.

    Relative paths are resolved against the directory of the config file.
    """

    outdir: str
    start: datetime
    end: datetime
    towers: str = ""
    antennas: str = ""
    volumes: str = ""
    volumes_hourly: str = ""
    zones: str = ""
    generator_spec: str = ""
    resolution: str = "hour"
    center_lat: float = 40.7580
    center_lon: float = -73.9855
    radius_km: float = 80.5
    epsilon_m: float = 1.0
    epicenter_lat: float = 37.936
    epicenter_lon: float = -77.933
    quake_onset: datetime = datetime(2011, 8, 23, 13, 51)
    lag_days: int = 7
    nw: float = 4.0
    k: int = 0
    adaptive: bool = True
    onset_sigma: float = 5.0
    recovery_sigma: float = 2.0
    quake_window_min: int = 180
    bin_km: float = 25.0
    theta: float = 0.3
    storm_start: datetime = datetime(2011, 8, 27, 0, 0)
    storm_end: datetime = datetime(2011, 8, 29, 0, 0)
    corr_transform: str = "none"
    corr_resolution: str = "day"
    cell_m: float = 30.0
    saturation_q: float = 0.98
    hourly_start: datetime = datetime(2011, 1, 1, 0, 0)
    hourly_days: int = 365
    deterministic: bool = False
    seed: int = 0
    threads: int = 1
    source: str = field(default="", repr=False, metadata={"internal": True})
    lines: dict = field(default_factory=dict, repr=False, metadata={"internal": True})

    REQUIRED = ("outdir", "start", "end")
    PATH_KEYS = ("outdir", "towers", "antennas", "volumes", "volumes_hourly", "zones", "generator_spec")
    # inputs left unset are read from the output directory under these names
    DEFAULT_NAMES = {
        "towers": "towers.csv",
        "antennas": "antennas.csv",
        "volumes": "volumes.csv",
        "volumes_hourly": "volumes_hourly.csv",
        "zones": "zones.csv",
    }

    def __post_init__(self):
        where = self.source or "config"
        if self.end <= self.start:
            raise ConfigError(f"{where}: end must be after start")
        if self.radius_km <= 0:
            raise ConfigError(f"{where}: radius_km must be positive")
        if self.epsilon_m <= 0:
            raise ConfigError(f"{where}: epsilon_m must be positive")
        if self.lag_days < 1:
            raise ConfigError(f"{where}: lag_days must be >= 1")
        if self.nw < 1:
            raise ConfigError(f"{where}: nw must be >= 1")
        if self.corr_transform not in ("none", "log10p1"):
            raise ConfigError(f"{where}: corr_transform must be none or log10p1")
        if self.corr_resolution not in ("day", "hour"):
            raise ConfigError(f"{where}: corr_resolution must be day or hour")
        if not 0 < self.theta < 1:
            raise ConfigError(f"{where}: theta must be in (0, 1)")
        if self.threads < 1:
            raise ConfigError(f"{where}: threads must be >= 1")
        if self.resolution not in ("minute", "hour", "day"):
            raise ConfigError(f"{where}: resolution must be minute, hour or day")
        if self.hourly_days < 1:
            raise ConfigError(f"{where}: hourly_days must be >= 1")
        for key in ("start", "end", "hourly_start"):
            if getattr(self, key).hour or getattr(self, key).minute:
                raise ConfigError(f"{where}: {key} must fall on midnight")

    @property
    def hourly_end(self) -> datetime:
        return self.hourly_start + timedelta(days=self.hourly_days)

    def input(self, key: str) -> str:
        """Configured path for input ``key``, or its default name in ``outdir``."""
        return getattr(self, key) or self.output(self.DEFAULT_NAMES[key])

    def resolve(self, base: str) -> None:
        for key in self.PATH_KEYS:
            val = getattr(self, key)
            if val and not os.path.isabs(val):
                setattr(self, key, os.path.normpath(os.path.join(base, val)))

    def require_inputs(self, *keys: str) -> None:
        """Check that the named input paths exist."""
        for key in keys:
            path = self.input(key)
            if not os.path.exists(path):
                no = self.lines.get(key)
                loc = f"{self.source}:{no}" if no else self.source
                raise ConfigError(f"{loc}: {key} path does not exist: {path}")

    def output(self, name: str) -> str:
        return os.path.join(self.outdir, name)


def parse_config(path, overrides: dict | None = None) -> RunConfig:
    """Read and validate a run configuration file."""
    entries = parse_kv(path)
    if not entries:
        raise ConfigError(f"{path}: empty config; required keys: {', '.join(RunConfig.REQUIRED)}")
    cfg, lines = load_dataclass(RunConfig, path, RunConfig.REQUIRED, dict(overrides or {}, source=str(path)))
    cfg.lines = lines
    base = os.path.dirname(os.path.abspath(path))
    if overrides and overrides.get("outdir"):
        # command-line outdir is relative to the working directory
        cfg.outdir = os.path.abspath(overrides["outdir"])
    cfg.resolve(base)
    return cfg
