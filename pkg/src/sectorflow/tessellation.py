"""
Sector tessellation of a circular study area.

Each antenna group (one tower, one azimuth) becomes a site nudged a small
distance from its tower along the azimuth. The Voronoi cells of those sites,
computed in UTM 18N metres and clipped to the study disc, are the sectors.
A tower-only tessellation over the unperturbed tower locations serves as the
coarser baseline.

Cells are built by half-plane clipping of the disc polygon against the
perpendicular bisectors to Delaunay neighbours, which is exact for convex
domains and keeps every polygon convex and counter-clockwise.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import InputError, InternalError
from .geodesy import latlon_to_utm, utm_to_latlon
from .io import atomic_write, fmt

logger = logging.getLogger(__name__)

__all__ = [
    "TowerSite",
    "AntennaGroup",
    "StudyArea",
    "Sector",
    "SectorIndex",
    "build_sectors",
    "tower_only_tessellation",
    "locate_point",
    "group_azimuths",
    "read_towers",
    "read_antennas",
    "write_sectors",
    "read_sectors",
]

DISC_VERTICES = 720
MERGE_DEG = 1.0
# slack for "point on polygon" decisions, metres
EDGE_TOL_M = 1e-6


@dataclass(frozen=True)
class TowerSite:
    tower_id: str
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90 <= self.lat <= 90) or not (-180 <= self.lon <= 180):
            raise InputError(f"tower {self.tower_id}: coordinates ({self.lat}, {self.lon}) out of range")


@dataclass(frozen=True)
class AntennaGroup:
    tower_id: str
    azimuth_deg: float

    def __post_init__(self):
        if not (0 <= self.azimuth_deg < 360):
            raise InputError(f"tower {self.tower_id}: azimuth {self.azimuth_deg} not in [0, 360)")


@dataclass(frozen=True)
class StudyArea:
    """Disc of ``radius_km`` around a centre; defaults to 50 miles around Times Square."""

    center_lat: float = 40.7580
    center_lon: float = -73.9855
    radius_km: float = 80.5

    def __post_init__(self):
        if not self.radius_km > 0:
            raise InputError(f"radius_km must be positive, got {self.radius_km}")

    @property
    def center_utm(self) -> np.ndarray:
        e, n, _ = latlon_to_utm(self.center_lat, self.center_lon)
        return np.array([float(e), float(n)])

    @property
    def area_km2(self) -> float:
        return math.pi * self.radius_km**2

    def polygon_local(self, n: int = DISC_VERTICES) -> np.ndarray:
        """Regular n-gon with the same area as the disc, centred at the origin (metres)."""
        r = self.radius_km * 1000.0
        rp = r * math.sqrt(2 * math.pi / (n * math.sin(2 * math.pi / n)))
        th = 2 * np.pi * np.arange(n) / n
        return np.column_stack([rp * np.cos(th), rp * np.sin(th)])

    def to_local(self, lat, lon) -> np.ndarray:
        e, n, _ = latlon_to_utm(np.asarray(lat, float), np.asarray(lon, float))
        c = self.center_utm
        return np.column_stack([np.atleast_1d(e) - c[0], np.atleast_1d(n) - c[1]])

    def contains_local(self, xy: np.ndarray) -> np.ndarray:
        return _inside_convex(self.polygon_local(), np.atleast_2d(xy))


@dataclass
class Sector:
    sector_id: str
    tower_id: str
    azimuth_deg: float
    polygon: np.ndarray  # (k, 2) UTM metres, counter-clockwise
    centroid_latlon: tuple
    centroid_utm: tuple
    area_km2: float
    site_utm: tuple = field(default=(np.nan, np.nan), repr=False)

    def wkt(self) -> str:
        pts = list(self.polygon) + [self.polygon[0]]
        return "POLYGON ((" + ", ".join("%.3f %.3f" % (x, y) for x, y in pts) + "))"


# ----------------------------------------------------------------------------
# geometry helpers


def _shoelace(poly: np.ndarray) -> tuple[float, np.ndarray]:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    if a == 0:
        return 0.0, poly.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6 * a)
    cy = ((y + yn) * cross).sum() / (6 * a)
    return float(a), np.array([cx, cy])


def _clip_halfplane(poly: np.ndarray, d: np.ndarray, c: float) -> np.ndarray:
    """Keep the part of convex ``poly`` where ``p . d <= c``."""
    if len(poly) == 0:
        return poly
    s = poly @ d - c
    inside = s <= 0
    if inside.all():
        return poly
    if not inside.any():
        return poly[:0]
    nxt = np.roll(np.arange(len(poly)), -1)
    s_next = s[nxt]
    crossing = inside != inside[nxt]
    out = []
    for i in range(len(poly)):
        if inside[i]:
            out.append(poly[i])
        if crossing[i]:
            t = s[i] / (s[i] - s_next[i])
            out.append(poly[i] + t * (poly[nxt[i]] - poly[i]))
    return np.array(out)


def _inside_convex(poly: np.ndarray, pts: np.ndarray, tol: float = EDGE_TOL_M) -> np.ndarray:
    """Points inside (or within ``tol`` of) a counter-clockwise convex polygon."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    edge = b - a
    length = np.hypot(edge[:, 0], edge[:, 1])
    keep = length > 0
    a, edge, length = a[keep], edge[keep], length[keep]
    rel_x = pts[:, None, 0] - a[None, :, 0]
    rel_y = pts[:, None, 1] - a[None, :, 1]
    cross = (edge[None, :, 0] * rel_y - edge[None, :, 1] * rel_x) / length[None, :]
    return np.all(cross >= -tol, axis=1)


def _neighbours(sites: np.ndarray) -> list:
    n = len(sites)
    everyone = [np.array([j for j in range(n) if j != i], dtype=int) for i in range(n)]
    if n < 4:
        return everyone
    try:
        tri = Delaunay(sites)
    except QhullError:
        # collinear or otherwise degenerate sites
        return everyone
    indptr, idx = tri.vertex_neighbor_vertices
    nbrs = [idx[indptr[i] : indptr[i + 1]] for i in range(n)]
    if tri.coplanar.size:
        # points Qhull dropped as near-duplicates get the brute-force treatment
        missing = set(tri.coplanar[:, 0].tolist())
        return [everyone[i] if (i in missing or not len(nbrs[i])) else nbrs[i] for i in range(n)]
    return nbrs


def _voronoi_cells(sites: np.ndarray, disc: np.ndarray) -> list:
    """Clipped Voronoi cell of every site (local metres)."""
    nbrs = _neighbours(sites)
    cells = []
    for i, p in enumerate(sites):
        js = nbrs[i]
        # nearest bisectors first so the polygon shrinks quickly
        order = np.argsort(np.hypot(*(sites[js] - p).T), kind="stable")
        poly = disc
        for j in js[order]:
            d = sites[j] - p
            mid = 0.5 * (sites[j] + p)
            # shift the origin to p for better conditioning
            poly = _clip_halfplane(poly - p, d, float(d @ (mid - p))) + p
            if len(poly) == 0:
                break
        cells.append(poly)
    return cells


def _make_sectors(ids, towers, azimuths, sites_local, area: StudyArea) -> list:
    if len(sites_local) == 0:
        raise InputError("no sites to tessellate")
    uniq = np.unique(np.round(sites_local, 9), axis=0)
    if len(uniq) != len(sites_local):
        raise InternalError("duplicate sites after perturbation")
    disc = area.polygon_local()
    cells = _voronoi_cells(sites_local, disc)
    center = area.center_utm
    out = []
    for sid, tid, az, site, poly in zip(ids, towers, azimuths, sites_local, cells):
        a, cen = _shoelace(poly) if len(poly) >= 3 else (0.0, site)
        if a <= 0:
            raise InternalError(f"sector {sid} has empty cell")
        cu = cen + center
        lat, lon = utm_to_latlon(cu[0], cu[1])
        out.append(
            Sector(
                sector_id=sid,
                tower_id=tid,
                azimuth_deg=az,
                polygon=poly + center,
                centroid_latlon=(float(lat), float(lon)),
                centroid_utm=(float(cu[0]), float(cu[1])),
                area_km2=a / 1e6,
                site_utm=(float(site[0] + center[0]), float(site[1] + center[1])),
            )
        )
    return out


def _tower_positions(towers: Sequence[TowerSite], area: StudyArea) -> dict:
    ids = [t.tower_id for t in towers]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise InputError(f"duplicate tower ids: {dup[:10]}")
    if not towers:
        raise InputError("no towers")
    local = area.to_local([t.lat for t in towers], [t.lon for t in towers])
    r_m = area.radius_km * 1000.0
    dist = np.hypot(local[:, 0], local[:, 1])
    outside = [tid for tid, d in zip(ids, dist) if d > r_m]
    if outside:
        raise InputError(f"towers outside the study disc: {outside[:20]}")
    return dict(zip(ids, local))


def group_azimuths(azimuths: Iterable[float], merge_deg: float = MERGE_DEG) -> list:
    """Distinct azimuths of one tower, merging those less than ``merge_deg`` apart.

    Each merged run keeps its first member (in ascending order); runs that
    wrap through north are joined to the run starting nearest 0.
    """
    az = sorted(set(float(a) for a in azimuths))
    if not az:
        return []
    groups = [[az[0]]]
    for a in az[1:]:
        if a - groups[-1][-1] < merge_deg:
            groups[-1].append(a)
        else:
            groups.append([a])
    if len(groups) > 1 and groups[0][0] + 360 - groups[-1][-1] < merge_deg:
        groups[0] = groups.pop() + groups[0]
        groups[0].sort()
    return [g[0] for g in sorted(groups, key=lambda g: g[0])]


def build_sectors(
    towers: Sequence[TowerSite],
    antennas: Sequence[AntennaGroup],
    area: StudyArea | None = None,
    epsilon_m: float = 1.0,
) -> list:
    """Azimuth-refined sector tessellation.

    Parameters
    ----------
    towers, antennas
        Tower coordinates and (tower, azimuth) antenna groups. Towers without
        antennas contribute no sector.
    area
        Study disc; every tower must lie inside it.
    epsilon_m
        Perturbation distance along each azimuth, metres.

    Returns
    -------
    list of Sector, ordered by sector id.
    """
    area = area or StudyArea()
    if not epsilon_m > 0:
        raise InputError(f"epsilon_m must be positive, got {epsilon_m}")
    pos = _tower_positions(towers, area)
    by_tower = defaultdict(list)
    unknown = sorted({a.tower_id for a in antennas if a.tower_id not in pos})
    if unknown:
        raise InputError(f"antennas reference unknown towers: {unknown[:20]}")
    for a in antennas:
        by_tower[a.tower_id].append(a.azimuth_deg)
    if not by_tower:
        raise InputError("no antennas")

    rows = []
    for tid in sorted(by_tower):
        raw = set(by_tower[tid])
        kept = group_azimuths(raw)
        if len(kept) < len(raw):
            logger.info("tower %s: merged %d azimuths into %d groups", tid, len(raw), len(kept))
        for az in kept:
            rows.append((f"{tid}:{az:g}", tid, az))
    rows.sort(key=lambda r: r[0])

    used = np.array([pos[t] for t in sorted(by_tower)])
    if len(used) > 1:
        dmin = cKDTree(used).query(used, k=2)[0][:, 1].min()
        if epsilon_m >= dmin / 2:
            raise InputError(f"epsilon_m={epsilon_m} is not below half the minimum tower spacing ({dmin:.3f} m)")

    sites = []
    for _, tid, az in rows:
        th = math.radians(az)
        sites.append(pos[tid] + epsilon_m * np.array([math.sin(th), math.cos(th)]))
    sites = np.array(sites)
    return _make_sectors([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], sites, area)


def tower_only_tessellation(towers: Sequence[TowerSite], area: StudyArea | None = None) -> list:
    """One Voronoi cell per tower; sector ids are the tower ids."""
    area = area or StudyArea()
    pos = _tower_positions(towers, area)
    ids = sorted(pos)
    sites = np.array([pos[i] for i in ids])
    return _make_sectors(ids, ids, [float("nan")] * len(ids), sites, area)


# ----------------------------------------------------------------------------
# point location


class SectorIndex:
    """Nearest-site lookup over a sector list (ties resolved by sector id)."""

    def __init__(self, sectors: Sequence[Sector]):
        if not sectors:
            raise InputError("empty sector list")
        self.sectors = sorted(sectors, key=lambda s: s.sector_id)
        self.ids = [s.sector_id for s in self.sectors]
        self.sites = np.array([s.site_utm for s in self.sectors], dtype=float)
        # sectors rebuilt from files carry no site; fall back to polygon tests near the centroid
        self.by_polygon = not np.all(np.isfinite(self.sites))
        if self.by_polygon:
            self.sites = np.array([s.centroid_utm for s in self.sectors], dtype=float)
        # local frame for numerically friendly distances
        self.origin = self.sites.mean(axis=0)
        self.tree = cKDTree(self.sites - self.origin)

    def locate_utm(self, easting, northing) -> list:
        pts = np.column_stack([np.atleast_1d(easting), np.atleast_1d(northing)]).astype(float) - self.origin
        k = min(16 if self.by_polygon else 4, len(self.ids))
        dist, idx = self.tree.query(pts, k=k)
        dist = dist.reshape(len(pts), k)
        idx = idx.reshape(len(pts), k)
        out = []
        for p, drow, irow in zip(pts, dist, idx):
            if self.by_polygon:
                hits = [i for i in sorted(irow) if _inside_convex(self.sectors[i].polygon - self.origin, p[None, :])[0]]
                out.append(self.ids[hits[0]] if hits else None)
                continue
            tied = irow[drow <= drow[0] + 1e-9]
            best = min(tied)  # sectors are id-sorted, so min index = min id
            poly = self.sectors[best].polygon - self.origin
            out.append(self.ids[best] if _inside_convex(poly, p[None, :])[0] else None)
        return out

    def locate(self, lat, lon) -> list:
        e, n, _ = latlon_to_utm(np.asarray(lat, float), np.asarray(lon, float))
        return self.locate_utm(e, n)


def locate_point(sectors: Sequence[Sector], lat: float, lon: float):
    """Sector id containing the point, or ``None`` outside the study disc."""
    if not (np.isfinite(lat) and np.isfinite(lon)) or not (-90 <= lat <= 90 and -180 <= lon <= 180):
        raise InputError(f"malformed coordinates ({lat}, {lon})")
    return SectorIndex(sectors).locate(lat, lon)[0]


# ----------------------------------------------------------------------------
# files


def _read_table(path, columns: list) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    if list(df.columns) != columns:
        raise InputError(f"{path}: header must be {','.join(columns)}")
    return df


def _floats(df, col, path) -> np.ndarray:
    vals = pd.to_numeric(df[col], errors="coerce").to_numpy()
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise InputError(f"{path}:{bad[0] + 2}: bad {col} value {df[col].iloc[bad[0]]!r}")
    return vals


def read_towers(path) -> list:
    df = _read_table(path, ["tower_id", "lat", "lon"])
    lat, lon = _floats(df, "lat", path), _floats(df, "lon", path)
    out = []
    for i, (tid, a, b) in enumerate(zip(df["tower_id"], lat, lon)):
        try:
            out.append(TowerSite(tid, float(a), float(b)))
        except InputError as exc:
            raise InputError(f"{path}:{i + 2}: {exc}") from None
    return out


def read_antennas(path) -> list:
    df = _read_table(path, ["tower_id", "azimuth_deg"])
    az = _floats(df, "azimuth_deg", path)
    out = []
    for i, (tid, a) in enumerate(zip(df["tower_id"], az)):
        try:
            out.append(AntennaGroup(tid, float(a)))
        except InputError as exc:
            raise InputError(f"{path}:{i + 2}: {exc}") from None
    return out


def write_towers(path, towers: Sequence[TowerSite]) -> None:
    with atomic_write(path) as fh:
        fh.write("tower_id,lat,lon\n")
        for t in towers:
            fh.write(f"{t.tower_id},{t.lat:.8f},{t.lon:.8f}\n")


def write_antennas(path, antennas: Sequence[AntennaGroup]) -> None:
    with atomic_write(path) as fh:
        fh.write("tower_id,azimuth_deg\n")
        for a in antennas:
            fh.write(f"{a.tower_id},{a.azimuth_deg:g}\n")


def write_sectors(path, sectors: Sequence[Sector], wkt_path=None) -> None:
    """Sector attribute table plus an optional ``sector_id,wkt`` sidecar."""
    with atomic_write(path) as fh:
        fh.write("sector_id,tower_id,azimuth_deg,centroid_lat,centroid_lon,area_km2\n")
        for s in sectors:
            lat, lon = s.centroid_latlon
            fh.write(f"{s.sector_id},{s.tower_id},{fmt(s.azimuth_deg)},{lat:.8f},{lon:.8f},{s.area_km2:.10g}\n")
    if wkt_path is not None:
        with atomic_write(wkt_path) as fh:
            fh.write("sector_id,wkt\n")
            for s in sectors:
                fh.write(f'{s.sector_id},"{s.wkt()}"\n')


def read_sectors(path, wkt_path) -> list:
    """Rebuild sectors from the attribute table and WKT sidecar."""
    from shapely import wkt as shapely_wkt

    attrs = _read_table(path, ["sector_id", "tower_id", "azimuth_deg", "centroid_lat", "centroid_lon", "area_km2"])
    geoms = _read_table(wkt_path, ["sector_id", "wkt"])
    polys = {}
    for i, (sid, text) in enumerate(zip(geoms["sector_id"], geoms["wkt"])):
        try:
            g = shapely_wkt.loads(text)
        except Exception as exc:  # shapely raises its own error types
            raise InputError(f"{wkt_path}:{i + 2}: bad WKT: {exc}") from None
        polys[sid] = np.asarray(g.exterior.coords)[:-1]
    out = []
    for sid, tid, az, lat, lon, a in attrs.itertuples(index=False):
        if sid not in polys:
            raise InputError(f"{wkt_path}: no polygon for sector {sid}")
        poly = polys[sid]
        _, cen = _shoelace(poly)
        az = float("nan") if az == "NA" else float(az)
        out.append(Sector(sid, tid, az, poly, (float(lat), float(lon)), tuple(cen), float(a)))
    return out
