"""
Coordinate transforms, distances, gridding and raster output.

UTM zone 18N (WGS84) is implemented with the 6th-order Krueger series for
the transverse Mercator projection. All functions broadcast over numpy
arrays.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import InputError
from .io import atomic_write

__all__ = [
    "UtmPoint",
    "Raster",
    "TimeSpaceMap",
    "latlon_to_utm",
    "utm_to_latlon",
    "great_circle_km",
    "interpolate_points",
    "interpolate_grid",
    "density_values",
    "write_raster_asc",
    "read_raster_asc",
    "time_space_map",
]

# WGS84
A_AXIS = 6378137.0
FLATTENING = 1 / 298.257223563
K0 = 0.9996
FALSE_EASTING = 500000.0
ZONE = 18
CENTRAL_MERIDIAN = -75.0
MEAN_RADIUS_KM = 6371.0088

_N = FLATTENING / (2 - FLATTENING)
_E = math.sqrt(FLATTENING * (2 - FLATTENING))
_RECT = A_AXIS / (1 + _N) * (1 + _N**2 / 4 + _N**4 / 64 + _N**6 / 256)


def _series(n):
    n2, n3, n4, n5, n6 = n**2, n**3, n**4, n**5, n**6
    alpha = (
        n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288 + 7891 * n6 / 37800,
        13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630 - 1983433 * n6 / 1935360,
        61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880 + 167603 * n6 / 181440,
        49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600,
        34729 * n5 / 80640 - 3418889 * n6 / 1995840,
        212378941 * n6 / 319334400,
    )
    beta = (
        n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512 + 96199 * n6 / 604800,
        n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105 - 1118711 * n6 / 3870720,
        17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720,
        4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600,
        4583 * n5 / 161280 - 108847 * n6 / 3991680,
        20648693 * n6 / 638668800,
    )
    return alpha, beta


_ALPHA, _BETA = _series(_N)


class UtmPoint(NamedTuple):
    """Easting/northing in metres, zone 18N."""

    easting: float | np.ndarray
    northing: float | np.ndarray
    zone: str = "18N"


def _maybe_scalar(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


def latlon_to_utm(lat, lon) -> UtmPoint:
    """Project WGS84 latitude/longitude (degrees) to UTM zone 18N."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if np.any(~np.isfinite(lat)) or np.any(~np.isfinite(lon)):
        raise InputError("non-finite coordinates")
    if np.any((lat <= -80) | (lat >= 84)):
        raise InputError("latitude outside the UTM domain (-80, 84)")
    phi = np.radians(lat)
    lam = np.radians(lon - CENTRAL_MERIDIAN)
    sphi = np.sin(phi)
    tau = np.sinh(np.arctanh(sphi) - _E * np.arctanh(_E * sphi))
    xi_p = np.arctan2(tau, np.cos(lam))
    eta_p = np.arctanh(np.sin(lam) / np.sqrt(1 + tau**2))
    xi, eta = xi_p.copy(), eta_p.copy()
    for j, a in enumerate(_ALPHA, start=1):
        xi += a * np.sin(2 * j * xi_p) * np.cosh(2 * j * eta_p)
        eta += a * np.cos(2 * j * xi_p) * np.sinh(2 * j * eta_p)
    easting = FALSE_EASTING + K0 * _RECT * eta
    northing = K0 * _RECT * xi
    return UtmPoint(_maybe_scalar(easting), _maybe_scalar(northing))


def _tau_from_conformal(tau_p):
    # Newton iteration for tan(phi) from tan(conformal latitude)
    tau = tau_p.copy()
    for _ in range(8):
        sig = np.sinh(_E * np.arctanh(_E * tau / np.sqrt(1 + tau**2)))
        tau_i = tau * np.sqrt(1 + sig**2) - sig * np.sqrt(1 + tau**2)
        dtau = (tau_p - tau_i) / np.sqrt(1 + tau_i**2) * (1 + (1 - _E**2) * tau**2) / (
            (1 - _E**2) * np.sqrt(1 + tau**2)
        )
        tau = tau + dtau
        if np.all(np.abs(dtau) <= 1e-15 * np.maximum(1.0, np.abs(tau))):
            break
    return tau


def utm_to_latlon(easting, northing) -> tuple:
    """Inverse of :func:`latlon_to_utm`; returns ``(lat, lon)`` in degrees."""
    easting = np.asarray(easting, dtype=float)
    northing = np.asarray(northing, dtype=float)
    xi = northing / (K0 * _RECT)
    eta = (easting - FALSE_EASTING) / (K0 * _RECT)
    xi_p, eta_p = xi.copy(), eta.copy()
    for j, b in enumerate(_BETA, start=1):
        xi_p -= b * np.sin(2 * j * xi) * np.cosh(2 * j * eta)
        eta_p -= b * np.cos(2 * j * xi) * np.sinh(2 * j * eta)
    tau_p = np.sin(xi_p) / np.sqrt(np.sinh(eta_p) ** 2 + np.cos(xi_p) ** 2)
    lam = np.arctan2(np.sinh(eta_p), np.cos(xi_p))
    tau = _tau_from_conformal(np.atleast_1d(tau_p)).reshape(np.shape(tau_p))
    lat = np.degrees(np.arctan(tau))
    lon = CENTRAL_MERIDIAN + np.degrees(lam)
    return _maybe_scalar(lat), _maybe_scalar(lon)


def great_circle_km(lat1, lon1, lat2, lon2):
    """Great-circle distance on the mean-radius sphere (R = 6371.0088 km).

    Equal to the haversine distance; evaluated as ``atan2(|a x b|, a . b)``
    which keeps full precision for nearby and for near-antipodal points.
    """
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dl = np.radians(np.asarray(lon2) - np.asarray(lon1))
    c1, s1, c2, s2 = np.cos(p1), np.sin(p1), np.cos(p2), np.sin(p2)
    cross = np.hypot(c2 * np.sin(dl), c1 * s2 - s1 * c2 * np.cos(dl))
    dot = s1 * s2 + c1 * c2 * np.cos(dl)
    d = MEAN_RADIUS_KM * np.arctan2(cross, dot)
    return _maybe_scalar(d)


# ----------------------------------------------------------------------------
# scattered-data gridding


@dataclass
class Raster:
    """Regular grid; ``values[0]`` is the northernmost row."""

    origin_easting: float
    origin_northing: float
    cell_m: float
    values: np.ndarray
    nodata: float = -9999.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.size == 0:
            raise InputError("raster values must be a non-empty 2-d array")

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Eastings and northings of all cell centres, shaped like ``values``."""
        cols = self.origin_easting + (np.arange(self.ncols) + 0.5) * self.cell_m
        rows = self.origin_northing + (self.nrows - np.arange(self.nrows) - 0.5) * self.cell_m
        return np.meshgrid(cols, rows)

    def cell_of(self, easting: float, northing: float) -> tuple[int, int]:
        col = int(np.floor((easting - self.origin_easting) / self.cell_m))
        row = self.nrows - 1 - int(np.floor((northing - self.origin_northing) / self.cell_m))
        return row, col

    @property
    def mask(self) -> np.ndarray:
        return self.values == self.nodata


def _triangulate(points: np.ndarray) -> Delaunay:
    if points.shape[0] < 3:
        raise InputError(f"need at least 3 centroids, got {points.shape[0]}")
    centered = points - points.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9 * max(1.0, np.abs(centered).max())) < 2:
        raise InputError("centroids are collinear")
    try:
        return Delaunay(points)
    except QhullError as exc:
        raise InputError(f"triangulation failed: {exc}") from exc


def interpolate_points(tri: Delaunay, values: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Barycentric-linear interpolation at ``xy``; NaN outside the hull."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    simplex = tri.find_simplex(xy)
    out = np.full(xy.shape[0], np.nan)
    inside = simplex >= 0
    if not np.any(inside):
        return out
    s = simplex[inside]
    trans = tri.transform[s]
    b = np.einsum("ijk,ik->ij", trans[:, :2, :], xy[inside] - trans[:, 2, :])
    bary = np.column_stack([b, 1 - b.sum(axis=1)])
    out[inside] = np.einsum("ij,ij->i", bary, values[tri.simplices[s]])
    return out


def interpolate_grid(
    centroids,
    values,
    cell_m: float = 30.0,
    extent: Sequence[float] | None = None,
    nodata: float = -9999.0,
    chunk_rows: int = 256,
) -> Raster:
    """Grid scattered centroid values by Delaunay barycentric interpolation.

    Parameters
    ----------
    centroids : (n, 2) array of UTM eastings/northings
    values : (n,) finite values at the centroids
    cell_m : raster cell size in metres
    extent : ``(xmin, ymin, xmax, ymax)``; defaults to the centroid bounding
        box padded by one cell
    """
    pts = np.asarray(centroids, dtype=float)
    vals = np.asarray(values, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] != vals.size:
        raise InputError("centroids must be (n, 2) and match values")
    if not np.all(np.isfinite(vals)):
        raise InputError("values must be finite")
    if cell_m <= 0:
        raise InputError("cell_m must be positive")
    tri = _triangulate(pts)
    if extent is None:
        xmin, ymin = pts.min(axis=0) - cell_m
        xmax, ymax = pts.max(axis=0) + cell_m
    else:
        xmin, ymin, xmax, ymax = map(float, extent)
    ncols = max(1, int(np.ceil((xmax - xmin) / cell_m)))
    nrows = max(1, int(np.ceil((ymax - ymin) / cell_m)))
    raster = Raster(xmin, ymin, cell_m, np.full((nrows, ncols), nodata), nodata)
    xs = xmin + (np.arange(ncols) + 0.5) * cell_m
    for r0 in range(0, nrows, chunk_rows):
        r1 = min(nrows, r0 + chunk_rows)
        ys = ymin + (nrows - np.arange(r0, r1) - 0.5) * cell_m
        gx, gy = np.meshgrid(xs, ys)
        z = interpolate_points(tri, vals, np.column_stack([gx.ravel(), gy.ravel()]))
        block = z.reshape(r1 - r0, ncols)
        raster.values[r0:r1] = np.where(np.isnan(block), nodata, block)
    return raster


def density_values(volumes, sectors, sector_ids: Sequence[str] | None = None) -> np.ndarray:
    """Per-sector volume divided by sector area (counts per km^2 per bin).

    ``volumes`` is either a mapping ``sector_id -> volume`` or an array
    aligned with ``sector_ids`` (defaults to the order of ``sectors``).
    """
    areas = {s.sector_id: s.area_km2 for s in sectors}
    if isinstance(volumes, dict):
        ids = list(volumes)
        vol = np.array([volumes[i] for i in ids], dtype=float)
    else:
        ids = list(sector_ids) if sector_ids is not None else [s.sector_id for s in sectors]
        vol = np.asarray(volumes, dtype=float)
        if vol.shape[0] != len(ids):
            raise InputError(f"{vol.shape[0]} volumes for {len(ids)} sectors")
    missing = [i for i in ids if i not in areas]
    if missing:
        raise InputError(f"no geometry for sectors: {missing[:10]}")
    area = np.array([areas[i] for i in ids])
    if np.any(area <= 0):
        raise InputError("sector areas must be positive")
    area = area.reshape((-1,) + (1,) * (vol.ndim - 1))
    return vol / area


def write_raster_asc(raster: Raster, path) -> None:
    """Write an ESRI ASCII grid with ``%.6g`` formatting (atomic replace)."""
    path = os.fspath(path)
    nod = "%.6g" % raster.nodata
    lines = [
        f"ncols {raster.ncols}",
        f"nrows {raster.nrows}",
        "xllcorner %.6f" % raster.origin_easting,
        "yllcorner %.6f" % raster.origin_northing,
        "cellsize %.6g" % raster.cell_m,
        f"NODATA_value {nod}",
    ]
    try:
        with atomic_write(path) as fh:
            fh.write("\n".join(lines) + "\n")
            for row, m in zip(raster.values, raster.mask):
                fh.write(" ".join(nod if bad else "%.6g" % v for v, bad in zip(row, m)) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing raster to {path}: {exc}") from exc


def read_raster_asc(path) -> Raster:
    with open(path) as fh:
        header = {}
        for _ in range(6):
            key, val = fh.readline().split()
            header[key.lower()] = val
        values = np.loadtxt(fh, ndmin=2)
    return Raster(
        float(header["xllcorner"]),
        float(header["yllcorner"]),
        float(header["cellsize"]),
        values.reshape(int(header["nrows"]), int(header["ncols"])),
        float(header["nodata_value"]),
    )


# ----------------------------------------------------------------------------
# time-space maps


@dataclass
class TimeSpaceMap:
    days: np.ndarray
    sector_ids: list
    values: np.ndarray
    saturation_q: float = 0.98

    @property
    def clip_value(self) -> float:
        return float(np.quantile(self.values, self.saturation_q))

    def display(self) -> np.ndarray:
        """Values clipped at the saturation quantile, log10(v+1)-scaled to [0, 1]."""
        top = self.clip_value
        scaled = np.log10(np.minimum(self.values, top) + 1.0)
        denom = np.log10(top + 1.0)
        return scaled / denom if denom > 0 else np.zeros_like(scaled)

    def to_csv(self, path) -> None:
        with atomic_write(path) as fh:
            fh.write(",".join(["day"] + list(self.sector_ids)) + "\n")
            for d, row in zip(self.days, self.values):
                fh.write(str(int(d)) + "," + ",".join("%.10g" % v for v in row) + "\n")


def latitude_order(sectors) -> list:
    """Sector ids sorted by centroid latitude, ties by sector id."""
    return [s.sector_id for s in sorted(sectors, key=lambda s: (s.centroid_latlon[0], s.sector_id))]


def time_space_map(tensor, sectors, saturation_q: float = 0.98) -> TimeSpaceMap:
    """Daily volume matrix indexed by (day, latitude-ordered sector)."""
    if tensor.resolution != "day":
        raise InputError(f"time-space maps need daily tensors, got {tensor.resolution}")
    if tensor.n_bins == 0 or tensor.n_sectors == 0:
        raise InputError("empty tensor")
    order = latitude_order([s for s in sectors if s.sector_id in set(tensor.sector_ids)])
    if len(order) != tensor.n_sectors:
        raise InputError("sector geometry missing for some tensor rows")
    idx = tensor.index_of(order)
    days = np.array([ts.timetuple().tm_yday for ts in tensor.timestamps()])
    return TimeSpaceMap(days, order, tensor.counts[idx].T.astype(float), saturation_q)
