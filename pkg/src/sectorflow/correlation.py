"""
Spatial correlation matrices: Pearson correlation, across sectors, between
the volume vectors of every pair of time bins.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .io import atomic_write, fmt

__all__ = ["CorrMatrix", "spatial_corr_matrix", "disruption_score", "disruption_scores", "bin_labels"]

SECTOR_BLOCK = 4096
TILE = 256


@dataclass
class CorrMatrix:
    """Bins x bins correlation matrix; NaN marks bins with no spatial variance."""

    bins: list
    m: np.ndarray

    def index(self, label) -> int:
        try:
            return self.bins.index(label)
        except ValueError:
            raise InputError(f"bin {label!r} not in matrix") from None

    def to_csv(self, path) -> None:
        with atomic_write(path) as fh:
            fh.write(",".join(["bin"] + [str(b) for b in self.bins]) + "\n")
            for b, row in zip(self.bins, self.m):
                fh.write(str(b) + "," + ",".join(fmt(v) for v in row) + "\n")


def bin_labels(t) -> list:
    """Day-of-year labels, extended with the hour (and minute) for finer tensors."""
    out = []
    for ts in t.timestamps():
        jd = ts.timetuple().tm_yday
        if t.resolution == "day":
            out.append(str(jd))
        elif t.resolution == "hour":
            out.append(f"{jd}-{ts.hour:02d}")
        else:
            out.append(f"{jd}-{ts.hour:02d}:{ts.minute:02d}")
    return out


def spatial_corr_matrix(t, transform: str = "none", threads: int = 1) -> CorrMatrix:
    """Pearson correlation between bin columns of a volume tensor.

    Parameters
    ----------
    t : VolumeTensor
    transform : {"none", "log10p1"}
        Optional ``log10(v + 1)`` applied to volumes first.
    threads : int
        Worker threads for the column tiles. Tiling is fixed, so the result
        does not depend on this value.

    Notes
    -----
    Means and variances come from one pass over the sectors; the centred
    cross products are then accumulated over fixed sector blocks, so memory
    beyond the output is one block at a time.
    """
    if transform not in ("none", "log10p1"):
        raise InputError(f"unknown transform {transform!r}")
    x = np.asarray(t.counts)
    n_s, n_b = x.shape
    if n_s < 3:
        raise InputError(f"need at least 3 sectors, got {n_s}")
    if n_b < 2:
        raise InputError(f"need at least 2 bins, got {n_b}")

    def block(lo, hi):
        b = np.asarray(x[lo:hi], dtype=np.float64)
        return np.log10(b + 1.0) if transform == "log10p1" else b

    starts = list(range(0, n_s, SECTOR_BLOCK))
    total = np.zeros(n_b)
    for lo in starts:
        total += block(lo, lo + SECTOR_BLOCK).sum(axis=0)
    mean = total / n_s

    tiles = [(c0, min(n_b, c0 + TILE)) for c0 in range(0, n_b, TILE)]
    gram = np.zeros((n_b, n_b))

    def run_tile(tile):
        c0, c1 = tile
        acc = np.zeros((n_b, c1 - c0))
        for lo in starts:
            xc = block(lo, lo + SECTOR_BLOCK) - mean
            acc += xc.T @ xc[:, c0:c1]
        return acc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_tile, tiles))
    else:
        parts = [run_tile(tl) for tl in tiles]
    for (c0, c1), part in zip(tiles, parts):
        gram[:, c0:c1] = part

    var = np.diag(gram).copy()
    scale = np.sqrt(np.clip(var, 0.0, None))
    # zero spatial variance, allowing for rounding in the centred sums
    flat = scale <= 1e-12 * np.maximum(np.abs(mean), 1.0) * np.sqrt(n_s)
    scale[flat] = 1.0
    m = gram / scale[:, None] / scale[None, :]
    m = 0.5 * (m + m.T)
    np.clip(m, -1.0, 1.0, out=m)
    np.fill_diagonal(m, 1.0)
    m[flat, :] = np.nan
    m[:, flat] = np.nan
    return CorrMatrix(bin_labels(t), m)


def disruption_scores(c: CorrMatrix) -> np.ndarray:
    """``1 - mean`` of each row over off-diagonal, unmasked entries (NaN if none)."""
    m = c.m.copy()
    np.fill_diagonal(m, np.nan)
    ok = np.isfinite(m)
    n = ok.sum(axis=1)
    s = np.where(ok, m, 0.0).sum(axis=1)
    out = np.full(len(m), np.nan)
    out[n > 0] = 1.0 - s[n > 0] / n[n > 0]
    return out


def disruption_score(c: CorrMatrix, bin) -> float:
    """Score of one bin, given by label or integer position."""
    i = bin if isinstance(bin, (int, np.integer)) else c.index(bin)
    if not 0 <= i < len(c.bins):
        raise InputError(f"bin index {i} out of range")
    return float(disruption_scores(c)[i])
