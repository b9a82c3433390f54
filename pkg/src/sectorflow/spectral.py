"""
Multitaper spectral estimation.

Power spectra use discrete prolate spheroidal sequences (Slepian tapers)
with optional adaptive weighting; cross spectra combine the tapered
eigenspectra with eigenvalue weights and yield magnitude-squared coherence
and phase. Frequencies are in cycles per sample (cycles per hour for the
hourly series this package works with).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ConfigError, InputError, InternalError

logger = logging.getLogger(__name__)

__all__ = [
    "SpectralConfig",
    "Spectrum",
    "CrossSpectrum",
    "dpss_tapers",
    "sinc_concentration",
    "multitaper_psd",
    "multitaper_cross",
    "Peak",
    "find_peak",
]


@dataclass(frozen=True)
class SpectralConfig:
    """Multitaper settings.

    ``k`` defaults to ``2*nw - 1`` tapers.
    """

    nw: float = 4.0
    k: int | None = None
    adaptive: bool = True
    detrend: bool = True
    tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        if self.nw < 1:
            raise ConfigError(f"nw must be >= 1, got {self.nw}")
        kmax = int(np.floor(2 * self.nw - 1))
        k = kmax if self.k is None else int(self.k)
        if not 1 <= k <= kmax:
            raise ConfigError(f"k={k} outside [1, 2*nw-1={kmax}]")
        object.__setattr__(self, "k", k)


@dataclass
class Spectrum:
    freqs: np.ndarray
    psd: np.ndarray
    dof: np.ndarray
    converged: bool = True
    iterations: int = 0
    residuals: list = field(default_factory=list)

    @property
    def periods(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.freqs > 0, 1.0 / np.where(self.freqs > 0, self.freqs, 1.0), np.inf)


@dataclass
class CrossSpectrum:
    freqs: np.ndarray
    coherency: np.ndarray
    phase: np.ndarray
    csd: np.ndarray
    psd_x: np.ndarray
    psd_y: np.ndarray

    @property
    def periods(self) -> np.ndarray:
        return np.where(self.freqs > 0, 1.0 / np.where(self.freqs > 0, self.freqs, 1.0), np.inf)

    def lag(self, freq: float) -> float:
        """Time shift of ``y`` behind ``x`` (in samples) implied by the phase at ``freq``."""
        i = int(np.argmin(np.abs(self.freqs - freq)))
        return float(self.phase[i] / (2 * np.pi * self.freqs[i]))


def sinc_concentration(tapers: np.ndarray, w: float) -> np.ndarray:
    """Concentration ratio of each taper in the band ``[-w, w]``.

    Evaluates ``v' A v`` for the sinc kernel ``A[i, j] = sin(2 pi w (i-j)) / (pi (i-j))``
    through an FFT Toeplitz product, so the cost stays O(n log n) per taper.
    """
    tapers = np.atleast_2d(tapers)
    n = tapers.shape[1]
    lags = np.arange(-(n - 1), n)
    kern = np.empty(lags.size)
    nz = lags != 0
    kern[nz] = np.sin(2 * np.pi * w * lags[nz]) / (np.pi * lags[nz])
    kern[~nz] = 2 * w
    nfft = 1 << int(np.ceil(np.log2(3 * n)))
    kf = np.fft.rfft(kern, nfft)
    vf = np.fft.rfft(tapers, nfft, axis=1)
    conv = np.fft.irfft(vf * kf, nfft, axis=1)[:, n - 1 : 2 * n - 1]
    return np.einsum("ij,ij->i", tapers, conv)


def dpss_tapers(n: int, nw: float, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Slepian tapers from the tridiagonal commuting matrix.

    Returns
    -------
    tapers : (k, n) array, unit norm rows, ordered by decreasing concentration
    eigvals : (k,) concentration ratios
    """
    if n < 8:
        raise InputError(f"series length {n} < 8")
    kmax = int(np.floor(2 * nw - 1))
    if k is None:
        k = kmax
    if k > kmax or k < 1:
        raise ConfigError(f"k={k} must be in [1, {kmax}] for nw={nw}")
    w = nw / n
    if w >= 0.5:
        raise InputError(f"nw/n = {w} must be < 0.5")

    t = np.arange(n)
    diag = ((n - 1 - 2 * t) / 2.0) ** 2 * np.cos(2 * np.pi * w)
    off = t[1:] * (n - t[1:]) / 2.0
    try:
        vals, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(n - k, n - 1))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise InternalError(f"tridiagonal eigensolver failed for n={n}, nw={nw}, k={k}: {exc}") from exc
    if not np.all(np.isfinite(vecs)):
        raise InternalError(f"non-finite tapers for n={n}, nw={nw}, k={k}; eigenvalues {vals}")

    tapers = vecs[:, ::-1].T.copy()
    tapers /= np.linalg.norm(tapers, axis=1, keepdims=True)
    for order, v in enumerate(tapers):
        if order % 2 == 0:
            if v.sum() < 0:
                v *= -1
        else:
            first = np.flatnonzero(np.abs(v) > 1e-6 * np.abs(v).max())[0]
            if v[first] < 0:
                v *= -1
    lam = sinc_concentration(tapers, w)
    return tapers, lam


def _prepare(x, cfg: SpectralConfig) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InputError("series must be one-dimensional")
    if x.size < 16:
        raise InputError(f"series length {x.size} < 16")
    if not np.all(np.isfinite(x)):
        raise InputError("series contains non-finite values")
    if cfg.detrend:
        x = x - x.mean()
    return x


def _eigencoefficients(x: np.ndarray, tapers: np.ndarray) -> np.ndarray:
    return np.fft.rfft(tapers * x[None, :], axis=1)


def _one_sided(s: np.ndarray, n: int) -> np.ndarray:
    out = s.copy()
    if n % 2 == 0:
        out[..., 1:-1] *= 2
    else:
        out[..., 1:] *= 2
    return out


def multitaper_psd(series, cfg: SpectralConfig | None = None) -> Spectrum:
    """One-sided multitaper power spectral density.

    With ``cfg.adaptive`` the eigenspectra are combined with the iterative
    mean-square-error weights; otherwise with the concentration eigenvalues.
    ``sum(psd) * (1/n)`` approximates the series variance.
    """
    cfg = cfg or SpectralConfig()
    x = _prepare(series, cfg)
    n = x.size
    tapers, lam = dpss_tapers(n, cfg.nw, cfg.k)
    sk = np.abs(_eigencoefficients(x, tapers)) ** 2
    freqs = np.fft.rfftfreq(n, d=1.0)

    converged, iters, residuals = True, 0, []
    if cfg.adaptive and cfg.k > 1:
        var = float(np.var(x)) if cfg.detrend else float(np.mean(x**2))
        lam_c = lam[:, None]
        s_hat = 0.5 * (sk[0] + sk[1])
        converged = False
        for iters in range(1, cfg.max_iter + 1):
            b = s_hat / (lam_c * s_hat + (1.0 - lam_c) * var)
            d2 = lam_c * b**2
            s_new = (d2 * sk).sum(axis=0) / d2.sum(axis=0)
            denom = np.where(s_hat > 0, s_hat, 1.0)
            resid = float(np.max(np.abs(s_new - s_hat) / denom)) if s_new.size else 0.0
            residuals.append(resid)
            s_hat = s_new
            if resid < cfg.tol:
                converged = True
                break
        if not converged:
            logger.warning("adaptive weighting did not converge after %d iterations", cfg.max_iter)
        b = s_hat / (lam_c * s_hat + (1.0 - lam_c) * var)
        d2 = lam_c * b**2
        psd = s_hat
        dof = 2 * d2.sum(axis=0) ** 2 / (d2**2).sum(axis=0)
    else:
        psd = (lam[:, None] * sk).sum(axis=0) / lam.sum()
        dof = np.full(freqs.size, 2 * lam.sum() ** 2 / (lam**2).sum())

    return Spectrum(
        freqs=freqs,
        psd=_one_sided(psd, n),
        dof=dof,
        converged=converged,
        iterations=iters,
        residuals=residuals,
    )


def multitaper_cross(x, y, cfg: SpectralConfig | None = None) -> CrossSpectrum:
    """Eigenvalue-weighted cross spectrum, coherency and phase of ``x`` and ``y``.

    ``phase`` follows ``arg(sum_k X_k conj(Y_k))`` so a ``y`` delayed by ``d``
    samples has phase ``2 pi f d``.
    """
    cfg = cfg or SpectralConfig()
    if cfg.k < 2:
        raise ConfigError("cross spectra need k >= 2 tapers")
    x = _prepare(x, cfg)
    y = _prepare(y, cfg)
    if x.size != y.size:
        raise InputError(f"series lengths differ: {x.size} vs {y.size}")
    n = x.size
    tapers, lam = dpss_tapers(n, cfg.nw, cfg.k)
    xk = _eigencoefficients(x, tapers)
    yk = _eigencoefficients(y, tapers)
    wts = lam[:, None] / lam.sum()
    sxy = (wts * xk * np.conj(yk)).sum(axis=0)
    sxx = (wts * np.abs(xk) ** 2).sum(axis=0)
    syy = (wts * np.abs(yk) ** 2).sum(axis=0)
    denom = sxx * syy
    coh = np.zeros(sxy.size)
    ok = denom > 0
    coh[ok] = np.abs(sxy[ok]) ** 2 / denom[ok]
    phase = np.angle(sxy)
    phase[phase <= -np.pi] = np.pi
    return CrossSpectrum(
        freqs=np.fft.rfftfreq(n, d=1.0),
        coherency=coh,
        phase=phase,
        csd=_one_sided(sxy, n),
        psd_x=_one_sided(sxx, n),
        psd_y=_one_sided(syy, n),
    )


@dataclass
class Peak:
    """Spectral line located near a target frequency.

    ``freq`` is the midpoint of the half-power lobe around the highest
    point (``argmax``). A multitaper line is a plateau about ``2 nw`` bins
    wide whose top is flat to a fraction of a percent, so ``argmax`` can sit
    anywhere on it; the lobe midpoint is the stable location estimate.
    """

    freq: float
    argmax: int
    lo: float
    hi: float
    power: float
    prominence: float

    @property
    def period(self) -> float:
        return 1.0 / self.freq if self.freq > 0 else float("inf")


def find_peak(freqs, psd, f0: float, halfwidth: int) -> Peak:
    """Locate the spectral line nearest ``f0``.

    Parameters
    ----------
    freqs, psd : arrays on a uniform frequency grid
    f0 : float
        Target frequency.
    halfwidth : int
        Search half-width in bins, normally the taper bandwidth ``nw`` plus
        a little slack.

    Notes
    -----
    ``prominence`` is the peak power over the median of the spectrum
    (zero frequency excluded), a background level that line spectra with
    few harmonics leave untouched.
    """
    freqs = np.asarray(freqs, float)
    psd = np.asarray(psd, float)
    if freqs.size < 3 or psd.shape != freqs.shape:
        raise InputError("freqs and psd must be equal-length arrays of 3 or more points")
    df = freqs[1] - freqs[0]
    i0 = int(round((f0 - freqs[0]) / df))
    hw = max(1, int(halfwidth))
    a, b = max(0, i0 - hw), min(freqs.size, i0 + hw + 1)
    if a >= b:
        raise InputError(f"target frequency {f0} outside the spectrum")
    j = a + int(np.argmax(psd[a:b]))
    half = psd[j] / 2.0

    def edge(step):
        i = j
        while 0 <= i + step < psd.size and psd[i + step] >= half:
            i += step
        k = i + step
        if not 0 <= k < psd.size:
            return freqs[i]
        # linear interpolation of the half-power crossing
        frac = (psd[i] - half) / (psd[i] - psd[k])
        return freqs[i] + step * frac * df

    lo, hi = edge(-1), edge(+1)
    ref = float(np.median(psd[1:]))
    prom = float(psd[j] / ref) if ref > 0 else float("inf")
    return Peak(freq=0.5 * (lo + hi), argmax=j, lo=lo, hi=hi, power=float(psd[j]), prominence=prom)
