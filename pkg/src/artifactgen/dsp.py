"""Deterministic signal-processing primitives shared by training losses and evaluation.

Welch PSD, band power, autocorrelation, channel covariance and STFT magnitude,
all computed in double precision on raw numpy arrays. Conventions:

- Welch: periodic Hann taper, per-segment mean removal, density scaling
  (integral of a unit-variance white-noise PSD over [0, fs/2] is ~1).
- Band integration: rectangle rule over bins with lo <= f < hi.
- ACF: biased normalized estimator, so |r| <= 1 and r[0] = 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Psd",
    "BandSpec",
    "CANONICAL_BANDS",
    "canonical_bands",
    "welch_psd",
    "band_power",
    "autocorrelation",
    "channel_covariance",
    "stft_magnitude",
]


@dataclass(frozen=True)
class Psd:
    """One-sided power spectral density on a uniform frequency grid."""

    freqs: np.ndarray   # Hz, ascending, freqs[0] == 0
    power: np.ndarray   # density, >= 0, same length as freqs
    nperseg: int
    noverlap: int

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0])


@dataclass(frozen=True)
class BandSpec:
    """Half-open frequency band [lo, hi) in Hz."""

    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"band {self.name}: lo must be < hi, got [{self.lo}, {self.hi})")


# Standard clinical band edges; gamma capped at 100 Hz.
CANONICAL_BANDS = (
    BandSpec("delta", 0.5, 4.0),
    BandSpec("theta", 4.0, 8.0),
    BandSpec("alpha", 8.0, 13.0),
    BandSpec("beta", 13.0, 30.0),
    BandSpec("gamma", 30.0, 100.0),
)


def canonical_bands(fs: float) -> tuple[BandSpec, ...]:
    """Canonical bands with upper edges clipped to the Nyquist frequency."""
    nyq = fs / 2.0
    out = []
    for b in CANONICAL_BANDS:
        if b.lo >= nyq:
            continue
        out.append(BandSpec(b.name, b.lo, min(b.hi, nyq)))
    return tuple(out)


def _hann_periodic(n: int) -> np.ndarray:
    # Periodic Hann (DFT-even), the spectral-analysis variant.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def welch_psd(
    x: np.ndarray,
    fs: float,
    nperseg: int | None = None,
    overlap_frac: float = 0.5,
    detrend: bool = True,
) -> Psd:
    """Averaged periodogram over Hann-tapered segments.

    Segments start every ``floor((1 - overlap_frac) * nperseg)`` samples; each
    is mean-removed (when ``detrend``), tapered and transformed. Scaling is
    density-style: ``|X_k|^2 / (fs * sum(w^2))`` with one-sided doubling.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected 1D signal, got shape {x.shape}")
    if fs <= 0:
        raise ValueError("fs must be > 0")
    n = x.shape[0]
    if nperseg is None:
        nperseg = min(n, 256)
    if nperseg == 0:
        raise ValueError("nperseg must be >= 1")
    if nperseg > n:
        raise ValueError(f"segment longer than signal (nperseg={nperseg}, L={n})")
    if not 0.0 <= overlap_frac < 1.0:
        raise ValueError("overlap_frac must be in [0, 1)")

    step = int(np.floor((1.0 - overlap_frac) * nperseg))
    step = max(step, 1)
    win = _hann_periodic(nperseg)
    scale = 1.0 / (fs * np.sum(win ** 2))
    nbins = nperseg // 2 + 1

    acc = np.zeros(nbins)
    nseg = 0
    for start in range(0, n - nperseg + 1, step):
        seg = x[start : start + nperseg]
        if detrend:
            seg = seg - seg.mean()
        spec = np.fft.rfft(seg * win)
        p = (spec.real ** 2 + spec.imag ** 2) * scale
        p[1:] *= 2.0
        if nperseg % 2 == 0:
            p[-1] /= 2.0
        acc += p
        nseg += 1

    freqs = np.fft.rfftfreq(nperseg, d=1.0 / fs)
    return Psd(freqs=freqs, power=acc / nseg, nperseg=nperseg, noverlap=nperseg - step)


def band_power(psd: Psd, band: BandSpec) -> float:
    """Rectangle-rule integral of ``psd.power`` over bins with lo <= f < hi.

    An empty band (no bins inside) yields 0 with a warning.
    """
    mask = (psd.freqs >= band.lo) & (psd.freqs < band.hi)
    if not np.any(mask):
        warnings.warn(f"band {band.name} [{band.lo}, {band.hi}) contains no PSD bins", stacklevel=2)
        return 0.0
    return float(np.sum(psd.power[mask]) * psd.df)


def autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased normalized autocorrelation, r[0..max_lag].

    r[tau] = sum_t (x_t - mean)(x_{t+tau} - mean) / sum_t (x_t - mean)^2.
    Zero-variance signals are degenerate: r[0] = 1, the rest 0, with a warning.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if max_lag >= n:
        raise ValueError(f"max_lag must be < signal length ({max_lag} >= {n})")
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    r = np.zeros(max_lag + 1)
    r[0] = 1.0
    if denom == 0.0 or np.ptp(x) == 0.0:
        warnings.warn("zero-variance signal: autocorrelation is degenerate", stacklevel=2)
        return r
    for tau in range(1, max_lag + 1):
        r[tau] = np.dot(xc[:-tau], xc[tau:]) / denom
    return r


def channel_covariance(w: np.ndarray) -> np.ndarray:
    """Sample covariance (C x C) across time, per-channel mean removed, divisor L-1."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"expected (C, L) window, got shape {w.shape}")
    length = w.shape[1]
    if length < 2:
        raise ValueError("need at least 2 samples for covariance")
    wc = w - w.mean(axis=1, keepdims=True)
    return wc @ wc.T / (length - 1)


def stft_magnitude(x: np.ndarray, nfft: int, hop: int) -> np.ndarray:
    """Hann-windowed frame magnitudes, shape (frames, nfft//2 + 1).

    Frame count is floor((L - nfft) / hop) + 1; frames start at multiples of hop.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if nfft > n:
        raise ValueError(f"nfft={nfft} exceeds signal length {n}")
    if nfft < 1 or hop < 1:
        raise ValueError("nfft and hop must be >= 1")
    win = _hann_periodic(nfft)
    nframes = (n - nfft) // hop + 1
    out = np.empty((nframes, nfft // 2 + 1))
    for i in range(nframes):
        seg = x[i * hop : i * hop + nfft]
        out[i] = np.abs(np.fft.rfft(seg * win))
    return out
