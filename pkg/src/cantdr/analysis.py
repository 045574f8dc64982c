"""Comparison of a reference and an actual TDR trace.

Four scores are available: mean squared error, lag-maximised cross-correlation,
a relative Sobolev-norm distance (RQCC) and the extended coherence score K,
which sums coherence dips weighted by the cross-spectral phase at each dip.
Every function is pure.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sim.waveform import Waveform

DEFAULT_SEGMENT = 64
DEFAULT_OVERLAP = 0.5
DEFAULT_TAPER = "hann"
DEFAULT_PEAK_THRESHOLD = 0.2
FLOOR_RELATIVE = 1e-12


@dataclass(frozen=True, eq=False)
class SignalWindow:
    samples: np.ndarray
    dt: float
    origin_index: int = 0

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("window must be a non-empty 1-D array")

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True, eq=False)
class Spectrum:
    frequencies: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.frequencies.shape != self.values.shape:
            raise ValueError("frequencies and values differ in length")
        if self.frequencies.size == 0 or self.frequencies[0] != 0 or np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("frequencies must start at 0 and increase strictly")


@dataclass(frozen=True, eq=False)
class CoherenceResult:
    frequencies: np.ndarray
    coherence: np.ndarray
    cross_phase: np.ndarray
    peaks: list[tuple[float, float, float]]  # (frequency, 1 - C, |phase|)
    score_k: float


def _pair(a: SignalWindow, b: SignalWindow) -> tuple[np.ndarray, np.ndarray]:
    if len(a) != len(b):
        raise ValueError(f"window lengths differ: {len(a)} vs {len(b)}")
    if not np.isclose(a.dt, b.dt, rtol=1e-9, atol=0):
        raise ValueError("windows differ in sample interval")
    return a.samples, b.samples


def extract_window(ref: Waveform, act: Waveform, length: int) -> tuple[SignalWindow, SignalWindow]:
    """Cut equal windows centred on the largest |act - ref| (earliest on ties)."""
    if not ref.compatible(act):
        raise ValueError("reference and actual waveforms differ in sampling")
    n = len(ref)
    if not 0 < length <= n:
        raise ValueError(f"window length {length} outside 1..{n}")
    diff = np.abs(act.samples - ref.samples)
    centre = int(np.argmax(diff))
    start = min(max(centre - length // 2, 0), n - length)
    sl = slice(start, start + length)
    return (SignalWindow(ref.samples[sl], ref.dt, start),
            SignalWindow(act.samples[sl], act.dt, start))


def mse(a: SignalWindow, b: SignalWindow) -> float:
    x, y = _pair(a, b)
    return float(np.mean((x - y) ** 2))


def xcorr_score(a: SignalWindow, b: SignalWindow) -> float:
    """Normalised cross-correlation at the lag of largest magnitude, |lag| <= N/4.

    The sign is kept, so an inverted copy scores -1. Ties go to the smallest
    |lag|, then to the negative lag.
    """
    x, y = _pair(a, b)
    x = x - x.mean()
    y = y - y.mean()
    denom = np.sqrt(np.dot(x, x) * np.dot(y, y))
    if denom == 0:
        raise ValueError("cross-correlation undefined for a zero-variance window")
    n = x.size
    max_lag = n // 4
    full = np.correlate(y, x, mode="full") / denom  # index n-1+k holds sum x[i] y[i+k]
    lags = np.arange(-max_lag, max_lag + 1)
    r = full[n - 1 + lags]
    order = np.lexsort((lags, np.abs(lags), -np.abs(r)))
    return float(np.clip(r[order[0]], -1.0, 1.0))


def sobolev_norm_sq(f: np.ndarray, order_s: float) -> float:
    """sum over DFT bins of (1 + w^2)^s |F(w)|^2, w in rad/sample."""
    spec = np.fft.fft(f)
    w = 2 * np.pi * np.fft.fftfreq(f.size)
    return float(np.sum((1.0 + w ** 2) ** order_s * np.abs(spec) ** 2))


def rqcc(a: SignalWindow, b: SignalWindow, order_s: float = 1.0) -> float:
    """Relative Sobolev distance ||a - b||_{H^s} / ||b||_{H^s}; 0 means identical."""
    if order_s < 0:
        raise ValueError("Sobolev order must be non-negative")
    x, y = _pair(a, b)
    ref = sobolev_norm_sq(y, order_s)
    if ref == 0:
        raise ValueError("reference window has zero Sobolev norm")
    return float(np.sqrt(sobolev_norm_sq(x - y, order_s) / ref))


def _taper(name: str, n: int) -> np.ndarray:
    if name == "hann":
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)  # periodic
    if name == "rectangular":
        return np.ones(n)
    raise ValueError(f"unknown taper {name!r}")


def segment_starts(n: int, segment_len: int, overlap: float) -> np.ndarray:
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    if not 0 < segment_len <= n:
        raise ValueError(f"segment length {segment_len} outside 1..{n}")
    step = max(1, int(round(segment_len * (1 - overlap))))
    return np.arange(0, n - segment_len + 1, step)


def welch_spectra(x: SignalWindow, y: SignalWindow, segment_len: int = DEFAULT_SEGMENT,
                  overlap: float = DEFAULT_OVERLAP, taper: str = DEFAULT_TAPER
                  ) -> tuple[Spectrum, Spectrum, Spectrum]:
    """Segment-averaged one-sided densities Pxx, Pyy and Pxy = <conj(X) Y>."""
    xs, ys = _pair(x, y)
    starts = segment_starts(xs.size, segment_len, overlap)
    if starts.size < 2:
        raise ValueError("Welch estimate needs at least two segments")
    win = _taper(taper, segment_len)
    idx = starts[:, None] + np.arange(segment_len)
    fx = np.fft.rfft(xs[idx] * win, axis=1)
    fy = np.fft.rfft(ys[idx] * win, axis=1)
    scale = np.full(fx.shape[1], 2.0 * x.dt / np.dot(win, win))
    scale[0] /= 2
    if segment_len % 2 == 0:
        scale[-1] /= 2
    pxx = scale * np.mean((fx.conj() * fx).real, axis=0)
    pyy = scale * np.mean((fy.conj() * fy).real, axis=0)
    pxy = scale * np.mean(fx.conj() * fy, axis=0)
    freqs = np.fft.rfftfreq(segment_len, x.dt)
    return Spectrum(freqs, pxx), Spectrum(freqs, pyy), Spectrum(freqs, pxy)


def white_noise_density(sigma: float, dt: float) -> float:
    """Expected one-sided Welch density of white noise with per-sample std ``sigma``."""
    return 2.0 * sigma ** 2 * dt


def coherence(pxx: Spectrum, pyy: Spectrum, pxy: Spectrum, floor: Optional[float] = None) -> np.ndarray:
    """Magnitude-squared coherence |Pxy|^2 / (Pxx Pyy), clamped to [0, 1].

    Bins whose Pxx*Pyy falls below ``floor`` carry no evidence and get C = 1.
    The default floor is 1e-12 * max(Pxx) * max(Pyy).
    """
    if not (np.array_equal(pxx.frequencies, pyy.frequencies)
            and np.array_equal(pxx.frequencies, pxy.frequencies)):
        raise ValueError("spectra are on different frequency grids")
    sxx, syy = pxx.values.real, pyy.values.real
    if floor is None:
        floor = FLOOR_RELATIVE * float(np.max(sxx)) * float(np.max(syy))
    denom = sxx * syy
    ok = denom > floor
    c = np.ones_like(denom)
    c[ok] = np.abs(pxy.values[ok]) ** 2 / denom[ok]
    return np.clip(c, 0.0, 1.0)


def find_peaks(values: np.ndarray, threshold: float) -> list[int]:
    """Indices of strict local maxima above ``threshold``.

    A flat top counts once, at its lowest index; array ends count as lower
    neighbours.
    """
    peaks = []
    n = values.size
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[j + 1] == values[i]:
            j += 1
        left_ok = i == 0 or values[i - 1] < values[i]
        right_ok = j == n - 1 or values[j + 1] < values[j]
        if left_ok and right_ok and values[i] > threshold:
            peaks.append(i)
        i = j + 1
    return peaks


def extended_coherence(ref: SignalWindow, act: SignalWindow, segment_len: int = DEFAULT_SEGMENT,
                       overlap: float = DEFAULT_OVERLAP, taper: str = DEFAULT_TAPER,
                       peak_threshold: float = DEFAULT_PEAK_THRESHOLD,
                       floor: Optional[float] = None) -> CoherenceResult:
    """Coherence dips weighted by |cross-spectral phase|, summed over peaks into K."""
    pxx, pyy, pxy = welch_spectra(ref, act, segment_len, overlap, taper)
    c = coherence(pxx, pyy, pxy, floor)
    phase = np.angle(pxy.values)
    dip = 1.0 - c
    idx = find_peaks(dip, peak_threshold)
    peaks = [(float(pxx.frequencies[i]), float(dip[i]), float(abs(phase[i]))) for i in idx]
    score = float(sum(d * w for _, d, w in peaks))
    return CoherenceResult(pxx.frequencies, c, phase, peaks, score)
