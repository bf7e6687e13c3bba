"""Gateway preprocessing toolbox: FFT, EMG features, HRV, fall detection.

All functions are pure; per-patient rolling state (the spike baseline)
lives in EmgFeatureExtractor. The FFT is a hand-rolled iterative radix-2
Cooley-Tukey transform with precomputed twiddle factors; tests check it
against a naive DFT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from collections import deque
from statistics import median
from typing import Sequence

import numpy as np


class NotPowerOfTwo(ValueError):
    code = "NOT_POWER_OF_TWO"


class TooFewIntervals(ValueError):
    code = "TOO_FEW_INTERVALS"


@dataclass(frozen=True)
class Spectrum:
    """One-sided magnitude spectrum of a real signal."""

    bin_hz: float
    magnitudes: tuple[float, ...]   # length n/2 + 1
    n: int

    def dominant_hz(self, skip_dc: bool = True) -> float:
        start = 1 if skip_dc else 0
        k = start + int(np.argmax(self.magnitudes[start:]))
        return k * self.bin_hz

    def band_power(self, lo_hz: float, hi_hz: float) -> float:
        """Signal power within [lo_hz, hi_hz], Parseval-scaled (mean square)."""
        power = 0.0
        for k, m in enumerate(self.magnitudes):
            f = k * self.bin_hz
            if lo_hz <= f <= hi_hz:
                # interior one-sided bins fold the conjugate half
                w = 1.0 if k == 0 or k == self.n // 2 else 2.0
                power += w * m * m
        return power / (self.n * self.n)

    def total_power(self) -> float:
        return self.band_power(0.0, (self.n // 2) * self.bin_hz)


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_complex(signal: Sequence[float]) -> np.ndarray:
    """Iterative radix-2 DIT FFT of a real or complex signal.

    Length must be a power of two, >= 8.
    """
    x = np.asarray(signal, dtype=np.complex128).copy()
    n = x.size
    if n < 8 or n & (n - 1):
        raise NotPowerOfTwo(f"FFT length must be a power of two >= 8, got {n}")
    x = x[_bit_reverse_indices(n)]
    m = 2
    while m <= n:
        half = m // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / m)
        for start in range(0, n, m):
            top = x[start:start + half].copy()
            bottom = x[start + half:start + m] * twiddle
            x[start:start + half] = top + bottom
            x[start + half:start + m] = top - bottom
        m <<= 1
    return x


def fft(signal: Sequence[float], sample_rate: float) -> Spectrum:
    """One-sided magnitude spectrum; bin_hz = sample_rate / n."""
    spectrum = fft_complex(signal)
    n = spectrum.size
    mags = np.abs(spectrum[: n // 2 + 1])
    return Spectrum(bin_hz=sample_rate / n, magnitudes=tuple(float(m) for m in mags), n=n)


# --------------------------------------------------------------------------
# EMG features
# --------------------------------------------------------------------------

EMG_BAND_LO_HZ = 50.0
EMG_BAND_HI_HZ = 150.0


@dataclass(frozen=True)
class EmgFeatures:
    rms_mv: float
    dominant_hz: float
    band_power_ratio: float   # power(50-150 Hz) / total power
    spike_flag: bool


def emg_features(
    window_mv: Sequence[float],
    sample_rate: float,
    baseline_ratio: float | None = None,
    spike_factor: float = 3.0,
) -> EmgFeatures:
    """Summarize one EMG window.

    RMS comes from the raw samples; spectral features use a Hann window.
    spike_flag is set when the 50-150 Hz power ratio exceeds spike_factor
    times `baseline_ratio` (the caller's rolling median); with no baseline
    the flag stays False.
    """
    x = np.asarray(window_mv, dtype=np.float64)
    rms = float(np.sqrt(np.mean(x * x)))
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(x.size) / x.size)
    spec = fft(x * hann, sample_rate)
    total = spec.total_power()
    if total <= 0.0:
        return EmgFeatures(rms_mv=rms, dominant_hz=0.0, band_power_ratio=0.0, spike_flag=False)
    ratio = spec.band_power(EMG_BAND_LO_HZ, EMG_BAND_HI_HZ) / total
    ratio = min(1.0, max(0.0, ratio))
    spike = baseline_ratio is not None and ratio > spike_factor * baseline_ratio
    return EmgFeatures(
        rms_mv=rms,
        dominant_hz=spec.dominant_hz(skip_dc=True),
        band_power_ratio=ratio,
        spike_flag=spike,
    )


class EmgFeatureExtractor:
    """Per-patient EMG feature extraction with a rolling spike baseline."""

    def __init__(self, sample_rate: float, spike_factor: float = 3.0, history: int = 32):
        self.sample_rate = sample_rate
        self.spike_factor = spike_factor
        self._ratios: deque[float] = deque(maxlen=history)

    def extract(self, window_mv: Sequence[float]) -> EmgFeatures:
        baseline = median(self._ratios) if self._ratios else None
        feats = emg_features(window_mv, self.sample_rate, baseline, self.spike_factor)
        self._ratios.append(feats.band_power_ratio)
        return feats


# --------------------------------------------------------------------------
# HRV
# --------------------------------------------------------------------------

def hrv_rmssd(rr_intervals_ms: Sequence[float]) -> float:
    """Root mean square of successive RR-interval differences, in ms."""
    rr = np.asarray(rr_intervals_ms, dtype=np.float64)
    if rr.size < 2:
        raise TooFewIntervals("RMSSD needs at least 2 RR intervals")
    if np.any(rr <= 0):
        raise ValueError("RR intervals must be positive")
    diffs = np.diff(rr)
    return float(np.sqrt(np.mean(diffs * diffs)))


def hrv_sdnn(rr_intervals_ms: Sequence[float]) -> float:
    """Standard deviation of RR intervals, the alternative HRV statistic."""
    rr = np.asarray(rr_intervals_ms, dtype=np.float64)
    if rr.size < 2:
        raise TooFewIntervals("SDNN needs at least 2 RR intervals")
    if np.any(rr <= 0):
        raise ValueError("RR intervals must be positive")
    return float(np.std(rr))


# --------------------------------------------------------------------------
# fall detection
# --------------------------------------------------------------------------

FREE_FALL_G = 0.5
FREE_FALL_MIN_MS = 200.0
IMPACT_G = 2.5
IMPACT_WITHIN_MS = 500.0
ORIENTATION_MIN_DEG = 60.0
ORIENTATION_SUSTAIN_MS = 2000.0


@dataclass(frozen=True)
class FallEvent:
    impact_index: int
    impact_ts_ms: int
    free_fall_ms: float
    impact_g: float
    orientation_change_deg: float


def _angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    cos = float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
    return math.degrees(math.acos(cos))


def detect_fall(
    accel_window: Sequence[tuple[float, float, float]],
    sample_rate: float,
    start_ts_ms: int = 0,
    gyro_window: Sequence[tuple[float, float, float]] | None = None,
) -> FallEvent | None:
    """Threshold fall detector: free fall, then impact, then orientation shift.

    Fires iff |a| < 0.5 g for >= 200 ms, an impact |a| >= 2.5 g arrives
    within 500 ms of the free fall ending, and the gravity direction then
    differs from the pre-fall direction by > 60 degrees for >= 2 s.
    Orientation is taken from the smoothed accelerometer gravity vector;
    gyro samples, when given, must be time-aligned with the accel window.
    """
    acc = np.asarray(accel_window, dtype=np.float64)
    if acc.ndim != 2 or acc.shape[1] != 3:
        raise ValueError("accel window must be Nx3")
    if gyro_window is not None and len(gyro_window) != len(acc):
        raise ValueError("gyro window must be time-aligned with accel window")
    n = acc.shape[0]
    step_ms = 1000.0 / sample_rate
    mag = np.linalg.norm(acc, axis=1)
    min_ff = max(1, int(round(FREE_FALL_MIN_MS / step_ms)))

    i = 0
    while i < n:
        if mag[i] >= FREE_FALL_G:
            i += 1
            continue
        j = i
        while j < n and mag[j] < FREE_FALL_G:
            j += 1
        if j - i < min_ff:
            i = j
            continue
        # free fall [i, j); look for impact within the window after it
        impact_limit = min(n, j + int(round(IMPACT_WITHIN_MS / step_ms)) + 1)
        impact = None
        for k in range(j, impact_limit):
            if mag[k] >= IMPACT_G:
                impact = k
                break
        if impact is None:
            i = j
            continue
        # pre-fall gravity direction over up to 1 s before free fall
        pre_lo = max(0, i - int(round(1000.0 / step_ms)))
        if pre_lo == i:
            i = j
            continue
        pre_dir = acc[pre_lo:i].mean(axis=0)
        # orientation must stay shifted for the sustain window after impact
        settle = impact + int(round(200.0 / step_ms))
        sustain_end = settle + int(round(ORIENTATION_SUSTAIN_MS / step_ms))
        if sustain_end > n:
            i = j
            continue
        chunk = max(1, int(round(250.0 / step_ms)))
        angles = []
        sustained = True
        for lo in range(settle, sustain_end, chunk):
            seg = acc[lo:min(lo + chunk, sustain_end)]
            ang = _angle_deg(pre_dir, seg.mean(axis=0))
            angles.append(ang)
            if ang <= ORIENTATION_MIN_DEG:
                sustained = False
                break
        if not sustained:
            i = j
            continue
        return FallEvent(
            impact_index=impact,
            impact_ts_ms=int(start_ts_ms + round(impact * step_ms)),
            free_fall_ms=(j - i) * step_ms,
            impact_g=float(mag[impact]),
            orientation_change_deg=float(max(angles)),
        )
    return None
