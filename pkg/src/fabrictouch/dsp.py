"""Welch power spectral density of audio windows, bandwidth truncation, noise mixing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .dataset import SAMPLE_RATE, WINDOW
from .errors import BadLength, LengthMismatch

SEGMENT = 1024
OVERLAP = 512
N_BINS = SEGMENT // 2
BIN_WIDTH = SAMPLE_RATE / SEGMENT  # 46.875 Hz
BANDWIDTHS = (2500.0, 10000.0, 15000.0, 24000.0)
FULL_SCALE = 32768.0
INT16_MIN, INT16_MAX = -32768, 32767


@dataclass(frozen=True)
class PsdFeature:
    """One-sided PSD with the DC bin removed.

    ``bins[..., i]`` is the density at ``(i + 1) * bin_width`` Hz, in
    full-scale units squared per Hz.
    """

    bins: np.ndarray
    bin_width: float = BIN_WIDTH
    max_freq: float = SAMPLE_RATE / 2

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(1, self.bins.shape[-1] + 1) * self.bin_width


def welch_psd(window, rate: int = SAMPLE_RATE) -> PsdFeature:
    """Welch PSD of one or more 2048-sample windows.

    Hann segments of 1024 samples with 50% overlap (three segments), mean
    removed per segment, periodograms averaged. Accepts int16 PCM (scaled to
    [-1, 1)) or floats already in full-scale units; leading axes are batch
    axes.
    """
    x = np.asarray(window)
    if x.shape[-1:] != (WINDOW,):
        raise BadLength(f"window length {x.shape[-1] if x.ndim else 0}, expected {WINDOW}")
    if np.issubdtype(x.dtype, np.integer):
        x = x.astype(np.float64) / FULL_SCALE
    _, pxx = signal.welch(
        x, fs=rate, window="hann", nperseg=SEGMENT, noverlap=OVERLAP,
        detrend="constant", scaling="density", return_onesided=True, axis=-1,
    )
    return PsdFeature(pxx[..., 1:], bin_width=rate / SEGMENT, max_freq=rate / 2)


def n_bins_for(max_freq: float, bin_width: float = BIN_WIDTH) -> int:
    return min(math.floor(max_freq / bin_width + 1e-9), N_BINS)


def truncate_bandwidth(psd: PsdFeature, max_freq: float) -> PsdFeature:
    """Keep the bins whose centre frequency is at most ``max_freq``."""
    if max_freq > SAMPLE_RATE / 2:
        raise ValueError(f"max_freq {max_freq} above Nyquist")
    k = min(n_bins_for(max_freq, psd.bin_width), psd.bins.shape[-1])
    return PsdFeature(psd.bins[..., :k], psd.bin_width, min(max_freq, psd.max_freq))


def band_power(psd: PsdFeature, lo: float, hi: float) -> np.ndarray:
    """Integrated power between ``lo`` and ``hi`` Hz (inclusive bin centres)."""
    f = psd.freqs
    sel = (f >= lo) & (f <= hi)
    return psd.bins[..., sel].sum(axis=-1) * psd.bin_width


def mix_noise(window, noise, gain: float) -> np.ndarray:
    """``window + gain * noise`` rounded and clipped to the int16 range."""
    w = np.asarray(window)
    n = np.asarray(noise)
    if w.shape != n.shape:
        raise LengthMismatch(f"window {w.shape} vs noise {n.shape}")
    if gain == 0:
        return w.astype(np.int16, copy=True)
    mixed = np.rint(w.astype(np.float64) + gain * n.astype(np.float64))
    return np.clip(mixed, INT16_MIN, INT16_MAX).astype(np.int16)


def level_db(samples) -> float:
    """RMS level in dB relative to full scale."""
    x = np.asarray(samples, dtype=np.float64) / FULL_SCALE
    return 10 * math.log10(max(float(np.mean(x * x)), 1e-30))


def calibrate_noise_gain(ambient, noise, increase_db: float = 20.0, band: tuple[float, float] = (100.0, 2000.0)) -> float:
    """Gain that puts ``noise`` ``increase_db`` above ``ambient`` in ``band``.

    Both inputs are taken in int16 PCM counts whatever their dtype.
    Power is compared on Welch PSDs averaged over all full 2048-sample
    windows of each signal. The default of 20 dB corresponds to going from
    a ~30 dB quiet room to ~50 dB cafe noise.
    """
    def mean_band(x):
        # both signals are in PCM counts, matching mix_noise
        x = np.asarray(x, dtype=np.float64) / FULL_SCALE
        nwin = len(x) // WINDOW
        if nwin == 0:
            raise BadLength(f"need at least {WINDOW} samples to calibrate")
        psd = welch_psd(x[: nwin * WINDOW].reshape(nwin, WINDOW))
        return float(band_power(psd, *band).mean())

    p_amb = mean_band(ambient)
    p_noise = mean_band(noise)
    if p_noise <= 0:
        raise ValueError("noise has no power in the calibration band")
    return math.sqrt(p_amb * 10 ** (increase_db / 10) / p_noise)
