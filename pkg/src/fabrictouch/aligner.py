"""Frame/audio alignment: the most recent 2048 audio samples before each frame."""

from __future__ import annotations

import math

import numpy as np

from .dataset import SAMPLE_RATE, WINDOW
from .errors import Underflow

# absorbs float error in t * rate for timestamps that sit exactly on a sample
_EPS_SAMPLES = 1e-6


def end_sample(t: float, rate: int = SAMPLE_RATE, t0: float = 0.0) -> int:
    """Exclusive end index of the window preceding time ``t`` (floor rule)."""
    return math.floor((t - t0) * rate + _EPS_SAMPLES)


def window_bounds(t: float, rate: int = SAMPLE_RATE, t0: float = 0.0, length: int = WINDOW) -> tuple[int, int]:
    end = end_sample(t, rate, t0)
    if end < length:
        raise Underflow(f"only {max(end, 0)} samples recorded before t={t:.6f}s, need {length}")
    return end - length, end


def align_indices(timestamps, rate: int = SAMPLE_RATE, t0: float = 0.0) -> np.ndarray:
    """Window end offsets for a whole timestamp column."""
    ends = np.array([end_sample(float(t), rate, t0) for t in timestamps], dtype=np.int64)
    if len(ends) and ends.min() < WINDOW:
        raise Underflow(f"first frame at t={float(timestamps[0]):.4f}s has fewer than {WINDOW} samples before it")
    return ends


def windows_from_align(stream: np.ndarray, ends: np.ndarray, length: int = WINDOW) -> np.ndarray:
    """Offline replay: slice ``(len(ends), length)`` windows straight from ``align.csv`` offsets."""
    ends = np.asarray(ends, dtype=np.int64)
    if len(ends) and (ends.min() < length or ends.max() > len(stream)):
        raise Underflow("alignment offset outside the recorded stream")
    view = np.lib.stride_tricks.sliding_window_view(np.asarray(stream), length)
    return view[ends - length]


class AudioRing:
    """Fixed-capacity PCM ring buffer for one microphone.

    ``write_head`` counts every sample ever appended; sample ``k`` was taken
    at ``t0 + k / sample_rate``. One producer appends, one consumer queries.
    """

    def __init__(self, capacity: int = 4 * SAMPLE_RATE, sample_rate: int = SAMPLE_RATE, t0: float = 0.0,
                 dtype=np.int16):
        if capacity < WINDOW:
            raise ValueError(f"capacity must be at least {WINDOW} samples")
        self.buffer = np.zeros(capacity, dtype=dtype)
        self.sample_rate = sample_rate
        self.t0 = t0
        self.write_head = 0

    @property
    def capacity(self) -> int:
        return len(self.buffer)

    def append(self, samples) -> None:
        samples = np.asarray(samples, dtype=self.buffer.dtype)
        n = len(samples)
        if n >= self.capacity:
            samples = samples[-self.capacity:]
            self.write_head += n - self.capacity
            n = self.capacity
        pos = self.write_head % self.capacity
        first = min(n, self.capacity - pos)
        self.buffer[pos:pos + first] = samples[:first]
        self.buffer[:n - first] = samples[first:]
        self.write_head += n

    def read(self, start: int, stop: int) -> np.ndarray:
        """Copy absolute sample range ``[start, stop)``; it must still be buffered."""
        if stop > self.write_head or start < self.write_head - self.capacity or start < 0:
            raise Underflow(f"samples [{start}, {stop}) not in buffer (head {self.write_head})")
        idx = np.arange(start, stop) % self.capacity
        return self.buffer[idx]

    def window_before(self, t: float, length: int = WINDOW) -> np.ndarray:
        """The ``length`` samples ending at the last sample taken before ``t``.

        If ``t`` is ahead of the write head the window ends at the head, so it
        never includes samples that have not been recorded.
        """
        end = min(end_sample(t, self.sample_rate, self.t0), self.write_head)
        if end < length:
            raise Underflow(f"only {max(end, 0)} samples recorded before t={t:.6f}s, need {length}")
        return self.read(end - length, end)


def window_before(ring: AudioRing, t: float) -> np.ndarray:
    return ring.window_before(t)
