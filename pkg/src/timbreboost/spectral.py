"""STFT magnitude spectrograms and Mel filterbanks."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio_io import FrameSequence, hamming_coefficients


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # (frame_length // 2 + 1, frame_count)
    bin_hz: float
    sample_rate_hz: int

    @property
    def n_bins(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[1]

    def with_magnitudes(self, magnitudes) -> "Spectrogram":
        return Spectrogram(np.asarray(magnitudes), self.bin_hz, self.sample_rate_hz)


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (M, bins)
    edge_frequencies_hz: np.ndarray  # M + 2 edges, equally spaced in mel

    @property
    def M(self) -> int:
        return self.weights.shape[0]


def stft(frames: FrameSequence) -> Spectrogram:
    """Hamming-window each frame and keep the one-sided DFT magnitudes."""
    n = frames.frame_length
    if frames.frame_count == 0:
        raise ValueError("empty frame sequence")
    if n & (n - 1):
        raise ValueError(f"frame length must be a power of two, got {n}")
    windowed = frames.frames * hamming_coefficients(n)
    mags = np.abs(np.fft.rfft(windowed, axis=1)).T
    return Spectrogram(np.ascontiguousarray(mags), frames.sample_rate_hz / n, frames.sample_rate_hz)


def power_spectrum(spec: Spectrogram) -> np.ndarray:
    return spec.magnitudes ** 2


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    mel = 2595.0 * np.log1p(f / 700.0) / np.log(10.0)
    return float(mel) if mel.ndim == 0 else mel


def mel_to_hz(m):
    hz = 700.0 * np.expm1(np.asarray(m, dtype=np.float64) * np.log(10.0) / 2595.0)
    return float(hz) if hz.ndim == 0 else hz


@lru_cache(maxsize=32)
def _filterbank(M, frame_length, sample_rate_hz, f_min, f_max):
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), M + 2))
    # pin the outer edges against round-trip drift
    edges[0], edges[-1] = f_min, f_max
    freqs = np.arange(frame_length // 2 + 1) * (sample_rate_hz / frame_length)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    peaks = weights.max(axis=1)
    if np.any(peaks == 0):
        empty = np.flatnonzero(peaks == 0).tolist()
        raise ValueError(f"Mel filters {empty} contain no FFT bins; use fewer filters or longer frames")
    weights /= peaks[:, None]
    weights.setflags(write=False)
    edges.setflags(write=False)
    return MelFilterbank(weights, edges)


def build_mel_filterbank(M: int, frame_length: int, sample_rate_hz: int,
                         f_min: float = 0.0, f_max: float | None = None) -> MelFilterbank:
    """Triangular filters equally spaced on the Mel scale, each peak-normalized to 1.

    Triangles are evaluated at the bin centre frequencies and then scaled so
    the largest sampled value of every filter is exactly 1. Filter m's centre
    is filter m+1's lower edge.
    """
    if f_max is None:
        f_max = sample_rate_hz / 2
    if M < 1:
        raise ValueError("need at least one filter")
    if not 0 <= f_min < f_max <= sample_rate_hz / 2:
        raise ValueError(f"invalid frequency range {f_min}..{f_max} Hz at {sample_rate_hz} Hz")
    return _filterbank(int(M), int(frame_length), int(sample_rate_hz), float(f_min), float(f_max))


def save_spectrogram(spec: Spectrogram, path, delimiter: str = ",") -> None:
    """Dump magnitudes as delimited text, one row per bin."""
    np.savetxt(path, spec.magnitudes, delimiter=delimiter, fmt="%.10g")
