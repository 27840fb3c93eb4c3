"""Per-frame timbral descriptors, clip aggregation and channel fusion.

Channels and their per-frame features (each contributes mean and variance):

* time: zero-crossing rate, RMS energy
* frequency: spectral centroid, spread, roll-off, harmonic ratio
* cepstral: MFCC 1..L
* autocorr: autocorrelation peak lag and peak strength
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from .kvconfig import KeyValueConfig
from .audio_io import AudioClip, check_sample_rate, split_frames
from .spectral import MelFilterbank, Spectrogram, build_mel_filterbank, power_spectrum, stft

DOMAINS = ("time", "frequency", "cepstral", "autocorr")


@dataclass(frozen=True)
class FrameFeatureSeries:
    name: str
    values: np.ndarray


@dataclass(frozen=True)
class ChannelVector:
    domain: str
    values: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")


@dataclass(frozen=True)
class FusedFeatureVector:
    values: np.ndarray
    layout: tuple  # ((domain, start, stop), ...)
    names: tuple = ()

    @property
    def dimension(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class FeatureConfig(KeyValueConfig):
    domains: tuple = ("time", "frequency", "cepstral")
    sample_rate_hz: int = 44100
    frame_length: int = 1024
    hop: int = 512
    n_mfcc: int = 12
    n_mels: int = 40
    f_min: float = 0.0
    f_max: float | None = None
    rolloff_percentile: float = 0.85
    hpss_kernel: int = 17
    hpss_power: float = 2.0
    log_floor: float = 1e-10
    autocorr_min_lag: int = 2
    pad_tail: bool = True

    def __post_init__(self):
        bad = [d for d in self.domains if d not in DOMAINS]
        if bad or not self.domains:
            raise ValueError(f"invalid domains {self.domains!r}")
        if len(set(self.domains)) != len(self.domains):
            raise ValueError("duplicate domains")
        if self.n_mfcc > self.n_mels:
            raise ValueError("n_mfcc must not exceed n_mels")

    @property
    def ordered_domains(self) -> tuple:
        return tuple(d for d in DOMAINS if d in self.domains)


# -- frequency domain ------------------------------------------------------

def _normalized(mags):
    mags = np.asarray(mags, dtype=np.float64)
    total = mags.sum(axis=0)
    safe = np.where(total > 0, total, 1.0)
    return mags / safe, total > 0


def spectral_centroid(frame_magnitudes) -> float | np.ndarray:
    """Magnitude-weighted mean bin index; 0 for a silent frame.

    Accepts one frame (1-D) or a bins x frames matrix.
    """
    p, nonzero = _normalized(frame_magnitudes)
    k = np.arange(p.shape[0]).reshape((-1,) + (1,) * (p.ndim - 1))
    c = (k * p).sum(axis=0)
    return np.where(nonzero, c, 0.0) if p.ndim > 1 else (float(c) if nonzero else 0.0)


def spectral_spread(frame_magnitudes, centroid) -> float | np.ndarray:
    p, nonzero = _normalized(frame_magnitudes)
    k = np.arange(p.shape[0]).reshape((-1,) + (1,) * (p.ndim - 1))
    s = np.sqrt(np.maximum(((k - centroid) ** 2 * p).sum(axis=0), 0.0))
    return np.where(nonzero, s, 0.0) if p.ndim > 1 else (float(s) if nonzero else 0.0)


def spectral_rolloff(frame_magnitudes, percentile: float = 0.85) -> int | np.ndarray:
    """Smallest bin whose cumulative magnitude reaches `percentile` of the total."""
    if not 0 < percentile <= 1:
        raise ValueError("percentile must be in (0, 1]")
    mags = np.asarray(frame_magnitudes, dtype=np.float64)
    cum = np.cumsum(mags, axis=0)
    total = cum[-1]
    reached = cum >= percentile * total
    idx = np.argmax(reached, axis=0)
    idx = np.where(total > 0, idx, 0)
    return idx if mags.ndim > 1 else int(idx)


# -- time domain -----------------------------------------------------------

def zero_crossing_rate(frame) -> float | np.ndarray:
    """Half the summed sign differences, with sgn(0) = +1. Works on the last axis."""
    y = np.asarray(frame, dtype=np.float64)
    if y.shape[-1] < 2:
        raise ValueError("frame must hold at least 2 samples")
    s = np.where(y >= 0, 1.0, -1.0)
    z = 0.5 * np.abs(np.diff(s, axis=-1)).sum(axis=-1)
    return z if y.ndim > 1 else float(z)


def rms_energy(frame) -> float | np.ndarray:
    y = np.asarray(frame, dtype=np.float64)
    if y.shape[-1] < 1:
        raise ValueError("empty frame")
    r = np.sqrt(np.mean(y * y, axis=-1))
    return r if y.ndim > 1 else float(r)


# -- cepstral domain -------------------------------------------------------

def _dct_basis(M, L):
    k = np.arange(1, M + 1)
    n = np.arange(1, L + 1)
    return np.cos(np.pi * np.outer(n, k - 0.5) / M)  # (L, M)


def mfcc(power_frame, filterbank: MelFilterbank, L: int = 12, log_floor: float = 1e-10) -> np.ndarray:
    """Cepstral coefficients 1..L of one power frame or a bins x frames matrix.

    Returns shape (L,) or (L, frames).
    """
    power = np.asarray(power_frame, dtype=np.float64)
    if power.shape[0] != filterbank.weights.shape[1]:
        raise ValueError(f"power spectrum has {power.shape[0]} bins, filterbank expects "
                         f"{filterbank.weights.shape[1]}")
    if L > filterbank.M:
        raise ValueError("L must not exceed the number of Mel filters")
    energies = filterbank.weights @ power
    log_e = np.log(np.maximum(energies, log_floor))
    return _dct_basis(filterbank.M, L) @ log_e


# -- harmonic / percussive -------------------------------------------------

def hpss(spec: Spectrogram, kernel: int = 17, power: float = 2.0):
    """Median-filter soft-mask separation into harmonic and percussive parts.

    The harmonic estimate filters each bin along time, the percussive
    estimate filters each frame along frequency. Bins where both estimates
    are zero are split evenly.
    """
    S = spec.magnitudes
    harm = median_filter(S, size=(1, kernel), mode="reflect")
    perc = median_filter(S, size=(kernel, 1), mode="reflect")
    h_mask, p_mask = soft_masks(harm, perc, power)
    return spec.with_magnitudes(S * h_mask), spec.with_magnitudes(S * p_mask)


def soft_masks(harm, perc, power: float = 2.0):
    hp = harm ** power
    pp = perc ** power
    total = hp + pp
    zero = total == 0
    denom = np.where(zero, 1.0, total)
    h_mask = np.where(zero, 0.5, hp / denom)
    return h_mask, 1.0 - h_mask


def harmonic_ratio(harmonic: Spectrogram, percussive: Spectrogram) -> FrameFeatureSeries:
    if harmonic.magnitudes.shape != percussive.magnitudes.shape:
        raise ValueError("harmonic and percussive spectrograms differ in shape")
    eh = (harmonic.magnitudes ** 2).sum(axis=0)
    ep = (percussive.magnitudes ** 2).sum(axis=0)
    total = eh + ep
    ratio = np.where(total > 0, eh / np.where(total > 0, total, 1.0), 0.5)
    return FrameFeatureSeries("harmonic_ratio", ratio)


# -- autocorrelation -------------------------------------------------------

def autocorrelation(frame) -> np.ndarray:
    """Biased autocorrelation of the mean-removed frame, normalized so r(0) = 1.

    Returns all zeros for a frame that is constant.
    """
    y = np.asarray(frame, dtype=np.float64)
    y = y - y.mean()
    n = len(y)
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(y, nfft)
    r = np.fft.irfft(spec * np.conj(spec), nfft)[:n]
    if r[0] <= 0:
        return np.zeros(n)
    return r / r[0]


def autocorrelation_features(frame, min_lag: int = 2) -> tuple[float, float]:
    """(lag, strength) of the highest local autocorrelation maximum at lag >= min_lag."""
    y = np.asarray(frame, dtype=np.float64)
    if len(y) < 4:
        raise ValueError("frame must hold at least 4 samples")
    r = autocorrelation(y)
    lags = np.arange(max(min_lag, 1), len(r) - 1)
    if len(lags) == 0:
        return 0.0, 0.0
    peaks = lags[(r[lags] > r[lags - 1]) & (r[lags] >= r[lags + 1])]
    if len(peaks) == 0:
        return 0.0, 0.0
    best = peaks[np.argmax(r[peaks])]
    strength = float(r[best])
    if strength <= 0:
        return 0.0, 0.0
    return float(best), strength


# -- aggregation and fusion ------------------------------------------------

def aggregate_mean_variance(series) -> tuple[float, float]:
    """Arithmetic mean and population variance of a per-frame series."""
    values = np.asarray(series.values if isinstance(series, FrameFeatureSeries) else series,
                        dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot aggregate an empty series")
    mean = values.mean()
    return float(mean), float(np.mean((values - mean) ** 2))


def channel_from_series(domain: str, series: list[FrameFeatureSeries]) -> ChannelVector:
    values, names = [], []
    for s in series:
        m, v = aggregate_mean_variance(s)
        values += [m, v]
        names += [f"{s.name}_mean", f"{s.name}_var"]
    return ChannelVector(domain, np.array(values), tuple(names))


def fuse_channels(time: ChannelVector | None, freq: ChannelVector | None,
                  cepstral: ChannelVector | None, extra: ChannelVector | None = None,
                  required=("time", "frequency", "cepstral")) -> FusedFeatureVector:
    """Concatenate channel vectors in the fixed order time, frequency, cepstral, extra.

    Channels named in `required` must be present and nonempty; others may
    be None to build an ablation variant.
    """
    slots = (("time", time), ("frequency", freq), ("cepstral", cepstral), ("autocorr", extra))
    parts, layout, names, pos = [], [], [], 0
    for domain, ch in slots:
        if ch is None or len(ch.values) == 0:
            if domain in required:
                raise ValueError(f"required channel {domain!r} is empty")
            continue
        parts.append(np.asarray(ch.values, dtype=np.float64))
        layout.append((ch.domain, pos, pos + len(ch.values)))
        names += list(ch.names) or [f"{ch.domain}_{i}" for i in range(len(ch.values))]
        pos += len(ch.values)
    if not parts:
        raise ValueError("no channels to fuse")
    return FusedFeatureVector(np.concatenate(parts), tuple(layout), tuple(names))


def feature_names(config: FeatureConfig) -> list[str]:
    per_domain = {
        "time": ["zcr", "rms"],
        "frequency": ["centroid", "spread", "rolloff", "harmonic_ratio"],
        "cepstral": [f"mfcc{i}" for i in range(1, config.n_mfcc + 1)],
        "autocorr": ["ac_lag", "ac_strength"],
    }
    return [f"{n}_{stat}" for d in config.ordered_domains for n in per_domain[d]
            for stat in ("mean", "var")]


def frame_series(clip: AudioClip, config: FeatureConfig) -> dict[str, list[FrameFeatureSeries]]:
    """Per-frame series for every enabled domain."""
    check_sample_rate(clip, config.sample_rate_hz)
    frames = split_frames(clip, config.frame_length, config.hop, pad=config.pad_tail)
    out = {}
    if "time" in config.domains:
        out["time"] = [FrameFeatureSeries("zcr", zero_crossing_rate(frames.frames)),
                       FrameFeatureSeries("rms", rms_energy(frames.frames))]
    if "frequency" in config.domains or "cepstral" in config.domains:
        spec = stft(frames)
    if "frequency" in config.domains:
        mags = spec.magnitudes
        centroid = spectral_centroid(mags)
        harm, perc = hpss(spec, config.hpss_kernel, config.hpss_power)
        out["frequency"] = [
            FrameFeatureSeries("centroid", centroid),
            FrameFeatureSeries("spread", spectral_spread(mags, centroid)),
            FrameFeatureSeries("rolloff", spectral_rolloff(mags, config.rolloff_percentile).astype(np.float64)),
            harmonic_ratio(harm, perc),
        ]
    if "cepstral" in config.domains:
        fb = build_mel_filterbank(config.n_mels, config.frame_length, config.sample_rate_hz,
                                  config.f_min, config.f_max)
        coeffs = mfcc(power_spectrum(spec), fb, config.n_mfcc, config.log_floor)
        out["cepstral"] = [FrameFeatureSeries(f"mfcc{i + 1}", coeffs[i]) for i in range(config.n_mfcc)]
    if "autocorr" in config.domains:
        pairs = np.array([autocorrelation_features(f, config.autocorr_min_lag) for f in frames.frames])
        out["autocorr"] = [FrameFeatureSeries("ac_lag", pairs[:, 0]),
                           FrameFeatureSeries("ac_strength", pairs[:, 1])]
    return out


def extract_clip_features(clip: AudioClip, config: FeatureConfig | None = None) -> FusedFeatureVector:
    """Run the full per-clip pipeline and return the fused feature vector."""
    config = config or FeatureConfig()
    series = frame_series(clip, config)
    channels = {d: channel_from_series(d, s) for d, s in series.items()}
    return fuse_channels(channels.get("time"), channels.get("frequency"),
                         channels.get("cepstral"), channels.get("autocorr"),
                         required=config.domains)
