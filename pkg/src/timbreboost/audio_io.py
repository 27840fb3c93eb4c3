"""WAV decoding, framing and windowing."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(Exception):
    """Base class for WAV decoding failures."""


class UnsupportedEncodingError(WavError):
    pass


class CorruptWavError(WavError):
    pass


class SampleRateMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int
    source_id: str = ""

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class FrameSequence:
    frames: np.ndarray  # (frame_count, frame_length)
    frame_length: int
    hop: int
    sample_rate_hz: int

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]


def _read_chunks(data: bytes, path):
    if len(data) < 12:
        raise CorruptWavError(f"{path}: file too short for a RIFF header")
    riff, _, wave_id = struct.unpack("<4sI4s", data[:12])
    if riff != b"RIFF" or wave_id != b"WAVE":
        raise CorruptWavError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    chunks = {}
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    return chunks


def load_wav(path, source_id: str | None = None) -> AudioClip:
    """Decode a PCM16, PCM32 or float32 WAV file into a mono clip.

    Multichannel audio is downmixed by averaging channels. Integer
    formats are scaled to [-1, 1].
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such WAV file: {path}")
    chunks = _read_chunks(path.read_bytes(), path)
    fmt = chunks.get(b"fmt ")
    if fmt is None or len(fmt) < 16:
        raise CorruptWavError(f"{path}: missing or short fmt chunk")
    if b"data" not in chunks:
        raise CorruptWavError(f"{path}: missing data chunk")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise CorruptWavError(f"{path}: truncated extensible fmt chunk")
        tag = struct.unpack("<H", fmt[24:26])[0]
    if channels < 1 or rate < 1:
        raise CorruptWavError(f"{path}: invalid channel count or sample rate")

    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 32768.0
    elif tag == WAVE_FORMAT_PCM and bits == 32:
        dtype, scale = np.dtype("<i4"), 2147483648.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), None
    else:
        raise UnsupportedEncodingError(
            f"{path}: unsupported encoding (format tag {tag:#06x}, {bits} bits)")

    raw = chunks[b"data"]
    frame_bytes = dtype.itemsize * channels
    n = len(raw) // frame_bytes
    if n == 0:
        raise CorruptWavError(f"{path}: data chunk holds no complete sample frames")
    samples = np.frombuffer(raw[:n * frame_bytes], dtype=dtype).astype(np.float64)
    if scale is not None:
        samples /= scale
    samples = samples.reshape(n, channels).mean(axis=1)
    np.clip(samples, -1.0, 1.0, out=samples)
    return AudioClip(samples, int(rate), source_id if source_id is not None else path.stem)


def write_wav(path, samples, sample_rate_hz: int, encoding: str = "pcm16") -> None:
    """Write samples (1-D mono or 2-D frames x channels) to a WAV file."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    channels = x.shape[1]
    if encoding == "pcm16":
        tag, bits = WAVE_FORMAT_PCM, 16
        body = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2").tobytes()
    elif encoding == "pcm32":
        tag, bits = WAVE_FORMAT_PCM, 32
        body = np.clip(np.round(x * 2147483647.0), -2147483648, 2147483647).astype("<i4").tobytes()
    elif encoding == "float32":
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
        body = x.astype("<f4").tobytes()
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, sample_rate_hz,
                      sample_rate_hz * block, block, bits)
    out = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    out += b"data" + struct.pack("<I", len(body)) + body
    if len(body) & 1:
        out += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(out)) + out)


def check_sample_rate(clip: AudioClip, expected_hz: int) -> None:
    if clip.sample_rate_hz != expected_hz:
        raise SampleRateMismatchError(
            f"{clip.source_id}: sample rate {clip.sample_rate_hz} Hz, pipeline expects {expected_hz} Hz")


def frame_length_for(sample_rate_hz: int, duration_s: float = 0.023) -> int:
    """Smallest power of two at or above the sample count of `duration_s`."""
    n = max(1, round(duration_s * sample_rate_hz))
    return 1 << (n - 1).bit_length()


def split_frames(clip: AudioClip, frame_length: int, hop: int, pad: bool = True) -> FrameSequence:
    """Cut a clip into overlapping frames of `frame_length` samples.

    With `pad`, a trailing partial frame (or a clip shorter than one
    frame) is zero-padded to full length.
    """
    if frame_length < 1 or hop < 1:
        raise ValueError("frame_length and hop must be >= 1")
    x = np.asarray(clip.samples, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise ValueError("cannot frame an empty clip")
    n_full = (n - frame_length) // hop + 1 if n >= frame_length else 0
    if n_full == 0 and not pad:
        raise ValueError(f"clip of {n} samples is shorter than frame length {frame_length}")
    tail = pad and (n_full == 0 or (n_full - 1) * hop + frame_length < n)
    count = n_full + int(tail)
    if n_full:
        frames = np.lib.stride_tricks.sliding_window_view(x, frame_length)[::hop][:n_full]
    else:
        frames = np.empty((0, frame_length))
    if tail:
        last = np.zeros(frame_length)
        seg = x[n_full * hop:]
        last[:len(seg)] = seg
        frames = np.vstack([frames, last])
    frames = np.ascontiguousarray(frames)
    assert frames.shape == (count, frame_length)
    return FrameSequence(frames, frame_length, hop, clip.sample_rate_hz)


def hamming_coefficients(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError(f"Hamming window needs at least 2 points, got {n}")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def hamming_window(frame) -> np.ndarray:
    """Multiply a frame (or the last axis of a frame matrix) by a symmetric Hamming window."""
    frame = np.asarray(frame, dtype=np.float64)
    return frame * hamming_coefficients(frame.shape[-1])
