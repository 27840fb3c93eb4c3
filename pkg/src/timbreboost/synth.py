"""Seeded synthetic instrument-like corpus for desk-scale end-to-end runs.

Each class gets its own harmonic amplitude profile, attack/decay envelope,
vibrato and noise level. Pitches are drawn per clip, so classes differ in
timbre rather than in one fixed fundamental.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import write_wav
from .dataset import CLASS_NAMES, write_manifest


@dataclass(frozen=True)
class Voice:
    harmonics: tuple  # relative amplitude of partials 1..n
    attack_s: float
    decay_per_s: float  # exponential decay rate after the attack
    noise: float
    f0_range: tuple
    vibrato_hz: float = 0.0
    vibrato_depth: float = 0.0
    drive: float = 0.0  # tanh saturation amount


def _profile(n, fn):
    return tuple(float(fn(k)) for k in range(1, n + 1))


VOICES = {
    "clarinet": Voice(_profile(15, lambda k: 1.0 / k if k % 2 else 0.02), 0.06, 0.3, 0.004, (147, 590)),
    "distorted electric guitar": Voice(_profile(10, lambda k: 1.0 / k), 0.005, 1.5, 0.01, (82, 330), drive=8.0),
    "female singer": Voice(_profile(12, lambda k: np.exp(-((k - 3) ** 2) / 4.0) + 0.1 / k), 0.12, 0.2, 0.01,
                           (220, 700), vibrato_hz=5.5, vibrato_depth=0.015),
    "flute": Voice(_profile(4, lambda k: 0.25 ** (k - 1)), 0.08, 0.1, 0.05, (262, 1050)),
    "piano": Voice(_profile(20, lambda k: 1.0 / k ** 1.5), 0.003, 3.0, 0.002, (65, 1050)),
    "tenor saxophone": Voice(_profile(25, lambda k: 1.0 / k ** 0.6), 0.04, 0.4, 0.03, (104, 415)),
    "trumpet": Voice(_profile(18, lambda k: k * np.exp(-k / 3.0)), 0.02, 0.2, 0.006, (165, 930)),
    "violin": Voice(_profile(30, lambda k: 1.0 / k), 0.15, 0.15, 0.015, (196, 1300),
                    vibrato_hz=6.0, vibrato_depth=0.008),
}


def synthesize(voice: Voice, f0: float, duration_s: float, sample_rate_hz: int, rng) -> np.ndarray:
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    phase0 = 2 * np.pi * f0 * t
    if voice.vibrato_depth:
        vib = voice.vibrato_depth * np.sin(2 * np.pi * voice.vibrato_hz * t)
        phase0 = 2 * np.pi * f0 * np.cumsum(1 + vib) / sample_rate_hz
    x = np.zeros(n)
    nyquist = sample_rate_hz / 2
    for k, amp in enumerate(voice.harmonics, start=1):
        if amp == 0 or k * f0 * (1 + voice.vibrato_depth) >= nyquist:
            continue
        x += amp * np.sin(k * phase0 + rng.uniform(0, 2 * np.pi))
    x /= max(np.max(np.abs(x)), 1e-12)
    if voice.drive:
        x = np.tanh(voice.drive * x) / np.tanh(voice.drive)
    attack = np.clip(t / voice.attack_s, 0.0, 1.0)
    decay = np.exp(-voice.decay_per_s * np.maximum(t - voice.attack_s, 0.0))
    x = x * attack * decay + voice.noise * rng.standard_normal(n)
    return x


def make_corpus(out_dir, clips_per_class: int = 100, duration_s: float = 1.0,
                sample_rate_hz: int = 44100, seed: int = 0, class_names=CLASS_NAMES) -> Path:
    """Write WAV clips plus `manifest.csv` under `out_dir`; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    rows = []
    for c, name in enumerate(class_names):
        voice = VOICES[name]
        for i in range(clips_per_class):
            rng = np.random.default_rng([seed, c, i])
            lo, hi = voice.f0_range
            f0 = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            x = synthesize(voice, f0, duration_s, sample_rate_hz, rng)
            x *= rng.uniform(0.3, 0.9) / max(np.max(np.abs(x)), 1e-12)
            uid = f"c{c}-{i:04d}"
            rel = Path("audio") / f"{uid}.wav"
            write_wav(out_dir / rel, x, sample_rate_hz)
            rows.append((uid, name, rel.as_posix()))
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest
