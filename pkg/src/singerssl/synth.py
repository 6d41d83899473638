"""Synthetic singer corpus.

A singer is a fixed vocal-tract filter: a spectral tilt plus a few resonances
(formants) drawn once per singer. Every clip sings a random melody (notes
from a singer-independent range, with vibrato) through that filter, so
pitch and content vary freely while timbre stays tied to the singer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d

from .dsp import SAMPLE_RATE, AudioClip
from .pairs import DatasetManifest, ManifestEntry, write_wav


@dataclass(frozen=True)
class Singer:
    name: str
    tilt_db_per_octave: float
    formant_hz: np.ndarray
    formant_bw_octaves: np.ndarray
    formant_gain_db: np.ndarray
    breathiness: float

    def envelope_db(self, freqs) -> np.ndarray:
        f = np.maximum(np.asarray(freqs, dtype=np.float64), 20.0)
        octaves = np.log2(f / 100.0)
        env = self.tilt_db_per_octave * np.maximum(octaves, 0.0)
        for fc, bw, g in zip(self.formant_hz, self.formant_bw_octaves, self.formant_gain_db):
            env = env + g * np.exp(-0.5 * ((octaves - np.log2(fc / 100.0)) / bw) ** 2)
        return env


def random_singer(name: str, rng: np.random.Generator) -> Singer:
    n_formants = 5
    # one formant per band keeps them ordered and spread across the spectrum
    edges = np.geomspace(250.0, 9000.0, n_formants + 1)
    formants = np.exp(rng.uniform(np.log(edges[:-1]), np.log(edges[1:])))
    return Singer(
        name,
        tilt_db_per_octave=float(rng.uniform(-14.0, -4.0)),
        formant_hz=formants,
        formant_bw_octaves=rng.uniform(0.08, 0.35, n_formants),
        formant_gain_db=rng.uniform(6.0, 30.0, n_formants),
        breathiness=float(rng.uniform(0.01, 0.15)),
    )


def _f0_contour(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    f0 = np.empty(n)
    pos = 0
    while pos < n:
        dur = int(rng.uniform(0.2, 0.7) * sr)
        f0[pos : pos + dur] = 110.0 * 2.0 ** rng.uniform(0.0, 2.0)  # A2..A4
        pos += dur
    # glide between notes, then vibrato
    f0 = uniform_filter1d(f0, int(0.03 * sr), mode="nearest")
    t = np.arange(n) / sr
    rate, depth = rng.uniform(4.5, 6.5), rng.uniform(0.005, 0.02)
    return f0 * (1.0 + depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))


def sing(singer: Singer, seconds: float, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """One clip: sawtooth glottal source plus breath noise, shaped by the singer's filter."""
    n = int(round(seconds * sample_rate))
    phase = np.cumsum(_f0_contour(n, sample_rate, rng)) / sample_rate
    source = 2.0 * (phase % 1.0) - 1.0
    source = source + singer.breathiness * rng.standard_normal(n)
    # phrase-level loudness envelope with occasional breaths
    amp = np.ones(n)
    for _ in range(rng.integers(0, 3)):
        start = rng.integers(0, max(1, n - sample_rate // 5))
        amp[start : start + int(rng.uniform(0.05, 0.15) * sample_rate)] = 0.05
    amp = uniform_filter1d(amp, int(0.02 * sample_rate), mode="nearest")

    spec = np.fft.rfft(source * amp)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    y = np.fft.irfft(spec * 10.0 ** (singer.envelope_db(freqs) / 20.0), n)
    y *= rng.uniform(0.3, 0.9) / np.max(np.abs(y))
    return AudioClip(np.clip(y, -1.0, 1.0), sample_rate)


def split_singers(names: list[str], rng: np.random.Generator) -> dict[str, str]:
    """80/10/10 train/val/test assignment by singer (no singer in two splits)."""
    order = rng.permutation(len(names))
    n_train = int(round(0.8 * len(names)))
    n_val = int(round(0.1 * len(names)))
    out = {}
    for rank, i in enumerate(order):
        out[names[i]] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return out


def make_corpus(out_dir, n_singers: int = 32, clips_per_singer: int = 8, seconds: float = 6.0,
                seed: int = 0) -> DatasetManifest:
    """Write WAVs under ``out_dir/wav`` and return the labelled manifest (also saved)."""
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 0x5E])
    singers = [random_singer(f"singer{s:03d}", rng) for s in range(n_singers)]
    split = split_singers([s.name for s in singers], rng)
    entries = []
    for s_idx, singer in enumerate(singers):
        for c in range(clips_per_singer):
            clip = sing(singer, seconds, np.random.default_rng([seed, s_idx, c]))
            rel = f"wav/{singer.name}_clip{c:02d}.wav"
            write_wav(out_dir / rel, clip)
            entries.append(ManifestEntry(rel, split[singer.name], singer.name))
    manifest = DatasetManifest(entries, out_dir)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest
