"""Corpus loading, silence trimming and positive-pair batch construction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import scipy.io.wavfile
from scipy.signal import resample_poly

from .augment import AugmentationConfig, augment, clip_rng
from .dsp import SAMPLE_RATE, AudioClip

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")

SILENCE_THRESHOLD = 0.005
MIN_BURST_SECONDS = 0.2
MAX_SILENCE_SECONDS = 1.3
# Sub-threshold stretches shorter than this, with loud samples on both sides,
# are zero crossings inside sound rather than silence.
ZERO_CROSSING_GAP_SECONDS = 0.02


class AudioFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    split: str = "train"
    singer_id: str | None = None

    def to_json(self) -> dict:
        out = {"path": self.path, "split": self.split}
        if self.singer_id is not None:
            out["singer_id"] = self.singer_id
        return out


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"{e.path}: split must be one of {SPLITS}, got {e.split!r}")
            if e.path in seen:
                raise ValueError(f"duplicate manifest path {e.path}")
            seen.add(e.path)

    def __len__(self):
        return len(self.entries)

    def split(self, name: str) -> "DatasetManifest":
        return DatasetManifest([e for e in self.entries if e.split == name], self.root)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        entries = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    entries.append(
                        ManifestEntry(obj["path"], obj.get("split", "train"), obj.get("singer_id"))
                    )
                except (json.JSONDecodeError, KeyError) as err:
                    raise ValueError(f"{path}:{lineno}: bad manifest line ({err})") from err
        return cls(entries, path.parent)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_json()) + "\n")


def read_wav(path: str | Path, mono: bool = False, resample: bool = False) -> AudioClip:
    """Read 16-bit PCM or 32-bit float WAV into an :class:`AudioClip`.

    Multi-channel files are averaged only when ``mono`` is set and other
    rates are converted only when ``resample`` is set; otherwise they raise
    :class:`AudioFormatError`.
    """
    sr, data = scipy.io.wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        x = data.astype(np.float64)
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    else:
        raise AudioFormatError(f"{path}: unsupported sample type {data.dtype}")
    if x.ndim == 2:
        if x.shape[1] == 1:
            x = x[:, 0]
        elif mono:
            x = x.mean(axis=1)
        else:
            raise AudioFormatError(f"{path}: {x.shape[1]} channels, expected mono")
    if sr != SAMPLE_RATE:
        if not resample:
            raise AudioFormatError(f"{path}: sample rate {sr}, expected {SAMPLE_RATE}")
        g = np.gcd(sr, SAMPLE_RATE)
        x = resample_poly(x, SAMPLE_RATE // g, sr // g)
        sr = SAMPLE_RATE
    return AudioClip(np.clip(x, -1.0, 1.0), sr)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write 16-bit PCM; reading it back with :func:`read_wav` and rewriting is lossless."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype(np.int16)
    scipy.io.wavfile.write(path, clip.sample_rate_hz, pcm)


def _runs(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Start, stop (exclusive) and value of each maximal constant run."""
    if mask.size == 0:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, bool)
    change = np.flatnonzero(mask[1:] != mask[:-1]) + 1
    starts = np.concatenate([[0], change])
    stops = np.concatenate([change, [mask.size]])
    return starts, stops, mask[starts]


def silence_mask(x: np.ndarray, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """True where the clip is silent (below 0.5% of full scale).

    Short sub-threshold stretches enclosed by loud samples (zero crossings)
    count as sound.
    """
    silent = np.abs(x) < SILENCE_THRESHOLD
    gap = int(round(ZERO_CROSSING_GAP_SECONDS * sample_rate))
    starts, stops, vals = _runs(silent)
    for s, e, v in zip(starts, stops, vals):
        if v and s > 0 and e < x.size and e - s < gap:
            silent[s:e] = False
    return silent


def trim_silence(clip: AudioClip) -> AudioClip:
    """Silence short bursts, then shorten every long silence to 1.3 s.

    Sound runs shorter than 0.2 s are zeroed; silent runs longer than 1.3 s
    keep their first 1.3 s. The result is a fixed point of this function.
    """
    sr = clip.sample_rate_hz
    x = clip.samples.copy()
    min_burst = int(round(MIN_BURST_SECONDS * sr))
    max_silence = int(round(MAX_SILENCE_SECONDS * sr))

    starts, stops, vals = _runs(silence_mask(x, sr))
    for s, e, v in zip(starts, stops, vals):
        if not v and e - s < min_burst:
            x[s:e] = 0.0

    keep = np.ones(x.size, dtype=bool)
    starts, stops, vals = _runs(silence_mask(x, sr))
    for s, e, v in zip(starts, stops, vals):
        if v and e - s > max_silence:
            keep[s + max_silence : e] = False
    return AudioClip(x[keep], sr)


def sample_positive_pair(
    clip: AudioClip | np.ndarray, segment_seconds: float, rng: np.random.Generator,
    sample_rate: int = SAMPLE_RATE,
) -> tuple[np.ndarray, np.ndarray]:
    """Two independent uniform crops of ``segment_seconds`` from one clip."""
    if isinstance(clip, AudioClip):
        x, sample_rate = clip.samples, clip.sample_rate_hz
    else:
        x = np.asarray(clip)
    n = int(round(segment_seconds * sample_rate))
    if x.size < n:
        raise ValueError(f"clip has {x.size} samples, segment needs {n}")
    a, b = rng.integers(0, x.size - n + 1, size=2)
    return x[a : a + n], x[b : b + n]


@dataclass
class LoadedClip:
    clip_id: str
    clip: AudioClip
    singer_id: str | None = None


@dataclass
class PairBatch:
    view1: np.ndarray  # (B, N)
    view2: np.ndarray  # (B, N)
    clip_ids: list[str]

    def __len__(self):
        return len(self.clip_ids)


def load_clips(
    manifest: DatasetManifest,
    split: str | None = None,
    min_seconds: float = 0.0,
    mono: bool = False,
    resample: bool = False,
) -> list[LoadedClip]:
    """Read every entry (optionally one split), dropping clips shorter than ``min_seconds``."""
    out = []
    for e in manifest.entries:
        if split is not None and e.split != split:
            continue
        clip = read_wav(manifest.resolve(e), mono=mono, resample=resample)
        if clip.duration < min_seconds:
            logger.warning("%s: %.2f s is shorter than %.2f s, skipped", e.path, clip.duration, min_seconds)
            continue
        out.append(LoadedClip(e.path, clip, e.singer_id))
    return out


def epoch_batches(
    clips: Sequence[LoadedClip],
    batch_size: int,
    segment_seconds: float,
    cfg: AugmentationConfig | None,
    rng: np.random.Generator,
) -> Iterator[PairBatch]:
    """One epoch of augmented positive pairs; no clip is used twice.

    The permutation and a base seed are drawn from ``rng`` up front; each
    clip then gets its own stream keyed by its index, so the batches do not
    depend on evaluation order.
    """
    n_seg = [int(round(segment_seconds * c.clip.sample_rate_hz)) for c in clips]
    eligible = [i for i, c in enumerate(clips) if len(c.clip) >= n_seg[i]]
    if len(eligible) < batch_size:
        raise ValueError(f"{len(eligible)} eligible clips, batch size is {batch_size}")
    order = rng.permutation(eligible)
    base = int(rng.integers(2**62))
    for b in range(len(order) // batch_size):
        idx = order[b * batch_size : (b + 1) * batch_size]
        v1, v2 = [], []
        for i in idx:
            crng = clip_rng(base, int(i))
            a, p = sample_positive_pair(clips[i].clip, segment_seconds, crng)
            if cfg is not None:
                a, p = augment(a, cfg, crng), augment(p, cfg, crng)
            v1.append(a)
            v2.append(p)
        yield PairBatch(np.stack(v1), np.stack(v2), [clips[i].clip_id for i in idx])
