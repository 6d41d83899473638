"""Waveform to log-mel feature extraction.

Frames are taken without padding: an ``N``-sample clip yields
``(N - window) // hop + 1`` frames. The window is a periodic Hann window,
energies are power (``|X|**2``) and the mel scale is the HTK formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

SAMPLE_RATE = 44100
N_FFT = 2048
HOP = 512
N_MELS = 80
LOG_FLOOR = 1e-10


class InsufficientInputError(ValueError):
    """Raised when a clip is shorter than a single analysis window."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {samples.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise ValueError("samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # (n_mels, n_frames)
    frame_hop_samples: int = HOP
    window_samples: int = N_FFT

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def n_frames(n_samples: int, window: int = N_FFT, hop: int = HOP) -> int:
    if n_samples < window:
        return 0
    return (n_samples - window) // hop + 1


def hann(window: int) -> np.ndarray:
    return get_window("hann", window, fftbins=True)


def _frames(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    if window <= 0 or hop <= 0:
        raise ValueError("window and hop must be positive")
    if x.shape[-1] < window:
        raise InsufficientInputError(
            f"need at least {window} samples, got {x.shape[-1]}"
        )
    return sliding_window_view(x, window, axis=-1)[..., ::hop, :]


def stft(clip: AudioClip | np.ndarray, window: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Short-time Fourier transform, shape ``(window // 2 + 1, n_frames)``.

    Frame ``k`` covers samples ``[k * hop, k * hop + window)``.
    """
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    frames = _frames(x, window, hop) * hann(window)
    return scipy.fft.rfft(frames, axis=-1).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """Edge and center frequencies, ``n_mels + 2`` points equally spaced in mel."""
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))


def mel_filterbank(
    n_fft: int = N_FFT,
    n_mels: int = N_MELS,
    sample_rate_hz: int = SAMPLE_RATE,
    f_min: float = 0.0,
    f_max: float | None = None,
) -> np.ndarray:
    """Triangular mel filters, shape ``(n_mels, n_fft // 2 + 1)``.

    Filter ``m`` rises from point ``m`` to ``m + 1`` and falls to ``m + 2`` of
    the mel-spaced grid; peaks are 1 (no area normalisation).
    """
    if f_max is None:
        f_max = sample_rate_hz / 2
    if not 0 <= f_min < f_max <= sample_rate_hz / 2:
        raise ValueError(
            f"need 0 <= f_min < f_max <= {sample_rate_hz / 2}, got ({f_min}, {f_max})"
        )
    pts = mel_center_frequencies(n_mels, f_min, f_max)
    bins = np.arange(n_fft // 2 + 1) * sample_rate_hz / n_fft
    lower, center, upper = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rising = (bins - lower) / (center - lower)
    falling = (upper - bins) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(
            f"mel filters {empty.tolist()} cover no FFT bin; use fewer mels or a larger n_fft"
        )
    return fb


_FB_CACHE: dict[tuple, np.ndarray] = {}


def _cached_filterbank(n_fft, n_mels, sr, f_min, f_max) -> np.ndarray:
    key = (n_fft, n_mels, sr, f_min, f_max)
    fb = _FB_CACHE.get(key)
    if fb is None:
        fb = mel_filterbank(n_fft, n_mels, sr, f_min, f_max)
        fb.setflags(write=False)
        _FB_CACHE[key] = fb
    return fb


def log_mel(
    clip: AudioClip,
    n_mels: int = N_MELS,
    window: int = N_FFT,
    hop: int = HOP,
    f_min: float = 0.0,
    f_max: float | None = None,
) -> MelSpectrogram:
    """``log(filterbank @ |stft|**2 + 1e-10)`` as an ``(n_mels, n_frames)`` matrix."""
    fb = _cached_filterbank(window, n_mels, clip.sample_rate_hz, f_min, f_max)
    power = np.abs(stft(clip, window, hop)) ** 2
    return MelSpectrogram(np.log(fb @ power + LOG_FLOOR), hop, window)


def log_mel_batch(
    waves: np.ndarray,
    sample_rate_hz: int = SAMPLE_RATE,
    n_mels: int = N_MELS,
    window: int = N_FFT,
    hop: int = HOP,
    dtype=np.float32,
) -> np.ndarray:
    """Time-major log-mel features for a batch, shape ``(B, n_frames, n_mels)``.

    Same values as :func:`log_mel` up to the working precision ``dtype``;
    this is the encoder's input layout.
    """
    waves = np.atleast_2d(np.asarray(waves))
    dtype = np.dtype(dtype).type
    fb_t = _cached_filterbank(window, n_mels, sample_rate_hz, 0.0, None).T.astype(dtype)
    win = hann(window).astype(dtype)
    out = np.empty((waves.shape[0], n_frames(waves.shape[1], window, hop), n_mels), dtype=dtype)
    for i, x in enumerate(waves):
        frames = _frames(x.astype(dtype, copy=False), window, hop) * win
        spec = scipy.fft.rfft(frames, axis=-1)
        power = spec.real**2 + spec.imag**2
        out[i] = np.log(power @ fb_t + dtype(LOG_FLOOR))
    return out
