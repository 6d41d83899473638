"""Waveform augmentations that change level, pitch and content but keep the voice.

Every function takes an explicit ``numpy.random.Generator``; nothing here
touches global random state. Outputs are always clipped to ``[-1, 1]`` and
have the input's length.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dsp import SAMPLE_RATE

logger = logging.getLogger(__name__)

# (waveform, sample_rate, shift_ratio, range_ratio) -> waveform of equal length
PitchShiftHook = Callable[[np.ndarray, int, float, float], np.ndarray]


def clip_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for ``(seed, *keys)``, e.g. ``(seed, epoch, clip_index)``."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def identity_pitch_shift(x, sample_rate, shift_ratio, range_ratio):
    return x


def resampling_pitch_shift(x, sample_rate, shift_ratio, range_ratio):
    """Shift pitch by reading the waveform at ``shift_ratio`` times the rate.

    Cheap and dependency free, but it transposes formants along with the
    pitch and ignores ``range_ratio``. Use only when timbre change is
    acceptable; a formant-preserving engine should be attached as the hook
    for real training.
    """
    n = x.size
    pos = (np.arange(n) * shift_ratio) % n
    return np.interp(pos, np.arange(n), x)


@dataclass
class AugmentationConfig:
    p_apply: float = 0.5
    gain_min_db: float = -6.0
    gain_max_db: float = 0.0
    time_mask_max_fraction: float = 1 / 8
    noise_snr_range_db: tuple[float, float] = (10.0, 40.0)
    pitch_shift_ratio_range: tuple[float, float] = (1.0, 3.0)
    pitch_range_ratio_range: tuple[float, float] = (1.0, 1.5)
    pitch_shift: PitchShiftHook = field(default=identity_pitch_shift, repr=False)
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        if not 0.0 <= self.p_apply <= 1.0:
            raise ValueError("p_apply must be in [0, 1]")
        if self.gain_min_db > self.gain_max_db:
            raise ValueError("gain_min_db must not exceed gain_max_db")
        if not 0.0 < self.time_mask_max_fraction <= 1.0:
            raise ValueError("time_mask_max_fraction must be in (0, 1]")
        lo, hi = self.noise_snr_range_db
        if lo > hi:
            raise ValueError("noise_snr_range_db must be (low, high)")


def apply_gain(x: np.ndarray, gain_db: float) -> np.ndarray:
    return np.clip(x * 10.0 ** (gain_db / 20.0), -1.0, 1.0)


def add_gaussian_noise(x: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise at ``snr_db`` relative to the signal's mean power.

    An all-zero input has no defined SNR and is returned unchanged.
    """
    power = np.mean(np.square(x, dtype=np.float64))
    if power == 0.0:
        return x
    sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    return np.clip(x + rng.normal(0.0, sigma, size=x.shape), -1.0, 1.0).astype(x.dtype, copy=False)


def draw_mask(n: int, max_fraction: float, rng: np.random.Generator) -> tuple[int, int]:
    """``(offset, length)`` with length uniform on ``0..floor(n * max_fraction)``."""
    length = int(rng.integers(0, int(np.floor(n * max_fraction)) + 1))
    offset = int(rng.integers(0, n - length + 1))
    return offset, length


def time_mask(x: np.ndarray, rng: np.random.Generator, max_fraction: float = 1 / 8) -> np.ndarray:
    if x.size < 8:
        raise ValueError("time_mask needs at least 8 samples")
    offset, length = draw_mask(x.size, max_fraction, rng)
    out = x.copy()
    out[offset : offset + length] = 0.0
    return out


def sample_pitch_ratios(
    rng: np.random.Generator,
    shift_range: tuple[float, float] = (1.0, 3.0),
    range_range: tuple[float, float] = (1.0, 1.5),
) -> tuple[float, float]:
    """Draw (shift_ratio, range_ratio); each is inverted with probability 1/2."""
    shift = rng.uniform(*shift_range)
    spread = rng.uniform(*range_range)
    if rng.random() < 0.5:
        shift = 1.0 / shift
    if rng.random() < 0.5:
        spread = 1.0 / spread
    return float(shift), float(spread)


def pitch_shift(
    x: np.ndarray,
    shift_ratio: float,
    range_ratio: float,
    hook: PitchShiftHook = identity_pitch_shift,
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    if shift_ratio <= 0 or range_ratio <= 0:
        raise ValueError("pitch ratios must be positive")
    y = np.asarray(hook(x, sample_rate, shift_ratio, range_ratio))
    if y.shape != x.shape:
        raise ValueError(f"pitch-shift hook changed length {x.shape} -> {y.shape}")
    return np.clip(y, -1.0, 1.0).astype(x.dtype, copy=False)


def augment(x: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply gain, pitch shift, noise and time mask, each with probability ``p_apply``.

    The order is fixed. A coin is drawn for every augmentation whether or not
    the previous ones fired, so the stream consumption only depends on the
    coins themselves.
    """
    y = x
    if rng.random() < cfg.p_apply:
        y = apply_gain(y, rng.uniform(cfg.gain_min_db, cfg.gain_max_db))
    if rng.random() < cfg.p_apply:
        shift, spread = sample_pitch_ratios(
            rng, cfg.pitch_shift_ratio_range, cfg.pitch_range_ratio_range
        )
        try:
            y = pitch_shift(y, shift, spread, cfg.pitch_shift, cfg.sample_rate_hz)
        except Exception as err:  # a broken hook must not kill training
            logger.warning("pitch shift skipped: %s", err)
    if rng.random() < cfg.p_apply:
        y = add_gaussian_noise(y, rng.uniform(*cfg.noise_snr_range_db), rng)
    if rng.random() < cfg.p_apply:
        y = time_mask(y, rng, cfg.time_mask_max_fraction)
    return y
