"""
Log-mel features and waveform augmentation
==========================================

A synthetic singer, their log-mel spectrogram, and what each augmentation
does to the waveform. Run with ``python demos/01_features_and_augmentation.py``.
"""

import numpy as np

from singerssl import augment as A
from singerssl import synth
from singerssl.dsp import log_mel, mel_center_frequencies

rng = np.random.default_rng(0)

# A singer is a spectral envelope: a tilt plus a handful of formant bumps.
singer = synth.random_singer("demo", rng)
clip = synth.sing(singer, 2.0, np.random.default_rng(1))
print(f"clip: {len(clip)} samples at {clip.sample_rate_hz} Hz, peak {np.max(np.abs(clip.samples)):.2f}")

# 2048-sample periodic Hann window, hop 512, 80 mel bands up to Nyquist.
mel = log_mel(clip)
print(f"log-mel: {mel.values.shape[0]} bands x {mel.values.shape[1]} frames")

# The time-averaged log-mel profile should track the singer's envelope.
profile = mel.values.mean(axis=1)
centres = mel_center_frequencies(80, 0.0, clip.sample_rate_hz / 2)[1:-1]  # drop the edges
envelope = singer.envelope_db(centres)
r = np.corrcoef(profile[5:], envelope[5:])[0, 1]
print(f"correlation of mean log-mel with the singer's envelope: {r:.2f}")

# %% Augmentations, one at a time
x = clip.samples


def rms_db(y):
    return 20 * np.log10(np.sqrt(np.mean(y ** 2)) + 1e-12)


g = A.apply_gain(x, -6.0)
print(f"gain -6 dB: level {rms_db(x):.2f} -> {rms_db(g):.2f} dB")

noisy = A.add_gaussian_noise(x, 20.0, np.random.default_rng(2))
print(f"noise at 20 dB SNR: measured SNR {rms_db(x) - rms_db(noisy - x):.1f} dB")

masked = A.time_mask(x, np.random.default_rng(3))
zeros = np.flatnonzero(masked != x)
if zeros.size:
    print(f"time mask: zeroed {zeros.size} samples ({zeros.size / x.size:.1%} of the clip)")

# The pitch-shift engine is a hook. The default is the identity; a crude
# resampling shifter is bundled for experiments.
shift, spread = A.sample_pitch_ratios(np.random.default_rng(4))
shifted = A.pitch_shift(x, shift, spread, hook=A.resampling_pitch_shift)
print(f"pitch ratios drawn: shift {shift:.3f}, range {spread:.3f}; "
      f"resampled clip keeps its length: {shifted.size == x.size}")

# %% The full pipeline: each step fires with probability p_apply.
for seed in range(3):
    y = A.augment(x, A.AugmentationConfig(), np.random.default_rng(seed))
    print(f"augment seed {seed}: level {rms_db(y):6.2f} dB, "
          f"changed samples {np.mean(y != x):.1%}, in range {np.max(np.abs(y)) <= 1.0}")
