import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from singerssl import augment as A
from singerssl.augment import AugmentationConfig


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentationConfig(p_apply=1.5)
    with pytest.raises(ValueError):
        AugmentationConfig(gain_min_db=1.0, gain_max_db=0.0)
    with pytest.raises(ValueError):
        AugmentationConfig(time_mask_max_fraction=0.0)


def test_gain_examples():
    x = np.full(100, 0.5)
    assert np.array_equal(A.apply_gain(x, 0.0), x)
    np.testing.assert_allclose(A.apply_gain(x, -6.0), 0.5 * 10 ** -0.3)
    assert abs(0.5 * 10 ** -0.3 - 0.2506) < 1e-4


def test_gain_rms_ratio():
    x = np.random.default_rng(0).uniform(-0.5, 0.5, 10000)
    y = A.apply_gain(x, -3.0)
    ratio = np.sqrt(np.mean(y**2) / np.mean(x**2))
    assert abs(ratio - 10 ** (-3 / 20)) < 1e-6


def test_gain_clamps():
    assert A.apply_gain(np.array([0.9]), 6.0)[0] == 1.0


def test_noise_high_snr_is_near_identity():
    rng = np.random.default_rng(1)
    x = 0.5 * np.sin(np.linspace(0, 100, 44100))
    y = A.add_gaussian_noise(x, 100.0, rng)
    assert np.sqrt(np.mean((y - x) ** 2)) < 1e-4


def test_noise_at_zero_db_matches_signal_power():
    n = 4 * 44100
    t = np.arange(n) / 44100
    x = np.sqrt(2) * np.sin(2 * np.pi * 440 * t) * 0.1  # rms 0.1 keeps x + noise inside the clamp
    y = A.add_gaussian_noise(x, 0.0, np.random.default_rng(2))
    noise_rms = np.sqrt(np.mean((y - x) ** 2))
    signal_rms = np.sqrt(np.mean(x**2))
    assert abs(noise_rms / signal_rms - 1.0) < 0.05


def test_noise_zero_input_unchanged_and_deterministic():
    z = np.zeros(100)
    assert A.add_gaussian_noise(z, 10.0, np.random.default_rng(0)) is z
    x = np.random.default_rng(3).uniform(-0.5, 0.5, 1000)
    a = A.add_gaussian_noise(x, 20.0, np.random.default_rng(9))
    b = A.add_gaussian_noise(x, 20.0, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_time_mask_single_zero_run_and_bound():
    x = np.ones(80000)
    for seed in range(50):
        y = A.time_mask(x, np.random.default_rng(seed))
        zeros = np.flatnonzero(y == 0)
        assert zeros.size <= 10000
        if zeros.size:
            assert np.all(np.diff(zeros) == 1)


def test_time_mask_length_distribution():
    n = 80000
    lengths = [A.draw_mask(n, 1 / 8, np.random.default_rng(s))[1] for s in range(1000)]
    assert max(lengths) <= n // 8
    assert abs(np.mean(lengths) - n / 16) < 0.1 * n / 16


def test_time_mask_zero_length_is_identity():
    # find a seed that draws length 0 on a short signal
    x = np.ones(8)
    for s in range(200):
        if A.draw_mask(8, 1 / 8, np.random.default_rng(s))[1] == 0:
            assert np.array_equal(A.time_mask(x, np.random.default_rng(s)), x)
            return
    pytest.fail("no zero-length draw found")


def test_time_mask_needs_eight_samples():
    with pytest.raises(ValueError):
        A.time_mask(np.ones(7), np.random.default_rng(0))


def test_pitch_ratio_sampling_is_symmetric_in_log():
    rng = np.random.default_rng(4)
    draws = np.array([A.sample_pitch_ratios(rng) for _ in range(10000)])
    assert abs(np.median(np.log(draws[:, 0]))) < 0.05
    assert abs(np.median(np.log(draws[:, 1]))) < 0.05
    assert np.all((draws[:, 0] >= 1 / 3) & (draws[:, 0] <= 3))


def test_pitch_shift_hooks():
    x = np.random.default_rng(5).uniform(-0.5, 0.5, 1000)
    assert np.array_equal(A.pitch_shift(x, 2.0, 1.2), x)
    np.testing.assert_allclose(A.pitch_shift(x, 1.0, 1.0, A.resampling_pitch_shift), x)
    with pytest.raises(ValueError):
        A.pitch_shift(x, 0.0, 1.0)
    with pytest.raises(ValueError):
        A.pitch_shift(x, 1.5, 1.0, lambda x, sr, a, b: x[:-1])


def test_resampling_shifter_moves_a_tone():
    sr = 44100
    t = np.arange(sr) / sr
    x = 0.5 * np.sin(2 * np.pi * 441 * t)
    y = A.resampling_pitch_shift(x, sr, 2.0, 1.0)
    peak = np.argmax(np.abs(np.fft.rfft(y)))
    assert abs(peak - 882) <= 1


def test_augment_p0_is_identity():
    x = np.random.default_rng(6).uniform(-1, 1, 5000)
    cfg = AugmentationConfig(p_apply=0.0)
    assert np.array_equal(A.augment(x, cfg, np.random.default_rng(0)), x)


def test_augment_all_noop_parameters_is_identity():
    x = np.random.default_rng(7).uniform(-0.5, 0.5, 64)
    cfg = AugmentationConfig(p_apply=1.0, gain_min_db=0.0, gain_max_db=0.0,
                             noise_snr_range_db=(300.0, 300.0), time_mask_max_fraction=1 / 64)
    y = A.augment(x, cfg, np.random.default_rng(0))
    np.testing.assert_allclose(y, x, atol=1e-12)


def test_augment_deterministic():
    x = np.random.default_rng(8).uniform(-0.5, 0.5, 20000)
    cfg = AugmentationConfig()
    assert np.array_equal(A.augment(x, cfg, A.clip_rng(3, 1)), A.augment(x, cfg, A.clip_rng(3, 1)))


def test_broken_hook_skips_pitch_shift(caplog):
    def broken(x, sr, a, b):
        raise RuntimeError("engine down")

    x = np.random.default_rng(9).uniform(-0.5, 0.5, 1000)
    cfg = AugmentationConfig(p_apply=1.0, gain_min_db=0.0, gain_max_db=0.0,
                             noise_snr_range_db=(300.0, 300.0), time_mask_max_fraction=1 / 2000,
                             pitch_shift=broken)
    y = A.augment(x, cfg, np.random.default_rng(0))
    assert y.shape == x.shape
    assert "pitch shift skipped" in caplog.text


@settings(max_examples=60, deadline=None)
@given(st.integers(8, 3000), st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_augment_preserves_length_and_range(n, seed, p):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, n)
    cfg = AugmentationConfig(p_apply=p, pitch_shift=A.resampling_pitch_shift)
    y = A.augment(x, cfg, rng)
    assert y.shape == x.shape
    assert np.all(np.abs(y) <= 1.0)
