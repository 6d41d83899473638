import json

import numpy as np
import pytest

from singerssl import model as M
from singerssl.dsp import AudioClip
from singerssl.io import read_checkpoint
from singerssl.losses import Variant
from singerssl.model import EncoderSpec
from singerssl.pairs import LoadedClip, PairBatch
from singerssl.train import (Checkpoint, NumericalAbort, TrainConfig, TrainState, adamw_update,
                             ema_coefficient, embed_clips, embedding_spread, spread_trajectory,
                             train_loop, train_step)

SMALL = EncoderSpec(channels=(8, 8), kernel_sizes=(3, 3), projection_dim=8)
SR = 44100


def small_cfg(variant="CONT", **kw):
    kw.setdefault("learning_rate", 1e-3)
    return TrainConfig.for_variant(variant, encoder=SMALL, batch_size=4, segment_seconds=0.25,
                                   augmentation=None, val_segment_seconds=0.25, **kw)


def voices(n, seconds=0.6, seed=0):
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n):
        t = np.arange(int(seconds * SR)) / SR
        f0 = 110 * (1 + i % 4)
        x = 0.3 * np.sin(2 * np.pi * f0 * t) + 0.01 * rng.standard_normal(t.size)
        clips.append(LoadedClip(f"c{i}", AudioClip(np.clip(x, -1, 1)), f"s{i % 4}"))
    return clips


def batch(seed=0, n=4, samples=11025):
    # distinct tones, so the rows are distinguishable
    rng = np.random.default_rng(seed)
    t = np.arange(samples) / SR
    f0 = 110.0 * 2 ** (np.arange(n)[:, None] / 2)
    v1 = 0.3 * np.sign(np.sin(2 * np.pi * f0 * t)) * np.sin(2 * np.pi * 3 * f0 * t)
    v2 = v1 + 0.01 * rng.standard_normal(v1.shape)
    return PairBatch(v1, v2, [f"c{i}" for i in range(n)])


def test_variant_defaults():
    assert TrainConfig.for_variant("CONT").learning_rate == 1e-4
    byol = TrainConfig.for_variant("BYOL")
    assert (byol.learning_rate, byol.weight_decay) == (3e-5, 1.5e-6)
    assert byol.loss.variant is Variant.BYOL
    with pytest.raises(ValueError):
        TrainConfig(ema_schedule="linear")


def test_adamw_zero_gradient_zero_decay_is_noop():
    state = TrainState.initialize(small_cfg(weight_decay=0.0))
    before = {k: v.copy() for k, v in state.params.items()}
    adamw_update(state, {k: np.zeros_like(v) for k, v in state.params.items()})
    assert all(np.array_equal(before[k], state.params[k]) for k in before)


def test_adamw_first_step_oracle():
    cfg = small_cfg(weight_decay=0.1, learning_rate=0.01)
    state = TrainState.initialize(cfg)
    state.params = {"w": np.array([1.0, -2.0])}
    state.m = {"w": np.zeros(2)}
    state.v = {"w": np.zeros(2)}
    adamw_update(state, {"w": np.array([0.5, -0.25])})
    # first bias-corrected Adam step is sign(g); decay is decoupled
    expected = np.array([1.0, -2.0]) - 0.01 * (np.sign([0.5, -0.25]) * (1 / (1 + 1e-8 / 0.5)) + 0.1 * np.array([1.0, -2.0]))
    np.testing.assert_allclose(state.params["w"], expected, rtol=1e-6)


def test_ema_schedule():
    cfg = small_cfg("BYOL")
    assert ema_coefficient(cfg, 10, 100) == 0.99
    cos = small_cfg("BYOL", ema_schedule="cosine")
    assert ema_coefficient(cos, 0, 100) == pytest.approx(0.99)
    assert ema_coefficient(cos, 100, 100) == pytest.approx(1.0)


@pytest.mark.parametrize("variant", list(Variant))
def test_train_step_lowers_loss_on_a_fixed_batch(variant):
    state = TrainState.initialize(small_cfg(variant, learning_rate=3e-3))
    b = batch()
    first = train_step(state, b, 20)["loss"]
    for _ in range(15):
        last = train_step(state, b, 20)["loss"]
    assert np.isfinite(last)
    assert last < first
    assert state.step == 16


def test_byol_target_moves_by_ema_only():
    state = TrainState.initialize(small_cfg("BYOL"))
    t0 = {k: v.copy() for k, v in state.target.items()}
    online0 = {k: state.params[k].copy() for k in state.target}
    train_step(state, batch(), 10)
    for k in state.target:
        expected = 0.99 * t0[k] + 0.01 * state.params[k]
        np.testing.assert_allclose(state.target[k], expected, rtol=1e-5, atol=1e-7)
    assert "pred.w" not in state.target
    assert any(not np.array_equal(online0[k], state.params[k]) for k in online0)


def test_byol_literal_wiring_runs():
    state = TrainState.initialize(small_cfg("BYOL", byol_literal=True, byol_symmetrize=False))
    info = train_step(state, batch(), 10)
    assert np.isfinite(info["loss"])


def test_non_finite_loss_aborts_with_diagnostics():
    state = TrainState.initialize(small_cfg())
    state.params["conv0.w"][0, 0] = np.nan
    with pytest.raises(NumericalAbort) as err:
        train_step(state, batch())
    assert "param_norms" in err.value.diagnostics


def test_train_loop_zero_epochs_returns_initialisation():
    cfg = small_cfg(max_epochs=0)
    ck = train_loop(cfg, voices(8), voices(4, seed=1))
    init = TrainState.initialize(cfg)
    assert ck.epoch == 0
    assert all(np.array_equal(ck.params[k], init.params[k]) for k in init.params)


def test_train_loop_logs_and_is_deterministic(tmp_path):
    cfg = small_cfg(max_epochs=2, max_steps=3)
    log = tmp_path / "log.jsonl"
    a = train_loop(cfg, voices(8), voices(8, seed=1), log)
    b = train_loop(cfg, voices(8), voices(8, seed=1))
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [1, 2]
    assert rows[-1]["step"] == 3
    assert {"train_loss", "val_loss", "val_eer", "val_mnr", "h_std"} <= rows[0].keys()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_train_loop_needs_both_splits():
    with pytest.raises(ValueError):
        train_loop(small_cfg(), voices(8), [])


def test_checkpoint_round_trip(tmp_path):
    cfg = small_cfg("BYOL", max_epochs=1, max_steps=1)
    ck = train_loop(cfg, voices(8), voices(8, seed=1))
    ck.save(tmp_path / "c.bin")
    back = Checkpoint.load(tmp_path / "c.bin")
    assert back.config == json.loads(json.dumps(ck.config))
    assert back.spec == SMALL
    assert all(np.array_equal(back.params[k], ck.params[k]) for k in ck.params)
    assert all(np.array_equal(back.target[k], ck.target[k]) for k in ck.target)
    assert read_checkpoint(tmp_path / "c.bin").epoch == ck.epoch


def test_embed_clips_segments():
    params = M.init_params(SMALL, np.random.default_rng(0))
    clips = [LoadedClip("nine", AudioClip(np.zeros(9 * 4410) + 0.1, 4410), "a"),
             LoadedClip("four", AudioClip(np.zeros(4 * 4410) + 0.1, 4410), "b"),
             LoadedClip("short", AudioClip(np.zeros(3 * 4410), 4410), "c")]
    table = embed_clips(params, SMALL, clips, 4.0)
    assert table.clip_ids == ["nine", "nine", "four"]
    assert table.segment_index == [0, 1, 0]
    assert table.singer_ids == ["a", "a", "b"]


def test_embedding_spread_of_constant_input_is_zero():
    params = M.init_params(SMALL, np.random.default_rng(0))
    waves = np.tile(np.random.default_rng(1).uniform(-0.3, 0.3, 8192), (4, 1))
    h, z = embedding_spread(params, SMALL, waves)
    assert h < 1e-6 and z < 1e-6


def test_spread_trajectory_rows():
    cfg = small_cfg()
    waves = np.stack([c.clip.samples[:11025] for c in voices(4, seed=2)])
    rows = spread_trajectory(cfg, voices(8), waves, steps=5, every=2)
    assert [r["step"] for r in rows] == [0, 2, 4, 5]
    assert rows[0]["loss"] is None and all(np.isfinite(r["loss"]) for r in rows[1:])
    with pytest.raises(ValueError):
        spread_trajectory(cfg, voices(3), waves, steps=5)
