import numpy as np

from singerssl import synth
from singerssl.dsp import log_mel
from singerssl.pairs import DatasetManifest


def envelope(clip):
    return log_mel(clip).values.mean(axis=1)


def test_same_singer_envelopes_correlate_more():
    rng = np.random.default_rng(0)
    singers = [synth.random_singer(f"s{i}", rng) for i in range(10)]
    clips = {i: [synth.sing(s, 1.0, np.random.default_rng([i, c])) for c in range(4)]
             for i, s in enumerate(singers)}
    env = {i: [envelope(c) for c in cs] for i, cs in clips.items()}
    pick = np.random.default_rng(1)
    same, diff = [], []
    for _ in range(100):
        i = pick.integers(10)
        a, b = pick.choice(4, 2, replace=False)
        same.append(np.corrcoef(env[i][a], env[i][b])[0, 1])
        i, j = pick.choice(10, 2, replace=False)
        diff.append(np.corrcoef(env[i][pick.integers(4)], env[j][pick.integers(4)])[0, 1])
    assert np.mean(same) > np.mean(diff)


def test_clip_is_valid_audio():
    s = synth.random_singer("x", np.random.default_rng(0))
    clip = synth.sing(s, 0.5, np.random.default_rng(1))
    assert len(clip) == 22050 and clip.sample_rate_hz == 44100
    assert 0.29 <= np.max(np.abs(clip.samples)) <= 0.91


def test_singer_split_has_no_overlap():
    names = [f"s{i}" for i in range(32)]
    split = synth.split_singers(names, np.random.default_rng(0))
    counts = {k: list(split.values()).count(k) for k in ("train", "val", "test")}
    assert counts == {"train": 26, "val": 3, "test": 3}


def test_corpus_layout_and_determinism(tmp_path):
    a = synth.make_corpus(tmp_path / "a", n_singers=3, clips_per_singer=2, seconds=0.5, seed=4)
    synth.make_corpus(tmp_path / "b", n_singers=3, clips_per_singer=2, seconds=0.5, seed=4)
    assert len(a) == 6
    loaded = DatasetManifest.load(tmp_path / "a" / "manifest.jsonl")
    assert loaded.entries == a.entries
    for e in a.entries:
        assert (tmp_path / "a" / e.path).read_bytes() == (tmp_path / "b" / e.path).read_bytes()
    by_singer = {}
    for e in a.entries:
        by_singer.setdefault(e.singer_id, set()).add(e.split)
    assert all(len(s) == 1 for s in by_singer.values())
