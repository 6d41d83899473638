import numpy as np
import pytest

from singerssl import metrics as Mx
from singerssl.metrics import EmbeddingTable

from oracles import brute_force_eer


def test_eer_matches_brute_force():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        labels = rng.random(200) < 0.5
        labels[:2] = [True, False]
        scores = np.round(rng.normal(labels * 0.8, 1.0), 1)  # rounding forces ties
        same, diff = scores[labels], scores[~labels]
        assert Mx.eer(same, diff).eer == brute_force_eer(same, diff)


def test_eer_perfect_separation_and_chance():
    assert Mx.eer([0.9, 0.8, 0.7], [0.1, 0.2, 0.3]).eer == 0.0
    rng = np.random.default_rng(0)
    s = rng.normal(size=20000)
    labels = rng.random(20000) < 0.5
    assert abs(Mx.eer(s[labels], s[~labels]).eer - 0.5) < 0.02


def test_eer_fully_inverted_scores():
    assert Mx.eer([0.1, 0.2], [0.8, 0.9]).eer == 1.0


def test_eer_needs_both_classes():
    with pytest.raises(ValueError):
        Mx.eer([], [0.1])


def test_det_curve_monotone():
    rng = np.random.default_rng(3)
    res = Mx.eer(rng.normal(1, 1, 300), rng.normal(0, 1, 300))
    assert np.all(np.diff(res.det.false_positive_rate) <= 0)
    assert np.all(np.diff(res.det.false_negative_rate) >= 0)
    assert res.det.false_negative_rate[-1] == 1.0 and res.det.false_positive_rate[-1] == 0.0


def labelled_table(rng, n_singers, clips, segs, dim=8, spread=0.0):
    vecs, cids, seg, sid = [], [], [], []
    centers = rng.standard_normal((n_singers, dim))
    for s in range(n_singers):
        for c in range(clips):
            for k in range(segs):
                vecs.append(centers[s] * spread + rng.standard_normal(dim))
                cids.append(f"s{s}_c{c}")
                seg.append(k)
                sid.append(f"s{s}")
    return EmbeddingTable(np.array(vecs), cids, seg, sid)


def test_trial_sampling_labels_and_balance():
    rng = np.random.default_rng(0)
    table = labelled_table(rng, 5, 3, 2)
    trials = Mx.sample_trials(table, 4000, np.random.default_rng(1))
    sid = np.array(table.singer_ids)
    assert np.array_equal(sid[trials.index_a] == sid[trials.index_b], trials.same_singer)
    assert np.all(trials.index_a != trials.index_b)
    assert abs(trials.same_singer.mean() - 0.5) < 0.03


def test_trial_sampling_errors():
    t = EmbeddingTable(np.ones((2, 3)), ["a", "b"], [0, 0])
    with pytest.raises(ValueError):
        Mx.sample_trials(t, 10, np.random.default_rng(0))
    t = EmbeddingTable(np.ones((3, 3)), ["a", "b", "c"], [0, 0, 0], ["x", "x", "y"])
    with pytest.raises(ValueError):
        Mx.sample_trials(t, 10, np.random.default_rng(0))


def test_separable_embeddings_give_zero_eer():
    rng = np.random.default_rng(2)
    table = labelled_table(rng, 6, 3, 2, spread=50.0)
    assert Mx.trials_eer(Mx.sample_trials(table, 3000, rng)).eer == 0.0


def test_rank_of_ties_are_stable():
    cands = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
    q = np.array([1.0, 0.0])
    assert Mx.rank_of(q, cands, 0) == 0
    assert Mx.rank_of(q, cands, 1) == 1
    assert Mx.rank_of(q, cands, 3) == 2
    assert Mx.rank_of(q, cands, 2) == 3


def test_rank_queries_structure():
    rng = np.random.default_rng(4)
    table = labelled_table(rng, 4, 5, 3)
    for q in Mx.sample_rank_queries(table, 50, 12, np.random.default_rng(0)):
        assert len(q.candidates) == 12
        assert np.sum(q.candidates == q.q2) == 1
        assert table.clip_ids[q.q1] == table.clip_ids[q.q2] and q.q1 != q.q2
        others = [c for c in q.candidates if c != q.q2]
        assert all(table.clip_ids[c] != table.clip_ids[q.q1] for c in others)
        assert len(set(q.candidates.tolist())) == 12


def test_mnr_calibration_small():
    rng = np.random.default_rng(5)
    n = 600
    table = EmbeddingTable(rng.standard_normal((n, 16)), [f"c{i // 2}" for i in range(n)], [i % 2 for i in range(n)])
    value = Mx.mnr(table, 300, 128, np.random.default_rng(1))
    # E[rank]/N = (N - 1) / (2N)
    assert abs(value - 127 / 256) < 0.05


def test_mnr_planted_neighbour_is_zero():
    rng = np.random.default_rng(6)
    base = rng.standard_normal((200, 16))
    vecs = np.repeat(base, 2, axis=0)  # the two segments of a clip coincide
    table = EmbeddingTable(vecs, [f"c{i // 2}" for i in range(400)], [i % 2 for i in range(400)])
    assert Mx.mnr(table, 100, 64, np.random.default_rng(0)) == 0.0


def test_mnr_errors():
    table = EmbeddingTable(np.ones((4, 2)), ["a", "b", "c", "d"], [0, 0, 0, 0])
    with pytest.raises(ValueError):
        Mx.mnr(table, 10, 2)
    table = EmbeddingTable(np.eye(4), ["a", "a", "b", "c"], [0, 1, 0, 0])
    with pytest.raises(ValueError):
        Mx.mnr(table, 10, 8)


def test_kfold_is_file_level_and_partitions():
    rng = np.random.default_rng(7)
    table = labelled_table(rng, 4, 6, 3)
    folds = Mx.kfold_splits(table, 3, np.random.default_rng(0))
    tested = np.concatenate([f.test for f in folds])
    assert sorted(tested.tolist()) == list(range(len(table)))
    cid = np.array(table.clip_ids)
    for f in folds:
        sets = [set(cid[f.train]), set(cid[f.val]), set(cid[f.test])]
        assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
        # every singer appears in every part
        for part in (f.train, f.val, f.test):
            assert len({table.singer_ids[i] for i in part}) == 4


def test_kfold_needs_enough_files():
    table = labelled_table(np.random.default_rng(0), 2, 2, 1)
    with pytest.raises(ValueError):
        Mx.kfold_splits(table, 3, np.random.default_rng(0))


def test_probe_on_separable_and_random_data():
    rng = np.random.default_rng(8)
    table = labelled_table(rng, 5, 5, 2, spread=10.0)
    assert Mx.probe_cross_validate(table, 5, np.random.default_rng(0))["accuracy"] == 1.0
    noise = labelled_table(rng, 5, 5, 2, spread=0.0)
    acc = Mx.probe_cross_validate(noise, 5, np.random.default_rng(0))["accuracy"]
    assert acc < 0.5


def test_probe_step_size_decreases_loss():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((60, 4))
    y = [str(int(v)) for v in (X[:, 0] > 0)]
    res = Mx.train_linear_probe(X, y, X, y, X, y, epochs=50)
    assert res.accuracy > 0.9
    assert res.weights.shape == (5, 2)


def test_probe_missing_label():
    X = np.zeros((4, 2))
    with pytest.raises(ValueError):
        Mx.train_linear_probe(X, ["a", "a", "b", "b"], X[:1], ["c"], X[:1], ["a"])


def test_table_validation_and_subset():
    t = EmbeddingTable(np.arange(6.0).reshape(3, 2), ["a", "b", "c"], [0, 1, 2], ["x", "y", "x"])
    s = t.subset([2, 0])
    assert s.clip_ids == ["c", "a"] and s.singer_ids == ["x", "x"]
    with pytest.raises(ValueError):
        EmbeddingTable(np.zeros((2, 2)), ["a"], [0])
    assert not EmbeddingTable(np.zeros((1, 2)), ["a"], [0]).has_labels
