"""Singer similarity (EER, MNR) and identification (linear probe) on embedding tables."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import log_softmax


@dataclass
class EmbeddingTable:
    """One row per segment: vector plus clip id, segment index and optional singer."""

    vectors: np.ndarray
    clip_ids: list[str]
    segment_index: list[int]
    singer_ids: list[str | None] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        n = len(self.clip_ids)
        if not self.singer_ids:
            self.singer_ids = [None] * n
        if not (self.vectors.shape[0] == n == len(self.segment_index) == len(self.singer_ids)):
            raise ValueError("embedding table columns have different lengths")

    def __len__(self):
        return len(self.clip_ids)

    @property
    def has_labels(self) -> bool:
        return len(self) > 0 and all(s is not None for s in self.singer_ids)

    def subset(self, rows: Sequence[int]) -> "EmbeddingTable":
        rows = list(rows)
        return EmbeddingTable(
            self.vectors[rows],
            [self.clip_ids[i] for i in rows],
            [self.segment_index[i] for i in rows],
            [self.singer_ids[i] for i in rows],
        )


def _unit(X):
    X = np.asarray(X, dtype=np.float64)
    n = np.linalg.norm(X, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("zero embedding vector has no cosine similarity")
    return X / n


def _groups(keys) -> dict:
    g = defaultdict(list)
    for i, k in enumerate(keys):
        g[k].append(i)
    return dict(sorted(g.items()))


# --- EER -----------------------------------------------------------------------

@dataclass
class TrialSet:
    index_a: np.ndarray
    index_b: np.ndarray
    same_singer: np.ndarray
    scores: np.ndarray | None = None

    def __len__(self):
        return len(self.same_singer)

    def score(self, table: EmbeddingTable) -> "TrialSet":
        U = _unit(table.vectors)
        self.scores = np.einsum("ij,ij->i", U[self.index_a], U[self.index_b])
        return self


def sample_trials(table: EmbeddingTable, n_pairs: int, rng: np.random.Generator) -> TrialSet:
    """Same/different-singer trials, each class drawn with probability 1/2."""
    if not table.has_labels:
        raise ValueError("trial sampling needs singer labels")
    groups = _groups(table.singer_ids)
    usable = [g for g in groups.values() if len(g) >= 2]
    if len(groups) < 2 or len(usable) < 2:
        raise ValueError("need at least 2 singers with at least 2 segments each")
    all_singers = list(groups.values())
    a = np.empty(n_pairs, dtype=np.int64)
    b = np.empty(n_pairs, dtype=np.int64)
    same = rng.random(n_pairs) < 0.5
    for t in range(n_pairs):
        if same[t]:
            rows = usable[rng.integers(len(usable))]
            i, j = rng.choice(len(rows), size=2, replace=False)
            a[t], b[t] = rows[i], rows[j]
        else:
            s1, s2 = rng.choice(len(all_singers), size=2, replace=False)
            a[t] = all_singers[s1][rng.integers(len(all_singers[s1]))]
            b[t] = all_singers[s2][rng.integers(len(all_singers[s2]))]
    return TrialSet(a, b, same).score(table)


@dataclass
class DETCurve:
    thresholds: np.ndarray
    false_positive_rate: np.ndarray
    false_negative_rate: np.ndarray


@dataclass
class EERResult:
    eer: float
    threshold: float
    det: DETCurve


def interpolate_crossing(thresholds, fpr, fnr) -> tuple[float, float]:
    """EER at the first sweep point where ``fpr - fnr`` reaches or drops below zero.

    Linear interpolation between that point and the one before it.
    """
    d = fpr - fnr
    k = int(np.argmax(d <= 0))
    if d[k] == 0 or k == 0:
        return float(fpr[k]), float(thresholds[k])
    t = d[k - 1] / (d[k - 1] - d[k])
    eer = fpr[k - 1] + t * (fpr[k] - fpr[k - 1])
    lo, hi = thresholds[k - 1], thresholds[k]
    thr = hi if not np.isfinite(hi) else lo + t * (hi - lo)
    return float(eer), float(thr)


def eer(scores_same, scores_diff) -> EERResult:
    """Equal error rate by sweeping the threshold over every distinct score.

    At threshold ``tau``: FPR is the share of different-singer scores
    ``>= tau``, FNR the share of same-singer scores ``< tau``. A final
    threshold of ``+inf`` closes the curve at (0, 1).
    """
    same = np.asarray(scores_same, dtype=np.float64)
    diff = np.asarray(scores_diff, dtype=np.float64)
    if same.size == 0 or diff.size == 0:
        raise ValueError("EER needs both same-singer and different-singer trials")
    thr = np.append(np.unique(np.concatenate([same, diff])), np.inf)
    # counts of scores strictly below each threshold
    same_below = np.searchsorted(np.sort(same), thr, side="left")
    diff_below = np.searchsorted(np.sort(diff), thr, side="left")
    fnr = same_below / same.size
    fpr = (diff.size - diff_below) / diff.size
    value, at = interpolate_crossing(thr, fpr, fnr)
    return EERResult(value, at, DETCurve(thr, fpr, fnr))


def trials_eer(trials: TrialSet) -> EERResult:
    if trials.scores is None:
        raise ValueError("trials have not been scored")
    s = trials.scores
    return eer(s[trials.same_singer], s[~trials.same_singer])


# --- MNR -----------------------------------------------------------------------

@dataclass
class RankQuery:
    q1: int
    q2: int
    candidates: np.ndarray  # row indices, q2 included exactly once


def rank_of(query_vec, candidate_vecs, target_pos: int) -> int:
    """Zero-based rank of ``target_pos`` after a stable sort by descending cosine."""
    sims = _unit(candidate_vecs) @ _unit(query_vec)
    t = sims[target_pos]
    return int(np.sum(sims > t) + np.sum(sims[:target_pos] == t))


def sample_rank_queries(table: EmbeddingTable, K: int, N: int, rng: np.random.Generator) -> list[RankQuery]:
    groups = _groups(table.clip_ids)
    multi = [rows for rows in groups.values() if len(rows) >= 2]
    if not multi:
        raise ValueError("MNR needs a recording with at least 2 segments")
    if len(table) < N:
        raise ValueError(f"MNR needs at least N={N} segments, table has {len(table)}")
    clip_of = np.array([table.clip_ids[i] for i in range(len(table))], dtype=object)
    queries = []
    for _ in range(K):
        rows = multi[rng.integers(len(multi))]
        i, j = rng.choice(len(rows), size=2, replace=False)
        q1, q2 = rows[i], rows[j]
        others = np.flatnonzero(clip_of != table.clip_ids[q1])
        if others.size < N - 1:
            raise ValueError(f"only {others.size} distractors available, need {N - 1}")
        distractors = rng.choice(others, size=N - 1, replace=False)
        pos = int(rng.integers(N))
        queries.append(RankQuery(q1, q2, np.insert(distractors, pos, q2)))
    return queries


def mnr(table: EmbeddingTable, K: int = 1000, N: int = 512, rng: np.random.Generator | None = None) -> float:
    """Mean over ``K`` retrieval trials of (rank of the same-recording segment) / N."""
    rng = np.random.default_rng(0) if rng is None else rng
    total = 0.0
    for q in sample_rank_queries(table, K, N, rng):
        pos = int(np.flatnonzero(q.candidates == q.q2)[0])
        total += rank_of(table.vectors[q.q1], table.vectors[q.candidates], pos) / N
    return total / K


# --- identification ------------------------------------------------------------

@dataclass
class Fold:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def kfold_splits(table: EmbeddingTable, folds: int, rng: np.random.Generator) -> list[Fold]:
    """File-level folds per singer: fold ``f`` tests part ``f`` and validates part ``f + 1``."""
    if not table.has_labels:
        raise ValueError("k-fold splitting needs singer labels")
    file_fold: dict[str, int] = {}
    files_by_singer: dict[str, list[str]] = defaultdict(list)
    for clip, singer in zip(table.clip_ids, table.singer_ids):
        if clip not in files_by_singer[singer]:
            files_by_singer[singer].append(clip)
    for singer in sorted(files_by_singer):
        files = sorted(files_by_singer[singer])
        if len(files) < folds:
            raise ValueError(f"singer {singer!r} has {len(files)} files, need {folds}")
        for pos, f in enumerate(rng.permutation(len(files))):
            file_fold[files[f]] = pos % folds
    part = np.array([file_fold[c] for c in table.clip_ids])
    out = []
    for f in range(folds):
        val_part = (f + 1) % folds
        out.append(Fold(
            np.flatnonzero((part != f) & (part != val_part)),
            np.flatnonzero(part == val_part),
            np.flatnonzero(part == f),
        ))
    return out


@dataclass
class ProbeResult:
    accuracy: float
    val_accuracy: float
    best_epoch: int
    weights: np.ndarray  # (H + 1, C): standardised-feature weights, bias in the last row
    classes: list[str]
    mean: np.ndarray
    std: np.ndarray


def _design(X, mean, std):
    Xs = (np.asarray(X, dtype=np.float64) - mean) / std
    return np.hstack([Xs, np.ones((Xs.shape[0], 1))])


def train_linear_probe(
    X_train, y_train, X_val, y_val, X_test, y_test, epochs: int = 200
) -> ProbeResult:
    """Softmax regression on frozen embeddings by full-batch gradient descent.

    Features are standardised with training statistics. The step is fixed at
    ``1 / L`` with ``L = lambda_max(A^T A / n) / 2`` the smoothness bound of
    the cross-entropy. The epoch with the best validation accuracy is kept.
    """
    classes = sorted(set(y_train))
    missing = (set(y_test) | set(y_val)) - set(classes)
    if missing:
        raise ValueError(f"labels {sorted(missing)} are absent from the training split")
    lookup = {c: i for i, c in enumerate(classes)}
    X_train = np.asarray(X_train, dtype=np.float64)
    mean = X_train.mean(axis=0)
    std = X_train.std(axis=0)
    std[std == 0] = 1.0
    A = _design(X_train, mean, std)
    Y = np.eye(len(classes))[[lookup[c] for c in y_train]]
    A_val = _design(X_val, mean, std)
    yv = np.array([lookup[c] for c in y_val])
    n = A.shape[0]
    step = 1.0 / (0.5 * np.linalg.eigvalsh(A.T @ A / n)[-1])

    W = np.zeros((A.shape[1], len(classes)))
    best = (-1.0, 0, W.copy())
    for epoch in range(1, epochs + 1):
        logp = log_softmax(A @ W, axis=1)
        W -= step * (A.T @ (np.exp(logp) - Y) / n)
        val_acc = float(np.mean(np.argmax(A_val @ W, axis=1) == yv)) if len(yv) else 0.0
        if val_acc > best[0]:
            best = (val_acc, epoch, W.copy())
    val_acc, best_epoch, W = best
    A_test = _design(X_test, mean, std)
    pred = np.argmax(A_test @ W, axis=1)
    acc = float(np.mean([classes[p] == y for p, y in zip(pred, y_test)]))
    return ProbeResult(acc, val_acc, best_epoch, W, classes, mean, std)


def probe_cross_validate(table: EmbeddingTable, folds: int = 5, rng=None, epochs: int = 200) -> dict:
    """Mean test accuracy of the linear probe over ``folds`` file-level folds."""
    rng = np.random.default_rng(0) if rng is None else rng
    labels = table.singer_ids
    accs = []
    for fold in kfold_splits(table, folds, rng):
        res = train_linear_probe(
            table.vectors[fold.train], [labels[i] for i in fold.train],
            table.vectors[fold.val], [labels[i] for i in fold.val],
            table.vectors[fold.test], [labels[i] for i in fold.test],
            epochs=epochs,
        )
        accs.append(res.accuracy)
    return {"accuracy": float(np.mean(accs)), "fold_accuracy": accs, "folds": folds}
