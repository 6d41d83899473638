"""
Verification and identification metrics on toy embeddings
=========================================================

Three families of fake embeddings: no singer structure, some, and a lot.
Each goes through the same three measurements used on trained encoders:
EER over sampled same/different-singer trials, mean normalised rank of a
recording's other segment, and a 5-fold linear probe.
"""

import numpy as np

from singerssl.metrics import (EmbeddingTable, mnr, probe_cross_validate, sample_trials,
                               trials_eer)


def toy_table(separation, n_singers=16, clips=6, segments=3, dim=24, seed=0):
    """Segment = singer centre * separation + clip offset + segment noise."""
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((n_singers, dim))
    rows, clip_ids, seg, singers = [], [], [], []
    for s in range(n_singers):
        for c in range(clips):
            clip_offset = 0.5 * rng.standard_normal(dim)
            for k in range(segments):
                rows.append(separation * centres[s] + clip_offset + rng.standard_normal(dim))
                clip_ids.append(f"s{s}/c{c}")
                seg.append(k)
                singers.append(f"s{s}")
    return EmbeddingTable(np.array(rows, np.float32), clip_ids, seg, singers)


print(f"{'separation':>10} {'EER':>7} {'MNR':>7} {'probe':>7}   (chance: 50%, 0.5, {1 / 16:.1%})")
for separation in (0.0, 0.5, 1.0, 3.0):
    table = toy_table(separation)
    res = trials_eer(sample_trials(table, 20000, np.random.default_rng(1)))
    m = mnr(table, K=500, N=128, rng=np.random.default_rng(2))
    probe = probe_cross_validate(table, folds=5, rng=np.random.default_rng(3))
    print(f"{separation:>10.1f} {res.eer:>7.1%} {m:>7.3f} {probe['accuracy']:>7.1%}")

# %% The DET curve behind one EER
table = toy_table(1.0)
res = trials_eer(sample_trials(table, 20000, np.random.default_rng(1)))
det = res.det
print(f"\nseparation 1.0: EER {res.eer:.2%} at cosine threshold {res.threshold:.3f}")
for target in (0.01, 0.05, 0.2):
    i = np.argmin(np.abs(det.false_positive_rate - target))
    print(f"  false accepts {det.false_positive_rate[i]:.1%} -> false rejects {det.false_negative_rate[i]:.1%}")

# MNR rewards finding the same recording, so even the no-singer table gets
# help from the clip offset: its MNR sits well below 0.5 while the EER stays near
# chance (a few same-singer trials share a clip).
