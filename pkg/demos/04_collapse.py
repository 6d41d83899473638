"""
Where representational collapse happens
=======================================

The encoder is trained with the invariance (alignment) term alone, and then
with a variance hinge added. The spread of the pooled features ``h`` and of
the projections ``z`` is tracked, each as a ratio to its value at
initialisation.

    python demos/04_collapse.py [steps]   # default 200; 500 takes ~6 min

Alignment alone drives ``z`` toward a single point within a few hundred
steps. The convolutional features ``h`` keep their spread: once the
projection head has collapsed, the alignment gradient reaching ``h`` is
almost zero, and decoupled weight decay is too weak to shrink ``h`` by two
orders of magnitude on this budget.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from singerssl.losses import LossConfig
from singerssl.pairs import DatasetManifest, load_clips
from singerssl.synth import make_corpus
from singerssl.train import TrainConfig, segment_clip, spread_trajectory

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200

with tempfile.TemporaryDirectory() as tmp:
    manifest = make_corpus(Path(tmp), n_singers=32, clips_per_singer=8, seconds=6.0, seed=0)
    clips = load_clips(DatasetManifest.load(Path(tmp) / "manifest.jsonl"), "train")

probe = np.stack([segment_clip(c.clip.samples, 2 * 44100)[0] for c in clips[:64]])

for variance_weight in (0.0, 25.0):
    loss = LossConfig(variant="VICReg", invariance_weight=25.0, variance_weight=variance_weight,
                      covariance_weight=0.0)
    cfg = TrainConfig(loss=loss, learning_rate=1e-3, batch_size=32, segment_seconds=2.0)
    rows = spread_trajectory(cfg, clips, probe, steps=steps, every=50)
    print(f"\ninvariance 25, variance {variance_weight:g}")
    print(f"{'step':>5} {'loss':>9} {'h ratio':>8} {'z ratio':>8}")
    for r in rows:
        loss_txt = "" if r["loss"] is None else f"{r['loss']:.4f}"
        print(f"{r['step']:>5} {loss_txt:>9} {r['h_std'] / rows[0]['h_std']:8.3f} "
              f"{r['z_std'] / rows[0]['z_std']:8.3f}")
