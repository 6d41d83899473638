"""
From synthetic singers to verification numbers, through the command line
=======================================================================

The same steps a user would type, run in-process:

    singerssl synth --out syn
    singerssl train --manifest syn/manifest.jsonl --out run --config run.cfg
    singerssl embed --checkpoint run/checkpoint.bin --manifest syn/manifest.jsonl \\
                    --split val,test --out run/heldout.bin --config run.cfg
    singerssl eval  --embeddings run/heldout.bin --out run/report.json --config run.cfg

    python demos/05_end_to_end.py [loss] [steps]   # default CONT, 150 steps (~3 min)
"""

import json
import sys
import tempfile
from pathlib import Path

from singerssl import cli

loss = sys.argv[1] if len(sys.argv) > 1 else "CONT"
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 150

CONFIG = f"""
# desk-scale run: small batches, short segments, a few hundred updates
loss = {loss}
lr = {3e-4 if loss.upper() == "BYOL" else 1e-3}
batch_size = 32
segment_seconds = 4
max_steps = {steps}
max_epochs = 1000
patience = 1000
val_segment_seconds = 2
eval_segment_seconds = 2
mnr_n = 64
"""

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    (root / "run.cfg").write_text(CONFIG)
    cfg = ["--config", str(root / "run.cfg")]
    manifest = str(root / "syn" / "manifest.jsonl")

    assert cli.main(["synth", "--out", str(root / "syn")]) == 0
    assert cli.main(["train", "--manifest", manifest, "--out", str(root / "run"), *cfg]) == 0

    # one JSON line per epoch: training loss, validation loss, EER, MNR and feature spread
    for line in (root / "run" / "metrics.jsonl").read_text().splitlines()[-3:]:
        row = json.loads(line)
        print(f"epoch {row['epoch']:>3} step {row['step']:>4} loss {row['train_loss']:.3f} "
              f"val EER {row['val_eer']:.3f}")

    assert cli.main(["embed", "--checkpoint", str(root / "run" / "checkpoint.bin"), "--manifest",
                     manifest, "--split", "val,test", "--out", str(root / "run" / "heldout.bin"), *cfg]) == 0
    assert cli.main(["eval", "--embeddings", str(root / "run" / "heldout.bin"), "--task", "similarity",
                     "--out", str(root / "run" / "report.json"), *cfg]) == 0

    # the probe is trained on every split, as a closed-set identification task
    assert cli.main(["embed", "--checkpoint", str(root / "run" / "checkpoint.bin"), "--manifest",
                     manifest, "--out", str(root / "run" / "all.bin"), *cfg]) == 0
    assert cli.main(["eval", "--embeddings", str(root / "run" / "all.bin"), "--task", "probe", *cfg]) == 0
