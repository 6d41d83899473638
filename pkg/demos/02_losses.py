"""
The five self-supervised objectives
===================================

Each loss is evaluated on two kinds of batch: positive pairs that agree and
pairs that are unrelated. It also shows why a projection that collapses
every input to one point satisfies alignment perfectly and is caught by the
other terms.
"""

import numpy as np

from singerssl import losses as L
from singerssl.losses import LossConfig, Variant


def unit(X):
    return X / np.linalg.norm(X, axis=1, keepdims=True)


rng = np.random.default_rng(0)
B, D = 64, 32
anchor = unit(rng.standard_normal((B, D)))
agreeing = unit(anchor + 0.1 * rng.standard_normal((B, D)))
unrelated = unit(rng.standard_normal((B, D)))
collapsed = np.tile(anchor[:1], (B, 1))

batches = {"agreeing": (anchor, agreeing), "unrelated": (anchor, unrelated),
           "collapsed": (collapsed, collapsed)}

print(f"{'variant':<8} " + " ".join(f"{k:>11}" for k in batches))
for variant in Variant:
    if variant is Variant.BYOL:
        continue
    cfg = LossConfig(variant=variant)
    row = [L.compose_loss(cfg, *pair).value for pair in batches.values()]
    print(f"{variant.value:<8} " + " ".join(f"{v:11.3f}" for v in row))

# Note the VICReg row: on unit vectors each coordinate's std is at most about
# 1/sqrt(D), so the std-1 hinge never switches off and the collapsed batch
# (variance term 0.99, everything else 0) scores below the agreeing one.

# BYOL compares a prediction of one view with the other view's target output.
for name, (z1, z2) in batches.items():
    print(f"BYOL     {name:>9}: {L.byol_loss(z1, z2).value:.3f}")

# %% The individual terms on the collapsed batch
print("\ncollapsed batch, one term at a time")
print(f"  alignment   {L.alignment_loss(collapsed, collapsed).value:.3f}   (already at its minimum)")
print(f"  uniformity  {L.uniformity_loss(collapsed, collapsed).value:.3f}   (its maximum, 0)")
print(f"  variance    {L.variance_loss(collapsed).value:.3f}   (hinge at std 1 is fully active)")
print(f"  covariance  {L.covariance_loss(collapsed).value:.3f}   (zero: no spread, no correlation)")

# %% Rotating the embedding space
Q, R = np.linalg.qr(rng.standard_normal((D, D)))
Q = Q * np.sign(np.diag(R))
wide = rng.standard_normal((B, D)) * np.linspace(0.1, 2, D)
print("\nchange under a joint rotation")
print(f"  nt_xent     {abs(L.nt_xent_decoupled(anchor, agreeing).value - L.nt_xent_decoupled(anchor @ Q, agreeing @ Q).value):.2e}")
print(f"  variance    {abs(L.variance_loss(wide).value - L.variance_loss(wide @ Q).value):.2e}")
print(f"  covariance  {abs(L.covariance_loss(wide).value - L.covariance_loss(wide @ Q).value):.2e}")

# %% Gradients are analytic; a finite-difference check confirms them.
for variant in Variant:
    P = unit(rng.standard_normal((8, 16))) if variant is Variant.BYOL else None
    err = L.loss_gradient_check(LossConfig(variant=variant), unit(rng.standard_normal((8, 16))),
                                unit(rng.standard_normal((8, 16))), P)
    print(f"gradient check {variant.value:<8} max relative error {err:.1e}")
