"""Siamese training loop: one AdamW update per positive-pair batch.

BYOL keeps a target copy of the encoder and projection that only moves by
EMA toward the online weights; the online branch additionally owns the
predictor head.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import model as M
from .augment import AugmentationConfig
from .losses import LossConfig, Variant, alignment_loss, byol_loss, compose_loss, ema_update
from .metrics import EmbeddingTable, mnr, sample_trials, trials_eer
from .pairs import LoadedClip, PairBatch, epoch_batches

logger = logging.getLogger(__name__)


class NumericalAbort(FloatingPointError):
    """Raised when a training step produces a non-finite loss or gradient."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 120
    segment_seconds: float = 4.0
    max_epochs: int = 100
    max_steps: int | None = None
    patience: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    encoder: M.EncoderSpec = field(default_factory=M.EncoderSpec)
    augmentation: AugmentationConfig | None = field(default_factory=AugmentationConfig)
    byol_symmetrize: bool = True
    byol_normalize: bool = True
    byol_literal: bool = False  # predictor on the target branch
    ema_schedule: str = "constant"  # or "cosine": anneal toward 1
    val_segment_seconds: float = 4.0
    val_trials: int = 5000
    val_mnr_queries: int = 200
    val_mnr_candidates: int = 32
    dtype: str = "float32"

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.batch_size < 2 or self.segment_seconds <= 0:
            raise ValueError("batch_size must be >= 2 and segment_seconds positive")
        if self.ema_schedule not in ("constant", "cosine"):
            raise ValueError("ema_schedule must be 'constant' or 'cosine'")

    @classmethod
    def for_variant(cls, variant, **kw) -> "TrainConfig":
        """Defaults for ``variant``; BYOL gets its own learning rate and decay."""
        v = Variant.parse(variant)
        if v is Variant.BYOL:
            kw.setdefault("learning_rate", 3e-5)
            kw.setdefault("weight_decay", 1.5e-6)
        loss = kw.pop("loss", None) or LossConfig(variant=v)
        return cls(loss=loss, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"]["variant"] = self.loss.variant.value
        if self.augmentation is not None:
            d["augmentation"].pop("pitch_shift", None)
            d["augmentation"]["pitch_shift_hook"] = getattr(
                self.augmentation.pitch_shift, "__name__", "custom")
        return d


@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    cfg: TrainConfig
    target: dict[str, np.ndarray] | None = None
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0

    @classmethod
    def initialize(cls, cfg: TrainConfig) -> "TrainState":
        rng = np.random.default_rng([cfg.seed, 0xE1])
        byol = cfg.loss.variant is Variant.BYOL
        params = M.init_params(cfg.encoder, rng, predictor=byol, dtype=np.dtype(cfg.dtype))
        target = None
        if byol:
            target = {k: v.copy() for k, v in params.items() if not k.startswith("pred.")}
        return cls(params, cfg, target,
                   {k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adamw_update(state: TrainState, grads: dict[str, np.ndarray]) -> None:
    """Adam moments with decoupled weight decay, applied in place."""
    cfg = state.cfg
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for name, p in state.params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        if cfg.weight_decay:
            update = update + cfg.weight_decay * p
        p -= (cfg.learning_rate * update).astype(p.dtype, copy=False)


def ema_coefficient(cfg: TrainConfig, step: int, total_steps: int | None) -> float:
    base = cfg.loss.ema
    if cfg.ema_schedule == "constant" or not total_steps:
        return base
    return 1.0 - (1.0 - base) * (math.cos(math.pi * min(step, total_steps) / total_steps) + 1) / 2


def _features(state, waves):
    return M.features(waves, state.cfg.encoder, state.params["proj.w"].dtype)


def _check_finite(state, value, grads, extra):
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if not math.isfinite(value) or bad:
        diag = {"step": state.step, "loss": value, "nonfinite_grads": bad, **extra,
                "param_norms": {k: float(np.linalg.norm(p)) for k, p in state.params.items()}}
        raise NumericalAbort(f"non-finite loss/gradient at step {state.step}", diag)


def _byol_direction(state, online_z, target_z, cfg):
    """Loss and gradients (w.r.t. online z and predictor) for one BYOL direction."""
    params = state.params
    if cfg.byol_literal:
        q, qcache = M.predict(params, target_z)
        if cfg.byol_normalize:
            qn, qnorm = M.l2_normalize(q)
        else:
            qn = q
        out = alignment_loss(online_z, qn)
        dq = out.grad2
        if cfg.byol_normalize:
            dq = M.l2_normalize_backward(dq, qn, qnorm)
        _, dw, db = M.predict_backward(params, qcache, dq)
        return out.value, out.grad1, dw, db
    q, qcache = M.predict(params, online_z)
    if cfg.byol_normalize:
        p, pnorm = M.l2_normalize(q)
    else:
        p = q
    out = byol_loss(p, target_z)
    dp = out.grad_p
    if cfg.byol_normalize:
        dp = M.l2_normalize_backward(dp, p, pnorm)
    dz, dw, db = M.predict_backward(params, qcache, dp)
    return out.value, dz, dw, db


def train_step(state: TrainState, batch: PairBatch, total_steps: int | None = None) -> dict:
    """Forward both views, back-propagate the configured loss, update in place."""
    cfg = state.cfg
    spec = cfg.encoder
    B = len(batch)
    m = _features(state, np.concatenate([batch.view1, batch.view2]))
    fwd = M.forward(state.params, spec, m)
    z1, z2 = fwd.z[:B], fwd.z[B:]
    h_std = float(np.mean(np.std(fwd.h[:B].astype(np.float64), axis=0)))

    if cfg.loss.variant is Variant.BYOL:
        tz = M.forward(state.target, spec, m, keep_cache=False).z.astype(np.float64)
        oz = fwd.z.astype(np.float64)
        value, dz_a, dw, db = _byol_direction(state, oz[:B], tz[B:], cfg)
        dz = np.zeros_like(oz)
        dz[:B] = dz_a
        terms = {"byol": value}
        if cfg.byol_symmetrize:
            v2, dz_b, dw2, db2 = _byol_direction(state, oz[B:], tz[:B], cfg)
            dz[B:] = dz_b
            value = (value + v2) / 2
            dz, dw, db = dz / 2, (dw + dw2) / 2, (db + db2) / 2
            terms = {"byol": value}
        grads = M.backward(state.params, spec, fwd, dz)
        grads["pred.w"], grads["pred.b"] = dw, db
    else:
        out = compose_loss(cfg.loss, z1, z2, check=False)
        value, terms = out.value, out.terms
        grads = M.backward(state.params, spec, fwd, np.concatenate([out.grad1, out.grad2]))

    dtype = state.params["proj.w"].dtype
    grads = {k: g.astype(dtype, copy=False) for k, g in grads.items()}
    _check_finite(state, value, grads, {"terms": terms})
    adamw_update(state, grads)
    if state.target is not None:
        online = {k: state.params[k] for k in state.target}
        ema_update(state.target, online, ema_coefficient(cfg, state.step, total_steps))
    return {"loss": float(value), "terms": {k: float(v) for k, v in terms.items()},
            "h_std": h_std, "step": state.step}


# --- evaluation helpers ----------------------------------------------------------

def segment_clip(samples: np.ndarray, n: int) -> list[np.ndarray]:
    return [samples[i * n : (i + 1) * n] for i in range(len(samples) // n)]


def embed_clips(params, spec: M.EncoderSpec, clips: Sequence[LoadedClip],
                segment_seconds: float = 4.0) -> EmbeddingTable:
    """Consecutive non-overlapping segments of every clip, one ``h`` per segment."""
    waves, ids, seg, singers = [], [], [], []
    for c in clips:
        n = int(round(segment_seconds * c.clip.sample_rate_hz))
        parts = segment_clip(c.clip.samples, n)
        if not parts:
            logger.warning("%s: shorter than %.2f s, skipped", c.clip_id, segment_seconds)
        for i, s in enumerate(parts):
            waves.append(s)
            ids.append(c.clip_id)
            seg.append(i)
            singers.append(c.singer_id)
    if not waves:
        return EmbeddingTable(np.zeros((0, spec.width), np.float32), [], [], [])
    H = M.embed_waves(params, spec, np.stack(waves))
    return EmbeddingTable(H, ids, seg, singers)


def embedding_spread(params, spec: M.EncoderSpec, waves) -> tuple[float, float]:
    """Mean per-dimension std of ``h`` and of the projections ``z`` over ``waves``.

    A representation that has collapsed to a point has both near zero; a
    projection head can also collapse ``z`` on its own while ``h`` still varies.
    """
    H = M.embed_waves(params, spec, waves).astype(np.float64)
    Z, _ = M.project(params["proj.w"].astype(np.float64), params["proj.b"].astype(np.float64), H)
    return float(np.mean(np.std(H, axis=0))), float(np.mean(np.std(Z, axis=0)))


def spread_trajectory(cfg: TrainConfig, train_clips: Sequence[LoadedClip], probe_waves,
                      steps: int, every: int = 50) -> list[dict]:
    """Train for ``steps`` updates without validation, recording ``embedding_spread``.

    Row 0 is the initialisation; later rows every ``every`` steps carry the
    last batch loss as well.
    """
    state = TrainState.initialize(cfg)
    h, z = embedding_spread(state.params, cfg.encoder, probe_waves)
    rows = [{"step": 0, "h_std": h, "z_std": z, "loss": None}]
    epoch = 0
    while state.step < steps:
        epoch += 1
        before = state.step
        for batch in epoch_batches(train_clips, cfg.batch_size, cfg.segment_seconds,
                                   cfg.augmentation, np.random.default_rng([cfg.seed, epoch])):
            info = train_step(state, batch, steps)
            if state.step % every == 0 or state.step == steps:
                h, z = embedding_spread(state.params, cfg.encoder, probe_waves)
                rows.append({"step": state.step, "h_std": h, "z_std": z, "loss": info["loss"]})
            if state.step >= steps:
                break
        if state.step == before:
            raise ValueError(f"{len(train_clips)} clips cannot fill a batch of {cfg.batch_size}")
    return rows


def validation_loss(state: TrainState, clips: Sequence[LoadedClip], seed: int) -> float | None:
    """Mean loss over un-augmented validation pairs, without updating anything."""
    cfg = state.cfg
    B = min(cfg.batch_size, len(clips))
    if B < 2:
        return None
    rng = np.random.default_rng([seed, 0x7A1])
    losses = []
    for batch in epoch_batches(clips, B, cfg.segment_seconds, None, rng):
        m = _features(state, np.concatenate([batch.view1, batch.view2]))
        z = M.forward(state.params, cfg.encoder, m, keep_cache=False).z.astype(np.float64)
        if cfg.loss.variant is Variant.BYOL:
            tz = M.forward(state.target, cfg.encoder, m, keep_cache=False).z.astype(np.float64)
            q, _ = M.predict(state.params, z[:B])
            p = M.l2_normalize(q)[0] if cfg.byol_normalize else q
            losses.append(byol_loss(p, tz[B:]).value)
        else:
            losses.append(compose_loss(cfg.loss, z[:B], z[B:], check=False).value)
    return float(np.mean(losses)) if losses else None


def validation_metrics(state: TrainState, clips: Sequence[LoadedClip], seed: int) -> dict:
    cfg = state.cfg
    out = {"val_loss": validation_loss(state, clips, seed), "val_eer": None, "val_mnr": None}
    table = embed_clips(state.params, cfg.encoder, clips, cfg.val_segment_seconds)
    out["h_std"] = float(np.mean(np.std(table.vectors.astype(np.float64), axis=0))) if len(table) > 1 else None
    try:
        trials = sample_trials(table, cfg.val_trials, np.random.default_rng([seed, 0xEE]))
        out["val_eer"] = trials_eer(trials).eer
    except ValueError as err:
        logger.debug("validation EER unavailable: %s", err)
    try:
        n = min(cfg.val_mnr_candidates, len(table))
        out["val_mnr"] = mnr(table, cfg.val_mnr_queries, n, np.random.default_rng([seed, 0x33]))
    except ValueError as err:
        logger.debug("validation MNR unavailable: %s", err)
    return out


def _selection_key(metrics: dict, epoch: int) -> tuple:
    """Lower is better: EER, then MNR, then validation loss, then earlier epoch."""
    def val(k):
        x = metrics.get(k)
        return math.inf if x is None else x
    return (val("val_eer"), val("val_mnr"), val("val_loss"), epoch)


# --- checkpoints ----------------------------------------------------------------

@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: dict
    epoch: int = 0
    metrics: dict = field(default_factory=dict)
    target: dict[str, np.ndarray] | None = None

    @property
    def spec(self) -> M.EncoderSpec:
        return M.EncoderSpec(**self.config["encoder"])

    def save(self, path) -> None:
        from .io import write_checkpoint
        write_checkpoint(path, self)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        from .io import read_checkpoint
        return read_checkpoint(path)


def _snapshot(state: TrainState, metrics: dict) -> Checkpoint:
    return Checkpoint(
        {k: v.copy() for k, v in state.params.items()},
        state.cfg.to_dict(), state.epoch, dict(metrics),
        None if state.target is None else {k: v.copy() for k, v in state.target.items()},
    )


def train_loop(
    cfg: TrainConfig,
    train_clips: Sequence[LoadedClip],
    val_clips: Sequence[LoadedClip],
    log_path: str | Path | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> Checkpoint:
    """Train epoch by epoch and return the checkpoint with the best validation EER.

    Stops after ``max_epochs``, after ``max_steps`` updates, or once
    ``patience`` epochs pass without improving the selection key.
    """
    if not train_clips or not val_clips:
        raise ValueError("training needs non-empty train and validation splits")
    state = TrainState.initialize(cfg)
    best = _snapshot(state, {})
    if cfg.max_epochs == 0 or cfg.max_steps == 0:
        return best
    batches_per_epoch = len(train_clips) // cfg.batch_size
    total = cfg.max_steps if cfg.max_steps is not None else cfg.max_epochs * batches_per_epoch
    best_key = None
    stale = 0
    log = open(log_path, "a") if log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            state.epoch = epoch
            rng = np.random.default_rng([cfg.seed, epoch])
            losses = []
            for batch in epoch_batches(train_clips, cfg.batch_size, cfg.segment_seconds,
                                       cfg.augmentation, rng):
                info = train_step(state, batch, total)
                losses.append(info["loss"])
                if on_step:
                    on_step(info)
                if cfg.max_steps is not None and state.step >= cfg.max_steps:
                    break
            metrics = {"epoch": epoch, "step": state.step, "train_loss": float(np.mean(losses)),
                       **validation_metrics(state, val_clips, cfg.seed)}
            if log:
                log.write(json.dumps(metrics) + "\n")
                log.flush()
            key = _selection_key(metrics, epoch)
            if best_key is None or key < best_key:
                best_key, best, stale = key, _snapshot(state, metrics), 0
            else:
                stale += 1
            logger.info("epoch %d step %d loss %.4f val_eer %s", epoch, state.step,
                        metrics["train_loss"], metrics["val_eer"])
            if stale >= cfg.patience or (cfg.max_steps is not None and state.step >= cfg.max_steps):
                break
    finally:
        if log:
            log.close()
    return best
