"""Flat ``key = value`` run configuration.

A config file holds one assignment per line (``#`` starts a comment). Command
line flags override file values; the merged result is what every command
runs with and what every output artifact records.
"""

from __future__ import annotations

from pathlib import Path

from .augment import AugmentationConfig, identity_pitch_shift, resampling_pitch_shift
from .losses import LossConfig, Variant
from .model import EncoderSpec
from .train import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, object] = {
    "seed": 0,
    # training
    "loss": "CONT",
    "lr": None,  # None: variant default (1e-4, BYOL 3e-5)
    "weight_decay": None,  # None: variant default (1e-5, BYOL 1.5e-6)
    "batch_size": 120,
    "segment_seconds": 4.0,
    "max_epochs": 100,
    "max_steps": None,
    "patience": 10,
    "val_segment_seconds": 4.0,
    # loss
    "tau": 0.2,
    "uniformity_t": 2.0,
    "uniformity_weight": 1.0,
    "invariance_weight": 25.0,
    "variance_weight": 25.0,
    "covariance_weight": 100.0,
    "variance_target": 1.0,
    "variance_eps": 1e-4,
    "ema": 0.99,
    "ema_schedule": "constant",
    "symmetrize_cont": False,
    "byol_symmetrize": True,
    "byol_normalize": True,
    "byol_literal": False,
    # encoder
    "channels": (64, 96, 128, 128),
    "kernel_sizes": (3, 3, 3, 3),
    "projection_dim": 256,
    # augmentation
    "augment": True,
    "p_apply": 0.5,
    "gain_min_db": -6.0,
    "gain_max_db": 0.0,
    "time_mask_max_fraction": 0.125,
    "snr_low_db": 10.0,
    "snr_high_db": 40.0,
    "pitch_shift": "identity",
    # data
    "mono": False,
    "resample": False,
    # evaluation
    "eval_segment_seconds": 4.0,
    "n_pairs": 50000,
    "mnr_k": 1000,
    "mnr_n": 512,
    "folds": 5,
    "probe_epochs": 200,
    # synthetic corpus
    "n_singers": 32,
    "clips_per_singer": 8,
    "seconds": 6.0,
}

_FLOAT_OR_NONE = {"lr", "weight_decay"}
_INT_OR_NONE = {"max_steps"}
PITCH_SHIFTERS = {"identity": identity_pitch_shift, "resample": resampling_pitch_shift}


def _coerce(key: str, raw):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if key in _FLOAT_OR_NONE or key in _INT_OR_NONE:
            if text.lower() in ("", "none", "default"):
                return None
            return int(text) if key in _INT_OR_NONE else float(text)
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {raw!r}") from err
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            out[key] = _coerce(key, value)
        except ConfigError as err:
            raise ConfigError(f"{source}:{lineno}: {err}") from None
    return out


def resolve(config_file: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then file values, then non-None overrides."""
    cfg = dict(DEFAULTS)
    if config_file:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        cfg.update(parse_config_text(path.read_text(), str(path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = _coerce(key, value)
    try:
        cfg["loss"] = Variant.parse(cfg["loss"]).value
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if cfg["pitch_shift"] not in PITCH_SHIFTERS:
        raise ConfigError(f"pitch_shift must be one of {sorted(PITCH_SHIFTERS)}")
    return cfg


def format_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines)


def jsonable(cfg: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(cfg.items())}


def loss_config(cfg: dict) -> LossConfig:
    return LossConfig(
        variant=cfg["loss"], temperature=cfg["tau"], uniformity_t=cfg["uniformity_t"],
        uniformity_weight=cfg["uniformity_weight"], invariance_weight=cfg["invariance_weight"],
        variance_weight=cfg["variance_weight"], covariance_weight=cfg["covariance_weight"],
        variance_target=cfg["variance_target"], variance_eps=cfg["variance_eps"],
        ema=cfg["ema"], symmetrize_cont=cfg["symmetrize_cont"],
    )


def train_config(cfg: dict) -> TrainConfig:
    """Build a :class:`TrainConfig` from a resolved run config."""
    try:
        aug = None
        if cfg["augment"]:
            aug = AugmentationConfig(
                p_apply=cfg["p_apply"], gain_min_db=cfg["gain_min_db"],
                gain_max_db=cfg["gain_max_db"],
                time_mask_max_fraction=cfg["time_mask_max_fraction"],
                noise_snr_range_db=(cfg["snr_low_db"], cfg["snr_high_db"]),
                pitch_shift=PITCH_SHIFTERS[cfg["pitch_shift"]],
            )
        kw = {}
        if cfg["lr"] is not None:
            kw["learning_rate"] = cfg["lr"]
        if cfg["weight_decay"] is not None:
            kw["weight_decay"] = cfg["weight_decay"]
        return TrainConfig.for_variant(
            cfg["loss"],
            loss=loss_config(cfg),
            batch_size=cfg["batch_size"],
            segment_seconds=cfg["segment_seconds"],
            max_epochs=cfg["max_epochs"],
            max_steps=cfg["max_steps"],
            patience=cfg["patience"],
            seed=cfg["seed"],
            encoder=EncoderSpec(channels=cfg["channels"], kernel_sizes=cfg["kernel_sizes"],
                                projection_dim=cfg["projection_dim"]),
            augmentation=aug,
            byol_symmetrize=cfg["byol_symmetrize"],
            byol_normalize=cfg["byol_normalize"],
            byol_literal=cfg["byol_literal"],
            ema_schedule=cfg["ema_schedule"],
            val_segment_seconds=cfg["val_segment_seconds"],
            **kw,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None
