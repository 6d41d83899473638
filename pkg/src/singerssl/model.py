"""Desk-scale singer encoder with hand-written backpropagation.

``f(x) = normalize(W silu(mean_t g(logmel(x))) + b)``. The encoder ``g`` is a
stack of 1-D convolutions over time (mel bins are input channels), each
followed by ReLU and stride-2 average pooling. Activations are kept
time-major, ``(B, L, C)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import dsp

NORM_FLOOR = 1e-12


@dataclass
class EncoderSpec:
    n_mels: int = dsp.N_MELS
    channels: tuple[int, ...] = (64, 96, 128, 128)
    kernel_sizes: tuple[int, ...] = (3, 3, 3, 3)
    projection_dim: int = 256
    # log-mel values are mapped to (x - input_offset) / input_scale
    input_offset: float = -4.0
    input_scale: float = 6.0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        if len(self.channels) != len(self.kernel_sizes):
            raise ValueError("channels and kernel_sizes must have equal length")
        if any(k % 2 == 0 for k in self.kernel_sizes):
            raise ValueError("kernel sizes must be odd")

    @property
    def width(self) -> int:
        return self.channels[-1]

    def to_dict(self) -> dict:
        return asdict(self)


def silu(x):
    return x / (1.0 + np.exp(-x))


def silu_grad(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


def _he(rng, fan_in, shape, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_params(spec: EncoderSpec, rng: np.random.Generator, predictor: bool = False,
                dtype=np.float32) -> dict[str, np.ndarray]:
    """Encoder, projection and (optionally) predictor parameters, He-initialised."""
    p = {}
    c_in = spec.n_mels
    for i, (c, k) in enumerate(zip(spec.channels, spec.kernel_sizes)):
        p[f"conv{i}.w"] = _he(rng, c_in * k, (c_in * k, c), dtype)
        p[f"conv{i}.b"] = np.zeros(c, dtype)
        c_in = c
    D = spec.projection_dim
    p["proj.w"] = _he(rng, spec.width, (spec.width, D), dtype)
    p["proj.b"] = np.zeros(D, dtype)
    if predictor:
        p["pred.w"] = _he(rng, D, (D, D), dtype)
        p["pred.b"] = np.zeros(D, dtype)
    return p


def encoder_keys(params) -> list[str]:
    return [k for k in params if k.startswith("conv")]


# --- layers -----------------------------------------------------------------

def conv1d(x, w, b, k):
    """Same-padded convolution. ``x (B, L, C)``, ``w (C * k, C_out)``."""
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    cols = sliding_window_view(xp, k, axis=1).reshape(x.shape[0], x.shape[1], -1)
    return cols @ w + b, cols


def conv1d_backward(dy, cols, w, k, in_shape):
    B, L, C = in_shape
    dw = cols.reshape(-1, cols.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.sum(axis=(0, 1))
    dcols = (dy @ w.T).reshape(B, L, C, k)
    pad = k // 2
    dxp = np.zeros((B, L + 2 * pad, C), dtype=dy.dtype)
    for j in range(k):
        dxp[:, j : j + L, :] += dcols[..., j]
    return dxp[:, pad : pad + L], dw, db


def pool2(x):
    """Stride-2 average pooling over time; a trailing odd frame is dropped."""
    L2 = x.shape[1] // 2
    return 0.5 * (x[:, 0 : 2 * L2 : 2] + x[:, 1 : 2 * L2 : 2])


def pool2_backward(dy, L):
    dx = np.zeros((dy.shape[0], L, dy.shape[2]), dtype=dy.dtype)
    half = 0.5 * dy
    dx[:, 0 : 2 * dy.shape[1] : 2] = half
    dx[:, 1 : 2 * dy.shape[1] : 2] = half
    return dx


def l2_normalize(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < NORM_FLOOR):
        raise FloatingPointError("cannot normalise a vector with norm below 1e-12")
    return v / n, n


def l2_normalize_backward(dz, z, n):
    return (dz - z * np.sum(dz * z, axis=-1, keepdims=True)) / n


# --- model pieces ------------------------------------------------------------

def features(waves, spec: EncoderSpec, dtype=np.float32):
    """Scaled log-mel input for a batch of waveforms, ``(B, L, n_mels)``."""
    dtype = np.dtype(dtype).type
    m = dsp.log_mel_batch(waves, n_mels=spec.n_mels, dtype=dtype)
    return (m - dtype(spec.input_offset)) / dtype(spec.input_scale)


def encode(params, spec: EncoderSpec, m, cache: list | None = None):
    """Latent sequence ``(B, L', H)`` for scaled log-mel input ``(B, L, F)``."""
    if m.shape[-1] != spec.n_mels:
        raise ValueError(f"expected {spec.n_mels} mel bins, got {m.shape[-1]}")
    x = m
    for i, k in enumerate(spec.kernel_sizes):
        if x.shape[1] < 2:
            raise ValueError("input too short for the encoder's downsampling")
        y, cols = conv1d(x, params[f"conv{i}.w"], params[f"conv{i}.b"], k)
        if cache is not None:
            cache.append((x.shape, cols, y))
        x = pool2(np.maximum(y, 0.0))
    return x


def encode_backward(params, spec, cache, dh_seq):
    grads = {}
    d = dh_seq
    for i in reversed(range(len(spec.kernel_sizes))):
        in_shape, cols, y = cache[i]
        d = pool2_backward(d, y.shape[1]) * (y > 0)
        d, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = conv1d_backward(
            d, cols, params[f"conv{i}.w"], spec.kernel_sizes[i], in_shape
        )
    return grads


def temporal_pool(h_seq):
    """Mean over time of ``(..., L', H)``."""
    if h_seq.shape[-2] < 1:
        raise ValueError("cannot pool an empty sequence")
    return h_seq.mean(axis=-2)


def project(w, b, h):
    """``normalize(w^T silu(h) + b)`` and the cache needed for its backward pass."""
    a = silu(h)
    v = a @ w + b
    z, n = l2_normalize(v)
    return z, (h, a, z, n)


def project_backward(w, cache, dz):
    h, a, z, n = cache
    dv = l2_normalize_backward(dz, z, n)
    dw = a.T @ dv
    db = dv.sum(axis=0)
    dh = (dv @ w.T) * silu_grad(h)
    return dh, dw, db


@dataclass
class Forward:
    h: np.ndarray
    z: np.ndarray
    caches: dict = field(default_factory=dict)


def forward(params, spec: EncoderSpec, m, keep_cache: bool = True) -> Forward:
    """Pooled embeddings ``h (B, H)`` and unit projections ``z (B, D)``."""
    enc_cache = [] if keep_cache else None
    h_seq = encode(params, spec, m, enc_cache)
    h = temporal_pool(h_seq)
    z, pcache = project(params["proj.w"], params["proj.b"], h)
    return Forward(h, z, {"enc": enc_cache, "proj": pcache, "L": h_seq.shape[1]})


def backward(params, spec: EncoderSpec, fwd: Forward, dz) -> dict[str, np.ndarray]:
    dz = dz.astype(fwd.z.dtype, copy=False)
    dh, dw, db = project_backward(params["proj.w"], fwd.caches["proj"], dz)
    L = fwd.caches["L"]
    dh_seq = np.repeat(dh[:, None, :] / L, L, axis=1)
    grads = encode_backward(params, spec, fwd.caches["enc"], dh_seq)
    grads["proj.w"], grads["proj.b"] = dw, db
    return grads


def predict(params, z):
    """BYOL predictor head, same shape as the projection head (unnormalised output)."""
    a = silu(z)
    return a @ params["pred.w"] + params["pred.b"], (z, a)


def predict_backward(params, cache, dq):
    z, a = cache
    dw = a.T @ dq
    db = dq.sum(axis=0)
    dz = (dq @ params["pred.w"].T) * silu_grad(z)
    return dz, dw, db


def embed_waves(params, spec: EncoderSpec, waves, batch_size: int = 32) -> np.ndarray:
    """Feature embeddings ``h`` for a stack of equal-length segments."""
    dtype = params["proj.w"].dtype
    out = []
    for s in range(0, len(waves), batch_size):
        m = features(waves[s : s + batch_size], spec, dtype)
        out.append(temporal_pool(encode(params, spec, m)))
    return np.concatenate(out) if out else np.zeros((0, spec.width), dtype)
