"""Self-supervised objectives on projection batches, with analytic gradients.

All losses take ``(B, D)`` arrays of projections, work in float64 and return
a :class:`LossOutput` whose ``grad1``/``grad2`` are the derivatives with
respect to the two views. Similarities between normalised projections are
plain dot products; the model's normalisation layer carries the gradient
through ``z = v / |v|``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, MutableMapping

import numpy as np
from scipy.special import logsumexp

NORM_TOL = 1e-6


class Variant(str, enum.Enum):
    CONT = "CONT"
    CONT_VC = "CONT-VC"
    UNIF = "UNIF"
    VICREG = "VICReg"
    BYOL = "BYOL"

    @classmethod
    def parse(cls, name: "str | Variant") -> "Variant":
        if isinstance(name, Variant):
            return name
        key = str(name).strip().upper().replace("_", "-")
        for v in cls:
            if v.value.upper() == key:
                return v
        raise ValueError(f"unknown loss {name!r}; choose from {[v.value for v in cls]}")


@dataclass
class LossConfig:
    variant: Variant = Variant.CONT
    temperature: float = 0.2
    uniformity_t: float = 2.0
    uniformity_weight: float = 1.0
    invariance_weight: float = 25.0
    variance_weight: float = 25.0
    covariance_weight: float = 100.0
    variance_target: float = 1.0
    variance_eps: float = 1e-4
    ema: float = 0.99
    symmetrize_cont: bool = False

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        weights = (self.uniformity_weight, self.invariance_weight,
                   self.variance_weight, self.covariance_weight)
        if min(weights) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.temperature <= 0 or self.variance_eps <= 0:
            raise ValueError("temperature and variance_eps must be positive")
        if not 0.0 <= self.ema <= 1.0:
            raise ValueError("ema must be in [0, 1]")


@dataclass
class LossOutput:
    value: float
    grad1: np.ndarray
    grad2: np.ndarray
    terms: dict[str, float] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)
    grad_p: np.ndarray | None = None  # BYOL: derivative w.r.t. the predictions


def _as_batch(Z, name="Z") -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ValueError(f"{name} must be a (B, D) matrix, got shape {Z.shape}")
    return Z


def _same_shape(Z1, Z2):
    if Z1.shape != Z2.shape:
        raise ValueError(f"view shapes differ: {Z1.shape} vs {Z2.shape}")


def _need_batch(Z, minimum=2):
    if Z.shape[0] < minimum:
        raise ValueError(f"need a batch of at least {minimum} rows, got {Z.shape[0]}")


def _check_unit_rows(Z, name):
    dev = np.max(np.abs(np.linalg.norm(Z, axis=1) - 1.0))
    if dev > NORM_TOL:
        raise ValueError(f"{name} rows must be l2-normalised (max deviation {dev:.2e})")


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _nt_xent_one_way(A, P, tau):
    S = A @ P.T / tau
    B = S.shape[0]
    off = S.copy()
    np.fill_diagonal(off, -np.inf)
    lse = logsumexp(off, axis=1)
    value = float(np.sum(lse - np.diag(S)))
    G = np.exp(off - lse[:, None])  # softmax over j != i, zero diagonal
    G[np.diag_indices(B)] -= 1.0
    return value, G @ P / tau, G.T @ A / tau


def nt_xent_decoupled(Z1, Z2, tau: float = 0.2, symmetrize: bool = False, check: bool = True) -> LossOutput:
    """Decoupled NT-Xent: the positive pair is left out of the denominator.

    ``sum_i [ -s(i,i)/tau + log sum_{j != i} exp(s(i,j)/tau) ]`` with view-1
    rows as anchors and view-2 rows as negatives. ``symmetrize`` averages
    this with the view-2-anchored direction.
    """
    Z1, Z2 = _as_batch(Z1, "Z1"), _as_batch(Z2, "Z2")
    _same_shape(Z1, Z2)
    _need_batch(Z1)
    if check:
        _check_unit_rows(Z1, "Z1")
        _check_unit_rows(Z2, "Z2")
    value, g1, g2 = _nt_xent_one_way(Z1, Z2, tau)
    if symmetrize:
        v_b, g2_b, g1_b = _nt_xent_one_way(Z2, Z1, tau)
        value, g1, g2 = (value + v_b) / 2, (g1 + g1_b) / 2, (g2 + g2_b) / 2
    return LossOutput(value, g1, g2, {"cont": value}, {"cont": 1.0})


def alignment_loss(Z1, Z2) -> LossOutput:
    Z1, Z2 = _as_batch(Z1, "Z1"), _as_batch(Z2, "Z2")
    _same_shape(Z1, Z2)
    diff = Z1 - Z2
    B = Z1.shape[0]
    value = float(np.sum(diff**2) / B)
    g = 2.0 * diff / B
    return LossOutput(value, g, -g, {"align": value}, {"align": 1.0})


def _uniformity_one_view(Z, t):
    B = Z.shape[0]
    diff = Z[:, None, :] - Z[None, :, :]
    d2 = np.sum(diff**2, axis=-1)
    logits = -t * d2
    np.fill_diagonal(logits, -np.inf)
    lse = logsumexp(logits)
    value = float(lse - np.log(B * (B - 1)))
    K = np.exp(logits - lse)  # normalised pair weights, zero diagonal
    grad = -4.0 * t * (K.sum(axis=1)[:, None] * Z - K @ Z)
    return value, grad


def uniformity_loss(Z1, Z2, t: float = 2.0, check: bool = True) -> LossOutput:
    """Average over views of ``log mean_{i != j} exp(-t |z_i - z_j|^2)``."""
    Z1, Z2 = _as_batch(Z1, "Z1"), _as_batch(Z2, "Z2")
    _same_shape(Z1, Z2)
    _need_batch(Z1)
    if check:
        _check_unit_rows(Z1, "Z1")
        _check_unit_rows(Z2, "Z2")
    v1, g1 = _uniformity_one_view(Z1, t)
    v2, g2 = _uniformity_one_view(Z2, t)
    value = (v1 + v2) / 2
    return LossOutput(value, g1 / 2, g2 / 2, {"unif": value}, {"unif": 1.0})


def _variance_single(Z, target, eps):
    B, D = Z.shape
    centered = Z - Z.mean(axis=0)
    std = np.sqrt(np.sum(centered**2, axis=0) / (B - 1) + eps)
    active = std < target
    value = float(np.sum(np.where(active, target - std, 0.0)) / D)
    grad = -(active / (D * (B - 1) * std)) * centered
    return value, grad


def variance_loss(Z, target: float = 1.0, eps: float = 1e-4) -> LossOutput:
    """Hinge on the regularised per-dimension std, ``mean_j max(0, target - sqrt(var_j + eps))``.

    ``var_j`` is the unbiased batch variance. Only ``grad1`` is meaningful.
    """
    Z = _as_batch(Z)
    _need_batch(Z)
    value, grad = _variance_single(Z, target, eps)
    return LossOutput(value, grad, np.zeros_like(grad), {"var": value}, {"var": 1.0})


def _covariance_single(Z):
    B, D = Z.shape
    centered = Z - Z.mean(axis=0)
    C = centered.T @ centered / (B - 1)
    off = C - np.diag(np.diag(C))
    value = float(np.sum(off**2) / D)
    grad = 4.0 * centered @ off / (D * (B - 1))
    return value, grad


def covariance_loss(Z) -> LossOutput:
    """Sum of squared off-diagonal covariance entries divided by ``D``."""
    Z = _as_batch(Z)
    _need_batch(Z)
    value, grad = _covariance_single(Z)
    return LossOutput(value, grad, np.zeros_like(grad), {"cov": value}, {"cov": 1.0})


def byol_loss(P, Zt) -> LossOutput:
    """``mean_i |zt_i - p_i|^2``; the target batch receives no gradient."""
    P, Zt = _as_batch(P, "P"), _as_batch(Zt, "Zt")
    _same_shape(P, Zt)
    B = P.shape[0]
    diff = P - Zt
    value = float(np.sum(diff**2) / B)
    zero = np.zeros_like(P)
    return LossOutput(value, zero, zero.copy(), {"byol": value}, {"byol": 1.0},
                      grad_p=2.0 * diff / B)


def ema_update(
    target: MutableMapping[str, np.ndarray], online: Mapping[str, np.ndarray], tau: float
) -> MutableMapping[str, np.ndarray]:
    """In place: ``target <- tau * target + (1 - tau) * online``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("EMA coefficient must be in [0, 1]")
    if target.keys() != online.keys():
        raise ValueError("target and online parameter names differ")
    for name, t in target.items():
        o = online[name]
        if t.shape != o.shape:
            raise ValueError(f"{name}: shape {t.shape} vs {o.shape}")
        t *= tau
        t += (1.0 - tau) * o
    return target


def _regularizers(cfg: LossConfig, Z1, Z2):
    v1, gv1 = _variance_single(Z1, cfg.variance_target, cfg.variance_eps)
    v2, gv2 = _variance_single(Z2, cfg.variance_target, cfg.variance_eps)
    c1, gc1 = _covariance_single(Z1)
    c2, gc2 = _covariance_single(Z2)
    return ((v1 + v2) / 2, gv1 / 2, gv2 / 2), ((c1 + c2) / 2, gc1 / 2, gc2 / 2)


def compose_loss(cfg: LossConfig, Z1, Z2, P=None, check: bool = True) -> LossOutput:
    """Weighted objective for ``cfg.variant``.

    CONT: cont. CONT-VC: cont + w_var var + w_cov cov. UNIF: align + w_unif unif.
    VICReg: w_inv align + w_var var + w_cov cov. BYOL: mse(P, Z2) with Z2
    the target projections. Variance and covariance are averaged over views.
    ``terms`` holds unweighted values and ``weights`` their coefficients.
    """
    Z1, Z2 = _as_batch(Z1, "Z1"), _as_batch(Z2, "Z2")
    _same_shape(Z1, Z2)
    v = cfg.variant
    if v is Variant.BYOL:
        if P is None:
            raise ValueError("BYOL needs predictor outputs P")
        return byol_loss(P, Z2)

    parts: list[tuple[str, float, float, np.ndarray, np.ndarray]] = []
    if v in (Variant.CONT, Variant.CONT_VC):
        out = nt_xent_decoupled(Z1, Z2, cfg.temperature, cfg.symmetrize_cont, check=check)
        parts.append(("cont", 1.0, out.value, out.grad1, out.grad2))
    if v in (Variant.UNIF, Variant.VICREG):
        out = alignment_loss(Z1, Z2)
        w = 1.0 if v is Variant.UNIF else cfg.invariance_weight
        parts.append(("align", w, out.value, out.grad1, out.grad2))
    if v is Variant.UNIF:
        out = uniformity_loss(Z1, Z2, cfg.uniformity_t, check=check)
        parts.append(("unif", cfg.uniformity_weight, out.value, out.grad1, out.grad2))
    if v in (Variant.CONT_VC, Variant.VICREG):
        _need_batch(Z1)
        var, cov = _regularizers(cfg, Z1, Z2)
        parts.append(("var", cfg.variance_weight, *var))
        parts.append(("cov", cfg.covariance_weight, *cov))

    value = sum(w * val for _, w, val, _, _ in parts)
    grad1 = sum(w * g for _, w, _, g, _ in parts)
    grad2 = sum(w * g for _, w, _, _, g in parts)
    return LossOutput(
        float(value), grad1, grad2,
        {name: val for name, _, val, _, _ in parts},
        {name: w for name, w, _, _, _ in parts},
    )


def _relative_error(analytic, numeric, floor):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def loss_gradient_check(cfg: LossConfig, Z1, Z2, P=None, step: float = 1e-5, floor: float = 1e-6) -> float:
    """Largest relative error between analytic and central-difference gradients.

    For BYOL the free input is ``P`` (``Z2`` is a stop-gradient target whose
    analytic gradient must be exactly zero); otherwise both views are
    perturbed. Entries are compared as ``|a - n| / max(|a|, |n|, floor)``.
    """
    Z1 = _as_batch(Z1).copy()
    Z2 = _as_batch(Z2).copy()
    P = None if P is None else _as_batch(P).copy()

    def f():
        return compose_loss(cfg, Z1, Z2, P, check=False).value

    out = compose_loss(cfg, Z1, Z2, P, check=False)
    if cfg.variant is Variant.BYOL:
        free = [(P, out.grad_p)]
    else:
        free = [(Z1, out.grad1), (Z2, out.grad2)]
    worst = 0.0
    for X, analytic in free:
        numeric = np.empty_like(X)
        for idx in np.ndindex(X.shape):
            orig = X[idx]
            X[idx] = orig + step
            up = f()
            X[idx] = orig - step
            down = f()
            X[idx] = orig
            numeric[idx] = (up - down) / (2 * step)
        worst = max(worst, float(np.max(_relative_error(analytic, numeric, floor))))
    return worst
