"""Binary multi-label loss kernels with analytic gradients.

Five per-label losses, averaged over the label vector.  With q = 1 - p and
probabilities clamped to [eps, 1-eps], eps = 1e-7:

    bce    -(y log p + (1-y) log q)
    wbce   per-label weight times the bce term
    focal  -(y (1-p)^g log p + (1-y) p^g log q)
    asl    focal with separate exponents g+ (positive side) and g-
           (negative side), the negative side using the shifted
           probability pm = max(p - clip, 0) in both factor and log
    poly   bce + epsilon * (1 - pt),  pt = y p + (1-y) q

`loss_grad` differentiates through the sigmoid, i.e. returns dL/dz for
p = sigmoid(z).  Setting focal g = 0, poly epsilon = 0, or asl
g+ = g- = clip = 0 recovers plain bce exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-7

LOSS_KINDS = ("bce", "wbce", "focal", "asl", "poly")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "bce"
    focal_gamma: float = 2.0
    asl_gamma_pos: float = 0.0
    asl_gamma_neg: float = 4.0
    asl_clip: float = 0.05
    poly_epsilon: float = 1.0
    weights: tuple[float, ...] | None = None  # wbce only

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.focal_gamma < 0 or self.asl_gamma_pos < 0 or self.asl_gamma_neg < 0:
            raise ValueError("gammas must be >= 0")
        if not (0.0 <= self.asl_clip < 1.0):
            raise ValueError("asl_clip must be in [0, 1)")
        if self.weights is not None and any(w <= 0 for w in self.weights):
            raise ValueError("weights must be > 0")


def inverse_frequency_weights(counts, n_samples: int) -> tuple[float, ...]:
    """Standard class-balancing weights N / (2 * count_j)."""
    c = np.maximum(np.asarray(counts, dtype=float), 1.0)
    return tuple(n_samples / (2.0 * c))


def _weights(cfg: LossConfig, n: int) -> np.ndarray:
    if cfg.kind != "wbce" or cfg.weights is None:
        return np.ones(n)
    if len(cfg.weights) != n:
        raise ValueError(f"{len(cfg.weights)} weights for {n} labels")
    return np.asarray(cfg.weights, dtype=float)


def _terms(cfg: LossConfig, y: np.ndarray, p: np.ndarray) -> np.ndarray:
    q = 1.0 - p
    log_p = np.log(p)
    log_q = np.log(q)
    if cfg.kind in ("bce", "wbce"):
        t = -(y * log_p + (1 - y) * log_q)
        return _weights(cfg, len(y)) * t
    if cfg.kind == "focal":
        g = cfg.focal_gamma
        return -(y * q ** g * log_p + (1 - y) * p ** g * log_q)
    if cfg.kind == "asl":
        pm = np.maximum(p - cfg.asl_clip, 0.0)
        neg = np.where(pm > 0, -(pm ** cfg.asl_gamma_neg) * np.log(1.0 - pm), 0.0)
        return y * -(q ** cfg.asl_gamma_pos * log_p) + (1 - y) * neg
    # poly
    pt = y * p + (1 - y) * q
    return -(y * log_p + (1 - y) * log_q) + cfg.poly_epsilon * (1.0 - pt)


def _dterms_dp(cfg: LossConfig, y: np.ndarray, p: np.ndarray) -> np.ndarray:
    q = 1.0 - p
    if cfg.kind in ("bce", "wbce"):
        d = -y / p + (1 - y) / q
        return _weights(cfg, len(y)) * d
    if cfg.kind == "focal":
        g = cfg.focal_gamma
        d_pos = g * q ** (g - 1) * np.log(p) - q ** g / p if g > 0 else -1.0 / p
        d_neg = -g * p ** (g - 1) * np.log(q) + p ** g / q if g > 0 else 1.0 / q
        return y * d_pos + (1 - y) * d_neg
    if cfg.kind == "asl":
        gp, gn = cfg.asl_gamma_pos, cfg.asl_gamma_neg
        d_pos = gp * q ** (gp - 1) * np.log(p) - q ** gp / p if gp > 0 else -1.0 / p
        pm = np.maximum(p - cfg.asl_clip, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            if gn > 0:
                d_neg = np.where(pm > 0,
                                 -gn * pm ** (gn - 1) * np.log(1.0 - pm) + pm ** gn / (1.0 - pm),
                                 0.0)
            else:
                d_neg = np.where(pm > 0, 1.0 / (1.0 - pm), 0.0)
        return y * d_pos + (1 - y) * d_neg
    # poly
    d = -y / p + (1 - y) / q
    return d + cfg.poly_epsilon * np.where(y == 1, -1.0, 1.0)


def _prepare(y, p):
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape or y.ndim != 1:
        raise ValueError(f"shape mismatch: targets {y.shape}, probs {p.shape}")
    return y, np.clip(p, EPS, 1.0 - EPS)


def loss_value(cfg: LossConfig, y, p) -> float:
    """Mean per-label loss."""
    y, pc = _prepare(y, p)
    return float(_terms(cfg, y, pc).mean())


def loss_grad(cfg: LossConfig, y, p) -> np.ndarray:
    """Gradient of loss_value with respect to the pre-sigmoid logits of p."""
    y, pc = _prepare(y, p)
    p_raw = np.asarray(p, dtype=float)
    interior = (p_raw > EPS) & (p_raw < 1.0 - EPS)
    dsigmoid = p_raw * (1.0 - p_raw)
    return _dterms_dp(cfg, y, pc) * interior * dsigmoid / len(y)
