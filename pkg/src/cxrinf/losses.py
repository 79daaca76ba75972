"""Per-pixel segmentation losses: cross-entropy family, dice, and the hybrid
focal+dice objective used for training.

Conventions: ``p`` is the ground-truth probability (0 or 1 per pixel), ``q``
the predicted probability. Predicted probabilities are clamped away from
{0, 1} by ``Q_MIN`` before any logarithm. All functions are plain numpy and
broadcast over arrays; the torch mirror used in training lives in
``cxrinf.trainer``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Q_MIN = 1e-7
DICE_EPS = 1e-6


@dataclass(frozen=True)
class LossParams:
    """Hybrid-loss parameters: class weight, focusing exponent, dice smoothing."""

    alpha: float = 0.25
    gamma: float = 2.0
    epsilon: float = DICE_EPS
    reduction: str = "mean"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.reduction != "mean":
            raise ValueError(f"unsupported reduction {self.reduction!r}")


def _clamp(q):
    return np.clip(q, Q_MIN, 1.0 - Q_MIN)


def cross_entropy(p, q):
    """CE(p, q) = -p log q - (1-p) log(1-q), with q clamped."""
    q = _clamp(np.asarray(q, dtype=np.float64))
    p = np.asarray(p, dtype=np.float64)
    return -p * np.log(q) - (1.0 - p) * np.log(1.0 - q)


def balanced_cross_entropy(p, q, alpha=0.25):
    """Class-weighted CE: alpha on the positive term, 1-alpha on the negative."""
    q = _clamp(np.asarray(q, dtype=np.float64))
    p = np.asarray(p, dtype=np.float64)
    return -alpha * p * np.log(q) - (1.0 - alpha) * (1.0 - p) * np.log(1.0 - q)


def focal(p, q, alpha=0.25, gamma=2.0):
    """Focal loss; down-weights easy pixels by (1-q)^gamma / q^gamma factors.

    Reduces to ``balanced_cross_entropy`` at gamma = 0.
    """
    q = _clamp(np.asarray(q, dtype=np.float64))
    p = np.asarray(p, dtype=np.float64)
    pos = -alpha * (1.0 - q) ** gamma * p * np.log(q)
    neg = -(1.0 - alpha) * q**gamma * (1.0 - p) * np.log(1.0 - q)
    return pos + neg


def focal_grad(p, q, alpha=0.25, gamma=2.0):
    """d focal / dq per element (clamp treated as inactive)."""
    q = _clamp(np.asarray(q, dtype=np.float64))
    p = np.asarray(p, dtype=np.float64)
    dpos = -alpha * p * ((1.0 - q) ** gamma / q - gamma * (1.0 - q) ** (gamma - 1.0) * np.log(q))
    dneg = -(1.0 - alpha) * (1.0 - p) * (
        gamma * q ** (gamma - 1.0) * np.log(1.0 - q) - q**gamma / (1.0 - q)
    )
    return dpos + dneg


def dice_coefficient(y_mask: np.ndarray, pred_mask: np.ndarray, epsilon: float = DICE_EPS) -> float:
    """Overlap 2|Y n Yhat| / (|Y| + |Yhat|) between two binary masks."""
    y = np.asarray(y_mask)
    yh = np.asarray(pred_mask)
    if y.shape != yh.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {yh.shape}")
    for name, m in (("y_mask", y), ("pred_mask", yh)):
        if not np.isin(m, (0, 1)).all():
            raise ValueError(f"{name} must be binary")
    inter = float(np.sum((y == 1) & (yh == 1)))
    total = float(np.sum(y == 1) + np.sum(yh == 1))
    return (2.0 * inter + epsilon) / (total + epsilon)


def dice_loss(p_field: np.ndarray, q_field: np.ndarray, epsilon: float = DICE_EPS) -> float:
    """Soft dice loss 1 - (2 sum(pq) + eps) / (sum p + sum q + eps)."""
    p = np.asarray(p_field, dtype=np.float64)
    q = np.asarray(q_field, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    num = 2.0 * float(np.sum(p * q)) + epsilon
    den = float(np.sum(p) + np.sum(q)) + epsilon
    return 1.0 - num / den


def dice_loss_grad(p_field: np.ndarray, q_field: np.ndarray, epsilon: float = DICE_EPS) -> np.ndarray:
    """d dice_loss / dq_field, same shape as the inputs."""
    p = np.asarray(p_field, dtype=np.float64)
    q = np.asarray(q_field, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    num = 2.0 * np.sum(p * q) + epsilon
    den = np.sum(p) + np.sum(q) + epsilon
    return -(2.0 * p * den - num) / den**2


def hybrid_loss(p_field: np.ndarray, q_field: np.ndarray, params: LossParams | None = None) -> float:
    """Mean focal over pixels plus the soft dice loss of the whole field."""
    params = params or LossParams()
    p = np.asarray(p_field, dtype=np.float64)
    q = np.asarray(q_field, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    f = float(np.mean(focal(p, q, params.alpha, params.gamma)))
    return f + dice_loss(p, q, params.epsilon)


def hybrid_loss_grad(
    p_field: np.ndarray, q_field: np.ndarray, params: LossParams | None = None
) -> np.ndarray:
    """Analytic gradient of ``hybrid_loss`` with respect to ``q_field``."""
    params = params or LossParams()
    p = np.asarray(p_field, dtype=np.float64)
    q = np.asarray(q_field, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    g = focal_grad(p, q, params.alpha, params.gamma) / p.size
    return g + dice_loss_grad(p, q, params.epsilon)
