"""Binary and multi-class focal loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-12


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


def focal_loss(p, y, fp: FocalParams = FocalParams()):
    """``-alpha * (1 - p_t)**gamma * ln(p_t)`` with ``p_t = p`` if ``y`` else ``1 - p``.

    Works elementwise on scalars or arrays; ``p`` is clamped to
    ``[1e-12, 1 - 1e-12]``.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)
    pt = np.where(np.asarray(y) == 1, p, 1.0 - p)
    loss = -fp.alpha * (1.0 - pt) ** fp.gamma * np.log(pt)
    return float(loss) if loss.ndim == 0 else loss


def binary_cross_entropy(p, y):
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)
    y = np.asarray(y, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(loss) if loss.ndim == 0 else loss


def softmax_focal(probs: np.ndarray, labels: np.ndarray, fp: FocalParams):
    """Per-sample focal loss and its gradient w.r.t. the logits.

    ``probs`` are softmax outputs ``(N, K)``; ``labels`` are class indices.
    """
    n = probs.shape[0]
    pt = np.clip(probs[np.arange(n), labels], EPS, 1.0)
    a, g = fp.alpha, fp.gamma
    one_m = 1.0 - pt
    loss = -a * one_m ** g * np.log(pt)
    # d loss / d p_t
    if g == 0:
        dpt = -a / pt
    else:
        dpt = a * (g * one_m ** (g - 1.0) * np.log(pt) - one_m ** g / pt)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    dlogits = (dpt * pt)[:, None] * (onehot - probs)
    return loss, dlogits
