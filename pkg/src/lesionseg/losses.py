"""Segmentation losses and the SGD update, each with an exact gradient."""

from __future__ import annotations

from typing import Dict, Tuple

import numpy as np

from .errors import ShapeError

BCE_CLAMP = 1e-7


def _check(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")


def bce_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean binary cross-entropy over all pixels, predictions clamped to
    ``[1e-7, 1 - 1e-7]``. The gradient is zero where the clamp is active."""
    _check(pred, target)
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = target.astype(pred.dtype)
    n = pred.size
    loss = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p), dtype=np.float64)
    grad = (-(y / p) + (1 - y) / (1 - p)) / n
    active = (pred >= BCE_CLAMP) & (pred <= 1.0 - BCE_CLAMP)
    return float(loss), np.where(active, grad, 0).astype(pred.dtype)


def soft_jaccard_loss(pred: np.ndarray, target: np.ndarray, smooth: float = 1.0) -> Tuple[float, np.ndarray]:
    """``1 - (sum(p*y) + eps) / (sum(p) + sum(y) - sum(p*y) + eps)`` over the whole batch."""
    _check(pred, target)
    p = pred.astype(np.float64)
    y = target.astype(np.float64)
    inter = float((p * y).sum())
    union = float(p.sum() + y.sum()) - inter + smooth
    num = inter + smooth
    loss = 1.0 - num / union
    grad = -(y * union - num * (1.0 - y)) / (union * union)
    return loss, grad.astype(pred.dtype)


LOSSES = {"bce": bce_loss, "soft_jaccard": soft_jaccard_loss}


def sgd_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    velocity: Dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
) -> None:
    """In place: ``v = momentum*v - lr*(g + weight_decay*w); w = w + v``.

    Missing velocity entries start at zero.
    """
    for k, w in params.items():
        g = grads[k]
        if g.shape != w.shape:
            raise ShapeError(f"{k}: gradient shape {g.shape} != parameter shape {w.shape}")
        v = velocity.get(k)
        if v is None:
            v = np.zeros_like(w)
        elif v.shape != w.shape:
            raise ShapeError(f"{k}: velocity shape {v.shape} != parameter shape {w.shape}")
        v *= momentum
        v -= lr * (g + weight_decay * w)
        velocity[k] = v
        w += v
