"""Losses with analytic gradients with respect to the probability inputs.

Dual-head losses return gradients stacked as ``(2, H, W, C)`` (head 1 first)
so they can be summed elementwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import IGNORE, GridError, check_same_hw, one_hot
from .propagation import UncertaintyMap

LOG_CLAMP = 1e-12
DICE_EPS = 1e-5


@dataclass(frozen=True)
class LossValue:
    value: float
    grad: np.ndarray
    empty: bool = False

    def __post_init__(self):
        if not math.isfinite(self.value) or not np.isfinite(self.grad).all():
            raise FloatingPointError("non-finite loss or gradient")


def _omega(target):
    omega = target != IGNORE
    rows, cols = np.nonzero(omega)
    return rows, cols, target[rows, cols].astype(np.intp)


def _pce(p, idx):
    rows, cols, cls = idx
    n = len(rows)
    grad = np.zeros_like(p)
    if n == 0:
        return 0.0, grad
    picked = p[rows, cols, cls]
    clamped = np.clip(picked, LOG_CLAMP, 1.0)
    value = -float(np.sum(np.log(clamped))) / n
    grad[rows, cols, cls] = np.where(picked > LOG_CLAMP, -1.0 / (n * clamped), 0.0)
    return value, grad


def partial_cross_entropy(p: np.ndarray, target: np.ndarray) -> LossValue:
    """Mean negative log-likelihood over the non-IGNORE pixels of ``target``."""
    p = np.asarray(p, dtype=np.float64)
    check_same_hw(p, target)
    idx = _omega(target)
    return LossValue(*_pce(p, idx), empty=len(idx[0]) == 0)


def supervised_loss(p1: np.ndarray, p2: np.ndarray, expanded: np.ndarray) -> LossValue:
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    check_same_hw(p1, p2, expanded)
    idx = _omega(expanded)
    a, ga = _pce(p1, idx)
    b, gb = _pce(p2, idx)
    return LossValue(0.5 * (a + b), 0.5 * np.stack([ga, gb]), len(idx[0]) == 0)


def _dice_inputs(p, target, weights):
    p = np.asarray(p, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    check_same_hw(p, target, weights)
    if (target == IGNORE).any():
        raise GridError("weighted dice needs a full target without IGNORE")
    if not np.all(weights > 0):
        raise GridError("dice weights must be strictly positive")
    y = one_hot(target, p.shape[2])
    w = weights[..., None]
    return p, y, w, np.sum(w * y, axis=(0, 1))


def _dice(p, y, w, wy, eps):
    C = p.shape[2]
    wp = w * p
    inter = np.sum(wp * y, axis=(0, 1))
    den = np.sum(wp, axis=(0, 1)) + wy + eps
    num = 2.0 * inter + eps
    value = 1.0 - float(np.sum(num / den)) / C
    # d dice_c / d p_ic = w_i (2 y_ic (den_c + eps) - num_c) / (den_c + eps)^2
    grad = (w * (num - 2.0 * y * den)) / (den * den * C)
    return value, grad


def weighted_dice(p: np.ndarray, target: np.ndarray, weights: np.ndarray, eps: float = DICE_EPS) -> LossValue:
    """Soft dice loss with per-pixel weights, averaged over all classes."""
    p, y, w, wy = _dice_inputs(p, target, weights)
    return LossValue(*_dice(p, y, w, wy, eps))


def pseudo_label_loss(p1: np.ndarray, p2: np.ndarray, refined: np.ndarray, unc) -> LossValue:
    weights = unc.weights if isinstance(unc, UncertaintyMap) else np.asarray(unc)
    if np.shape(p1) != np.shape(p2):
        raise GridError(f"prediction shapes differ: {np.shape(p1)} vs {np.shape(p2)}")
    p1, y, w, wy = _dice_inputs(p1, refined, weights)
    a, ga = _dice(p1, y, w, wy, DICE_EPS)
    b, gb = _dice(np.asarray(p2, dtype=np.float64), y, w, wy, DICE_EPS)
    return LossValue(a + b, np.stack([ga, gb]))


def total_loss(sup: LossValue, pseu: LossValue) -> LossValue:
    if sup.grad.shape != pseu.grad.shape:
        raise GridError(f"gradient shapes differ: {sup.grad.shape} vs {pseu.grad.shape}")
    return LossValue(sup.value + pseu.value, sup.grad + pseu.grad)


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Chain a probability gradient through softmax to the logits."""
    return p * (grad_p - np.sum(p * grad_p, axis=-1, keepdims=True))
