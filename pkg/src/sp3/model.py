"""Shared per-pixel feature extractor with two linear softmax heads.

Head 2 sees its input features through dropout while training, which is the
only structural difference between the heads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .losses import softmax_backward

FEATURES = ("intensity", "mean3", "mean7", "std3", "sobel", "row", "col")
N_FEATURES = len(FEATURES)


def pixel_features(image: np.ndarray) -> np.ndarray:
    """``(H, W)`` image to ``(H*W, 7)`` float64 features."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    m3 = ndimage.uniform_filter(img, 3, mode="reflect")
    m7 = ndimage.uniform_filter(img, 7, mode="reflect")
    sq3 = ndimage.uniform_filter(img * img, 3, mode="reflect")
    std3 = np.sqrt(np.maximum(sq3 - m3 * m3, 0.0))
    sob = np.hypot(ndimage.sobel(img, 0, mode="reflect"), ndimage.sobel(img, 1, mode="reflect")) / 4.0
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    rows /= max(h - 1, 1)
    cols /= max(w - 1, 1)
    return np.stack([img, m3, m7, std3, sob, rows, cols], axis=-1).reshape(-1, N_FEATURES)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class PixelModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    dropout: float = 0.2

    @classmethod
    def init(cls, classes: int, rng: np.random.Generator, scale: float = 0.01, dropout: float = 0.2):
        w1 = rng.normal(0.0, scale, size=(N_FEATURES, classes))
        w2 = rng.normal(0.0, scale, size=(N_FEATURES, classes))
        return cls(w1, np.zeros(classes), w2, np.zeros(classes), dropout)

    @property
    def classes(self) -> int:
        return self.w1.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "PixelModel":
        return PixelModel(*(p.copy() for p in self.params()), dropout=self.dropout)

    def to_tensor(self) -> np.ndarray:
        """Weights as ``(2, F+1, C)``: per head, feature rows then the bias row."""
        return np.stack([np.vstack([self.w1, self.b1]), np.vstack([self.w2, self.b2])])

    @classmethod
    def from_tensor(cls, t: np.ndarray, dropout: float = 0.2) -> "PixelModel":
        t = np.asarray(t, dtype=np.float64)
        if t.ndim != 3 or t.shape[0] != 2 or t.shape[1] != N_FEATURES + 1:
            raise ValueError(f"weight tensor must be (2, {N_FEATURES + 1}, C), got {t.shape}")
        return cls(t[0, :-1].copy(), t[0, -1].copy(), t[1, :-1].copy(), t[1, -1].copy(), dropout)


@dataclass
class ForwardCache:
    feats: np.ndarray
    feats2: np.ndarray
    p1: np.ndarray
    p2: np.ndarray


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout multiplier: zero with probability ``rate``, else ``1/(1-rate)``."""
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward(model: PixelModel, image: np.ndarray, train_mode: bool = False, rng=None, feats=None):
    """Two ``(H, W, C)`` probability grids; also returns the cache for backward."""
    h, w = np.shape(image)
    f = pixel_features(image) if feats is None else feats
    f2 = f
    if train_mode and model.dropout > 0:
        if rng is None:
            raise ValueError("train-mode forward needs an rng for dropout")
        f2 = f * dropout_mask(rng, f.shape, model.dropout)
    C = model.classes
    p1 = softmax(f @ model.w1 + model.b1).reshape(h, w, C)
    p2 = softmax(f2 @ model.w2 + model.b2).reshape(h, w, C)
    return p1, p2, ForwardCache(f, f2, p1, p2)


def backward(cache: ForwardCache, grad_p1: np.ndarray, grad_p2: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients ``[dw1, db1, dw2, db2]`` from probability gradients."""
    C = cache.p1.shape[-1]
    dz1 = softmax_backward(cache.p1, grad_p1).reshape(-1, C)
    dz2 = softmax_backward(cache.p2, grad_p2).reshape(-1, C)
    return [cache.feats.T @ dz1, dz1.sum(axis=0), cache.feats2.T @ dz2, dz2.sum(axis=0)]


class SGD:
    """Heavy-ball SGD with coupled L2 weight decay (PyTorch semantics)."""

    def __init__(self, params: list[np.ndarray], lr: float, momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.bufs = [None] * len(params)

    def step(self, grads: list[np.ndarray]) -> None:
        for k, (p, g) in enumerate(zip(self.params, grads)):
            d = g + self.weight_decay * p
            if self.momentum:
                buf = d.copy() if self.bufs[k] is None else self.momentum * self.bufs[k] + d
                self.bufs[k] = buf
                d = buf
            p -= self.lr * d
