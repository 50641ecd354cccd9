"""Dense 2-D grid types shared by every other module.

Label grids are ``uint8`` arrays of shape ``(H, W)`` holding class ids or
:data:`IGNORE`.  Probability grids are ``float64`` arrays of shape
``(H, W, C)``.  Indexing is row-major ``(row, col)`` with the origin at the
top-left corner.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

IGNORE = 255
PROB_ATOL = 1e-6


class GridError(ValueError):
    """Raised when a grid violates its contract."""


class BoundsError(GridError):
    pass


class ConflictError(GridError):
    pass


@dataclass(frozen=True)
class GridShape:
    height: int
    width: int
    classes: int = 2

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise GridError(f"grid must be at least 1x1, got {self.height}x{self.width}")
        if self.classes < 2:
            raise GridError(f"need at least 2 classes, got {self.classes}")
        if self.classes > IGNORE:
            raise GridError(f"at most {IGNORE} classes fit in a u8 label grid")

    @property
    def hw(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class Stroke:
    """One scribble: a set of ``(row, col)`` pixels sharing a class."""

    pixels: np.ndarray
    cls: int

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "cls", int(self.cls))


@dataclass
class ScribbleSet:
    strokes: list[Stroke] = field(default_factory=list)

    def __len__(self):
        return len(self.strokes)

    def __iter__(self):
        return iter(self.strokes)

    @property
    def n_pixels(self) -> int:
        return sum(len(s.pixels) for s in self.strokes)

    def to_json(self) -> dict:
        return {
            "strokes": [
                {"class": s.cls, "pixels": s.pixels.tolist()} for s in self.strokes
            ]
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScribbleSet":
        strokes = []
        for s in obj.get("strokes", []):
            strokes.append(Stroke(np.asarray(s["pixels"], dtype=np.int64).reshape(-1, 2), s["class"]))
        return cls(strokes)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Sequence, int]]) -> "ScribbleSet":
        return cls([Stroke(np.asarray(px), c) for px, c in pairs])


def check_labels(labels: np.ndarray, classes: int, allow_ignore: bool = True) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise GridError(f"label grid must be 2-D, got shape {labels.shape}")
    bad = (labels >= classes) & (labels != IGNORE)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise GridError(f"label {labels[r, c]} at ({r}, {c}) is not < {classes}")
    if not allow_ignore and (labels == IGNORE).any():
        raise GridError("label grid contains IGNORE where a full labeling is required")
    return labels


def check_probs(p: np.ndarray, atol: float = PROB_ATOL) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 3 or p.shape[2] < 2:
        raise GridError(f"probability grid must be (H, W, C>=2), got {p.shape}")
    if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
        raise GridError("probabilities must be finite and in [0, 1]")
    if np.abs(p.sum(axis=2) - 1.0).max() > atol:
        raise GridError("per-pixel probabilities do not sum to 1")
    return p


def check_same_hw(*grids: np.ndarray) -> None:
    hw = {tuple(np.shape(g)[:2]) for g in grids}
    if len(hw) != 1:
        raise GridError(f"grid shapes differ: {sorted(hw)}")


def labelgrid_from_scribbles(shape: GridShape, scribbles: ScribbleSet) -> np.ndarray:
    out = np.full(shape.hw, IGNORE, dtype=np.uint8)
    for k, stroke in enumerate(scribbles):
        if not 0 <= stroke.cls < shape.classes:
            raise GridError(f"stroke {k} has class {stroke.cls}, need < {shape.classes}")
        px = stroke.pixels
        if len(px) == 0:
            continue
        oob = (px[:, 0] < 0) | (px[:, 0] >= shape.height) | (px[:, 1] < 0) | (px[:, 1] >= shape.width)
        if oob.any():
            r, c = px[np.argmax(oob)]
            raise BoundsError(f"stroke {k} pixel ({r}, {c}) outside {shape.height}x{shape.width} grid")
        current = out[px[:, 0], px[:, 1]]
        clash = (current != IGNORE) & (current != stroke.cls)
        if clash.any():
            r, c = px[np.argmax(clash)]
            raise ConflictError(
                f"pixel ({r}, {c}) claimed by classes {current[np.argmax(clash)]} and {stroke.cls}"
            )
        out[px[:, 0], px[:, 1]] = stroke.cls
    return out


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    """``(H, W)`` class ids to ``(H, W, C)`` float64 indicators; IGNORE rows stay zero."""
    out = np.zeros(labels.shape + (classes,), dtype=np.float64)
    valid = labels != IGNORE
    out[valid, labels[valid].astype(np.intp)] = 1.0
    return out


def argmax_first(p: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the last axis, ties to the smaller class id."""
    # np.argmax already returns the first maximal index
    return np.argmax(p, axis=-1).astype(np.uint8)
