"""Superpixel propagation of labels: scribble expansion, pseudo-label
refinement under per-class EMA thresholds, and superpixel uncertainty."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .grid import (
    IGNORE,
    ConflictError,
    GridError,
    GridShape,
    ScribbleSet,
    argmax_first,
    check_labels,
    check_same_hw,
    labelgrid_from_scribbles,
)
from .slic import SuperpixelMap, superpixel_class_histogram

UNCERTAINTY_MODES = ("none", "superpixel", "pixel", "kl")


def expand_scribbles(
    sp: SuperpixelMap, scribbles: ScribbleSet, classes: int | None = None, on_conflict: str = "raise"
) -> np.ndarray:
    """Label every pixel of a superpixel touched by a stroke with the stroke's
    class; untouched superpixels stay IGNORE."""
    if classes is None:
        classes = max([s.cls for s in scribbles], default=0) + 1
    h, w = sp.shape
    raw = labelgrid_from_scribbles(GridShape(h, w, max(classes, 2)), scribbles)
    return expand_label_grid(sp, raw, max(classes, 2), on_conflict)


def scribble_conflicts(sp: SuperpixelMap, raw: np.ndarray, classes: int) -> np.ndarray:
    """Ids of superpixels touched by strokes of more than one class."""
    counts, _ = superpixel_class_histogram(sp, raw, classes)
    return np.flatnonzero((counts > 0).sum(axis=1) > 1)


def expand_label_grid(sp: SuperpixelMap, raw: np.ndarray, classes: int, on_conflict: str = "raise") -> np.ndarray:
    """Expand a raw scribble grid over superpixels.

    A superpixel touched by two classes raises :class:`ConflictError`, or
    with ``on_conflict="keep"`` is left unexpanded (its stroke pixels keep
    their own labels, the rest stays IGNORE).
    """
    counts, _ = superpixel_class_histogram(sp, raw, classes)
    present = counts > 0
    multi = present.sum(axis=1) > 1
    if multi.any() and on_conflict != "keep":
        j = int(np.flatnonzero(multi)[0])
        a, b = np.flatnonzero(present[j])[:2]
        raise ConflictError(f"superpixel {j} holds scribbles of classes {a} and {b}")
    per_sp = np.where(present.any(axis=1), np.argmax(present, axis=1), IGNORE).astype(np.uint8)
    out = sp.broadcast(per_sp)
    if multi.any():
        clash = sp.broadcast(multi)
        out = np.where(clash, raw, out).astype(np.uint8)
    return out


def ensemble_pseudo_label(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    if p1.shape != p2.shape:
        raise GridError(f"prediction shapes differ: {p1.shape} vs {p2.shape}")
    return argmax_first((p1 + p2) * 0.5)


def dominant_proportion(sp: SuperpixelMap, pseudo: np.ndarray, classes: int):
    """Dominant class and its share ``psi`` for every superpixel."""
    check_labels(pseudo, classes, allow_ignore=False)
    counts, _ = superpixel_class_histogram(sp, pseudo, classes)
    dom = np.argmax(counts, axis=1)
    psi = counts[np.arange(sp.n), dom] / sp.sizes
    return dom, psi


def _threshold_vector(thresholds, classes: int) -> np.ndarray:
    T = thresholds.T if isinstance(thresholds, ThresholdState) else thresholds
    T = np.broadcast_to(np.asarray(T, dtype=np.float64), (classes,))
    return T


def select_superpixels(dom: np.ndarray, psi: np.ndarray, thresholds) -> np.ndarray:
    """Boolean mask of superpixels whose dominant share strictly exceeds the
    threshold of their dominant class."""
    T = np.asarray(thresholds.T if isinstance(thresholds, ThresholdState) else thresholds, dtype=np.float64)
    if T.ndim == 0:
        return psi > T
    return psi > T[dom]


def refine_pseudo_label(sp: SuperpixelMap, pseudo: np.ndarray, thresholds, classes: int | None = None) -> np.ndarray:
    if classes is None:
        classes = len(thresholds.T) if isinstance(thresholds, ThresholdState) else int(pseudo.max()) + 1
    T = _threshold_vector(thresholds, classes)
    dom, psi = dominant_proportion(sp, pseudo, classes)
    chosen = select_superpixels(dom, psi, T)
    return np.where(sp.broadcast(chosen), sp.broadcast(dom), pseudo).astype(np.uint8)


@dataclass(frozen=True)
class ThresholdState:
    T: np.ndarray
    momentum: float = 0.99
    tau0: float = 0.5
    t: int = 0

    def __post_init__(self):
        T = np.array(self.T, dtype=np.float64)
        if T.ndim != 1 or np.any(T < 0.0) or np.any(T > 1.0):
            raise GridError("thresholds must be a vector in [0, 1]")
        if not 0.0 < self.momentum < 1.0:
            raise GridError("EMA momentum must lie in (0, 1)")
        if not 0.0 <= self.tau0 <= 1.0:
            raise GridError("tau0 must lie in [0, 1]")
        T.setflags(write=False)
        object.__setattr__(self, "T", T)

    @classmethod
    def initial(cls, classes: int, tau0: float = 0.5, momentum: float = 0.99) -> "ThresholdState":
        return cls(np.full(classes, tau0), momentum, tau0, 0)

    def to_json(self) -> dict:
        return {"tau0": self.tau0, "lambda": self.momentum, "t": self.t, "T": self.T.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ThresholdState":
        return cls(np.asarray(obj["T"], dtype=np.float64), float(obj["lambda"]), float(obj["tau0"]), int(obj["t"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def batch_class_max(batch_psis: Sequence[tuple[np.ndarray, np.ndarray]], classes: int):
    """Per-image, per-class maximum of psi over superpixels dominated by that
    class; NaN where the class dominates no superpixel of the image."""
    out = np.full((len(batch_psis), classes), np.nan)
    for b, (dom, psi) in enumerate(batch_psis):
        dom = np.asarray(dom)
        psi = np.asarray(psi, dtype=np.float64)
        if len(dom):
            best = np.full(classes, -np.inf)
            np.maximum.at(best, dom, psi)
            out[b] = np.where(np.isfinite(best), best, np.nan)
    return out


def update_thresholds(
    state: ThresholdState,
    batch_psis: Sequence[tuple[np.ndarray, np.ndarray]],
    class_specific: bool = True,
) -> ThresholdState:
    """One EMA step of the per-class thresholds.

    The batch statistic for class ``c`` is the mean over images of the
    largest ``psi`` among that image's superpixels dominated by ``c``.
    Images without such a superpixel are skipped; a class seen in no image
    keeps its threshold.  With ``class_specific=False`` one statistic (mean of
    per-image max ``psi`` over all superpixels) drives every class.
    """
    if len(batch_psis) == 0:
        raise GridError("threshold update needs a non-empty batch")
    classes = len(state.T)
    lam = state.momentum
    if class_specific:
        per_image = batch_class_max(batch_psis, classes)
        seen = ~np.isnan(per_image)
        n_seen = seen.sum(axis=0)
        stat = np.where(seen, per_image, 0.0).sum(axis=0) / np.maximum(n_seen, 1)
        T = np.where(n_seen > 0, lam * state.T + (1.0 - lam) * stat, state.T)
    else:
        maxima = [float(np.max(psi)) for _, psi in batch_psis if len(psi)]
        T = lam * state.T + (1.0 - lam) * float(np.mean(maxima)) if maxima else state.T
    return replace(state, T=np.clip(T, 0.0, 1.0), t=state.t + 1)


@dataclass(frozen=True)
class UncertaintyMap:
    """Uncertainty values and the per-pixel loss weights derived from them.

    ``u`` holds one value per superpixel, except in ``pixel`` mode where it
    is a per-pixel grid.
    """

    u: np.ndarray
    weights: np.ndarray
    mode: str = "superpixel"
    reversed: bool | str = False


def _symmetric_kl(p1: np.ndarray, p2: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    a = np.clip(p1, eps, 1.0)
    b = np.clip(p2, eps, 1.0)
    return 0.5 * (np.sum(a * (np.log(a) - np.log(b)), axis=-1) + np.sum(b * (np.log(b) - np.log(a)), axis=-1))


def superpixel_uncertainty(
    sp: SuperpixelMap,
    p1: np.ndarray,
    p2: np.ndarray,
    mode: str = "superpixel",
    reverse: bool | str = False,
) -> UncertaintyMap:
    """Disagreement between the two heads, pooled per superpixel.

    ``superpixel`` (default): share of pixels whose head argmaxes differ.
    ``pixel``: the per-pixel disagreement indicator itself.
    ``kl``: mean symmetric KL between the heads' soft outputs.
    ``none``: zero uncertainty everywhere.
    Weights are ``exp(-u)``.  ``reverse`` gives higher weight to higher
    uncertainty with ``exp(u - 1)``; ``reverse="literal"`` uses
    ``exp(1 - u)``, which is ``e * exp(-u)`` and therefore leaves any
    ratio-form loss unchanged.
    """
    if p1.shape != p2.shape:
        raise GridError(f"prediction shapes differ: {p1.shape} vs {p2.shape}")
    check_same_hw(sp.sp_id, p1)
    if mode not in UNCERTAINTY_MODES:
        raise GridError(f"unknown uncertainty mode {mode!r}")
    if mode == "none":
        u = np.zeros(sp.n)
        per_pixel = np.zeros(sp.shape)
    elif mode == "pixel":
        u = (argmax_first(p1) != argmax_first(p2)).astype(np.float64)
        per_pixel = u
    else:
        if mode == "superpixel":
            val = (argmax_first(p1) != argmax_first(p2)).astype(np.float64)
        else:
            val = _symmetric_kl(p1, p2)
        u = np.bincount(sp.sp_id.ravel(), weights=val.ravel(), minlength=sp.n) / sp.sizes
        per_pixel = sp.broadcast(u)
    if reverse == "literal":
        weights = _exp_map(1.0 - per_pixel)
    elif reverse:
        weights = _exp_map(per_pixel - 1.0)
    else:
        weights = _exp_map(-per_pixel)
    return UncertaintyMap(u, weights, mode, reverse)


def _exp_map(x: np.ndarray) -> np.ndarray:
    # at most one distinct value per superpixel, so exp each once with libm;
    # vectorised exp may round differently between numpy builds
    vals, inv = np.unique(x, return_inverse=True)
    return np.array([math.exp(v) for v in vals.tolist()])[inv].reshape(x.shape)
