"""Dice, Jaccard, HD95 and average surface distance on label grids."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import IGNORE, GridError, check_same_hw

log = logging.getLogger(__name__)


class EmptyMaskError(GridError):
    pass


def _masks(pred, truth, c):
    check_same_hw(pred, truth)
    if (pred == IGNORE).any() or (truth == IGNORE).any():
        raise GridError("metrics need label grids without IGNORE")
    return pred == c, truth == c


def overlap_metrics(pred: np.ndarray, truth: np.ndarray, c: int) -> tuple[float, float]:
    a, b = _masks(pred, truth, c)
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0, 1.0
    if na == 0 or nb == 0:
        return 0.0, 0.0
    inter = int(np.logical_and(a, b).sum())
    return 2.0 * inter / (na + nb), inter / (na + nb - inter)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels 4-adjacent to a non-mask pixel or to the image border."""
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return mask & ~interior


def nearest_rank(values: np.ndarray, q: float) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(1, math.ceil(q / 100.0 * len(v)))
    return float(v[rank - 1])


def pooled_surface_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Directed boundary distances a->b followed by b->a."""
    ba, bb = boundary(a), boundary(b)
    to_b = ndimage.distance_transform_edt(~bb)
    to_a = ndimage.distance_transform_edt(~ba)
    return np.concatenate([to_b[ba], to_a[bb]])


def surface_distances(pred: np.ndarray, truth: np.ndarray, c: int) -> tuple[float, float]:
    a, b = _masks(pred, truth, c)
    if not a.any() or not b.any():
        raise EmptyMaskError(f"class {c} mask is empty in {'prediction' if not a.any() else 'truth'}")
    d = pooled_surface_distances(a, b)
    # fsum keeps the mean independent of summation order
    return nearest_rank(d, 95), math.fsum(d.tolist()) / len(d)


@dataclass
class MetricReport:
    classes: int
    dice: list[float] = field(default_factory=list)
    ji: list[float] = field(default_factory=list)
    hd95: list[float] = field(default_factory=list)
    asd: list[float] = field(default_factory=list)
    skipped_distance: int = 0

    @staticmethod
    def _mean(vals):
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_dice(self):
        return self._mean(self.dice)

    @property
    def mean_ji(self):
        return self._mean(self.ji)

    @property
    def mean_hd95(self):
        return self._mean(self.hd95)

    @property
    def mean_asd(self):
        return self._mean(self.asd)

    def to_json(self) -> dict:
        def clean(v):
            return None if math.isnan(v) else v

        return {
            "classes": self.classes,
            "foreground": list(range(1, self.classes)),
            "dice": self.dice,
            "ji": self.ji,
            "hd95": [clean(v) for v in self.hd95],
            "asd": [clean(v) for v in self.asd],
            "mean": {
                "dice": clean(self.mean_dice),
                "ji": clean(self.mean_ji),
                "hd95": clean(self.mean_hd95),
                "asd": clean(self.mean_asd),
            },
            "skipped_distance": self.skipped_distance,
        }


def evaluate(pred: np.ndarray, truth: np.ndarray, classes: int) -> MetricReport:
    """Per-class metrics over the foreground classes ``1..C-1``.

    Distance metrics for a class with an empty prediction or truth mask are
    recorded as NaN, left out of the means and counted in
    ``skipped_distance``.
    """
    report = MetricReport(classes)
    for c in range(1, classes):
        d, j = overlap_metrics(pred, truth, c)
        report.dice.append(d)
        report.ji.append(j)
        try:
            h, s = surface_distances(pred, truth, c)
        except EmptyMaskError as exc:
            log.info("skipping distances: %s", exc)
            h = s = float("nan")
            report.skipped_distance += 1
        report.hd95.append(h)
        report.asd.append(s)
    return report


def mean_foreground_dice(pred: np.ndarray, truth: np.ndarray, classes: int) -> float:
    return float(np.mean([overlap_metrics(pred, truth, c)[0] for c in range(1, classes)]))
