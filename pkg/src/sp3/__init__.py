"""Scribble-supervised segmentation with superpixel-propagated labels."""
from __future__ import annotations

from .grid import IGNORE, GridShape, ScribbleSet, Stroke
from .propagation import (
    ThresholdState,
    dominant_proportion,
    ensemble_pseudo_label,
    expand_scribbles,
    refine_pseudo_label,
    superpixel_uncertainty,
    update_thresholds,
)
from .slic import SuperpixelMap, slic_segment

__version__ = "0.1.0"

__all__ = [
    "IGNORE",
    "GridShape",
    "ScribbleSet",
    "Stroke",
    "SuperpixelMap",
    "ThresholdState",
    "dominant_proportion",
    "ensemble_pseudo_label",
    "expand_scribbles",
    "refine_pseudo_label",
    "slic_segment",
    "superpixel_uncertainty",
    "update_thresholds",
]
