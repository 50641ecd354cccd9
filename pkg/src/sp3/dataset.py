"""Dataset manifests: JSON listing samples and the tensors that belong to them."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridShape, ScribbleSet, labelgrid_from_scribbles
from .model import pixel_features
from .slic import SuperpixelMap, slic_segment
from .tensorio import TensorFormatError, tensor_read


class ManifestError(IOError):
    pass


@dataclass
class Sample:
    id: str
    split: str
    image: np.ndarray
    truth: np.ndarray | None
    scribbles: ScribbleSet | None
    sp: SuperpixelMap | None
    _feats: np.ndarray | None = field(default=None, repr=False)
    _raw: np.ndarray | None = field(default=None, repr=False)

    @property
    def feats(self) -> np.ndarray:
        if self._feats is None:
            self._feats = pixel_features(self.image)
        return self._feats

    def raw_scribbles(self, classes: int) -> np.ndarray:
        if self._raw is None:
            h, w = self.image.shape
            self._raw = labelgrid_from_scribbles(GridShape(h, w, classes), self.scribbles)
        return self._raw


@dataclass
class Dataset:
    root: Path
    classes: int
    samples: list[Sample]
    manifest: dict

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]

    def with_superpixels(self, n: int, compactness: float = 0.1, iters: int = 10) -> "Dataset":
        """Copy of the dataset with superpixels recomputed in memory."""
        samples = [
            Sample(s.id, s.split, s.image, s.truth, s.scribbles,
                   slic_segment(s.image, n, compactness, iters), s._feats, s._raw)
            for s in self.samples
        ]
        return Dataset(self.root, self.classes, samples, self.manifest)


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _load(root: Path, rel, sid: str, what: str, required: bool):
    if rel is None:
        if required:
            raise ManifestError(f"sample {sid}: no {what} tensor in manifest")
        return None
    try:
        return tensor_read(root / rel)
    except (OSError, TensorFormatError) as exc:
        raise ManifestError(f"sample {sid}: cannot read {what} {rel}: {exc}") from exc


def load_dataset(path, need_superpixels: bool = True) -> Dataset:
    path = Path(path)
    manifest = read_manifest(path)
    root = path.parent
    classes = int(manifest["classes"])
    samples = []
    for rec in manifest["samples"]:
        sid = rec["id"]
        image = _load(root, rec.get("image"), sid, "image", True)
        truth = _load(root, rec.get("label"), sid, "label", rec["split"] != "train")
        sp_ids = _load(root, rec.get("superpixel"), sid, "superpixel", need_superpixels and rec["split"] == "train")
        scribbles = None
        if rec.get("scribble"):
            try:
                with open(root / rec["scribble"]) as fh:
                    scribbles = ScribbleSet.from_json(json.load(fh))
            except (OSError, ValueError, KeyError) as exc:
                raise ManifestError(f"sample {sid}: cannot read scribbles {rec['scribble']}: {exc}") from exc
        sp = SuperpixelMap.from_ids(sp_ids) if sp_ids is not None else None
        samples.append(Sample(sid, rec["split"], image, truth, scribbles, sp))
    return Dataset(root, classes, samples, manifest)
