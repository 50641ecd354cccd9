"""Synthetic stand-ins for cardiac (nested rings) and tumour (irregular blob)
segmentation data, with simulated scribbles."""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .grid import GridError, ScribbleSet, Stroke
from .tensorio import tensor_write

log = logging.getLogger(__name__)

FAMILIES = {"rings": 4, "blob": 2}

# class 0 background; rings: 1 RV, 2 MYO, 3 LV; blob: 1 tumour
BASE_INTENSITY = {
    "rings": (0.20, 0.62, 0.40, 0.82),
    "blob": (0.30, 0.75),
}

SPLIT_FRACTIONS = (("train", 5), ("val", 1), ("test", 2))
MIN_FG_FRACTION = 0.01
SCRIBBLE_FRACTION = 0.05
SCRIBBLE_MAX_FRACTION = 0.15
IMAGE_SCRIBBLE_BUDGET = 0.05

# ring geometry in pixels at size 96 (scaled with the image)
LV_RADIUS = (9.0, 13.0)
MYO_THICKNESS = (4.5, 6.5)


@dataclass(frozen=True)
class SynthSpec:
    size: int = 96
    family: str = "rings"
    noise: float = 0.1
    samples: int = 80
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise GridError(f"unknown shape family {self.family!r}")
        if self.size < 32:
            raise GridError("synthetic images need size >= 32")
        if self.noise < 0:
            raise GridError("noise sigma must be >= 0")
        if self.samples < 1:
            raise GridError("need at least one sample")

    @property
    def classes(self) -> int:
        return FAMILIES[self.family]


def _radial(theta, r0, rng, harmonics, roughness):
    r = np.full_like(theta, r0)
    for k in range(1, harmonics + 1):
        amp = roughness * r0 * k ** -1.3 * rng.uniform(0.3, 1.0)
        r += amp * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    return r


def _polar(size, cy, cx):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return np.hypot(yy - cy, xx - cx), np.arctan2(yy - cy, xx - cx)


def _rings_truth(size, rng):
    s = size / 96.0
    cy = size / 2 + rng.uniform(-6, 6) * s
    cx = size / 2 + rng.uniform(-2, 8) * s
    r, th = _polar(size, cy, cx)
    r_lv = _radial(th, rng.uniform(*LV_RADIUS) * s, rng, 3, 0.08)
    r_myo = r_lv + _radial(th, rng.uniform(*MYO_THICKNESS) * s, rng, 2, 0.15)
    lv = r <= r_lv
    myo = (r <= r_myo) & ~lv
    # right ventricle: crescent hugging the left side of the myocardium
    ang = np.pi + rng.uniform(-0.35, 0.35)
    rv_r = rng.uniform(12, 16) * s
    off = float(np.mean(r_myo)) + 0.3 * rv_r
    ry, rx = cy + off * math.sin(ang), cx + off * math.cos(ang)
    rr, rth = _polar(size, ry, rx)
    stretch = 1.0 + 0.35 * np.abs(np.sin(rth - ang))
    rv = (rr <= _radial(rth, rv_r, rng, 3, 0.06) * stretch) & ~(lv | myo)
    truth = np.zeros((size, size), dtype=np.uint8)
    truth[rv] = 1
    truth[myo] = 2
    truth[lv] = 3
    return truth


def _blob_truth(size, rng):
    s = size / 96.0
    cy = size / 2 + rng.uniform(-12, 12) * s
    cx = size / 2 + rng.uniform(-12, 12) * s
    r, th = _polar(size, cy, cx)
    rad = _radial(th, rng.uniform(12, 20) * s, rng, 12, 0.22)
    truth = (r <= rad).astype(np.uint8)
    truth = ndimage.binary_opening(truth, iterations=1).astype(np.uint8)
    lab, k = ndimage.label(truth)
    if k > 1:
        keep = 1 + int(np.argmax(np.bincount(lab.ravel())[1:]))
        truth = (lab == keep).astype(np.uint8)
    return truth


def _valid(truth, classes):
    frac = np.bincount(truth.ravel(), minlength=classes) / truth.size
    return bool(frac[0] > 0 and np.all(frac[1:] >= MIN_FG_FRACTION))


def render_image(truth, family, noise, rng):
    base = np.asarray(BASE_INTENSITY[family])
    levels = np.clip(base + rng.uniform(-0.04, 0.04, size=len(base)), 0.0, 1.0)
    img = levels[truth]
    if noise > 0:
        img = img + rng.normal(0.0, noise, size=truth.shape)
    return np.clip(img, 0.0, 1.0)


def generate_sample(spec: SynthSpec, index: int):
    """Image, truth and scribbles for one sample; depends only on (seed, index)."""
    rng = np.random.default_rng([spec.seed, index])
    make = _rings_truth if spec.family == "rings" else _blob_truth
    for _ in range(100):
        truth = make(spec.size, rng)
        if _valid(truth, spec.classes):
            break
    else:
        raise GridError(f"could not draw a valid {spec.family} mask for sample {index}")
    image = render_image(truth, spec.family, spec.noise, rng)
    scribbles = simulate_scribbles(truth, rng)
    return image, truth, scribbles


def _random_path(region: np.ndarray, length: int, rng, max_restarts: int = 10):
    """Self-avoiding 4-connected walk inside ``region`` of up to ``length`` pixels.

    Steps favour the current heading.  Before each step the unvisited part of
    the region is flood-filled and moves into a pocket too small to hold the
    rest of the stroke are avoided when possible.  A dead end restarts the walk
    from a fresh pixel; the longest attempt is kept.
    """
    pts = np.argwhere(region)
    h, w = region.shape
    best = np.zeros((0, 2), dtype=np.int64)
    moves = ((-1, 0), (1, 0), (0, -1), (0, 1))
    for _ in range(max_restarts + 1):
        y, x = (int(v) for v in pts[rng.integers(len(pts))])
        path = [(y, x)]
        free = region.copy()
        free[y, x] = False
        heading = moves[rng.integers(4)]
        while len(path) < length:
            opts = [
                m for m in moves
                if 0 <= y + m[0] < h and 0 <= x + m[1] < w and free[y + m[0], x + m[1]]
            ]
            if not opts:
                break
            if len(opts) > 1:
                lab, _ = ndimage.label(free)
                room = np.bincount(lab.ravel())
                need = length - len(path)
                sizes = [room[lab[y + m[0], x + m[1]]] for m in opts]
                roomy = [m for m, s in zip(opts, sizes) if s >= need]
                opts = roomy or [opts[int(np.argmax(sizes))]]
            wts = np.array([6.0 if m == heading else 1.0 for m in opts])
            heading = opts[rng.choice(len(opts), p=wts / wts.sum())]
            y, x = y + heading[0], x + heading[1]
            path.append((y, x))
            free[y, x] = False
        if len(path) > len(best):
            best = np.asarray(path, dtype=np.int64)
        if len(best) >= length:
            break
    return best.reshape(-1, 2)


def _stroke_regions(mask, length):
    """Candidate regions for a stroke, from the 2-eroded mask down to the mask.

    Each erosion level keeps only the 4-connected pieces that could hold the
    stroke (the largest piece when none can); empty levels are skipped.
    """
    cross = ndimage.generate_binary_structure(2, 1)
    for it in (2, 1, 0):
        er = ndimage.binary_erosion(mask, structure=cross, iterations=it) if it else mask
        if not er.any():
            continue
        lab, _ = ndimage.label(er, structure=cross)
        sizes = np.bincount(lab.ravel())[1:]
        ok = np.flatnonzero(sizes >= length) + 1
        if not len(ok):
            ok = [int(np.argmax(sizes)) + 1]
        yield np.isin(lab, ok)


def _stroke(mask, length, rng):
    """Walk the most eroded region that fits the whole stroke; else the longest walk found."""
    best = np.zeros((0, 2), dtype=np.int64)
    for region in _stroke_regions(mask, length):
        path = _random_path(region, length, rng)
        if len(path) > len(best):
            best = path
        if len(best) >= length:
            break
    return best


def simulate_scribbles(truth: np.ndarray, seed) -> ScribbleSet:
    """One curvilinear stroke per present class, inside the eroded class mask.

    The mask is eroded by 2 pixels, falling back to 1 and then 0 when the
    eroded mask is empty or cannot hold the whole stroke.

    Each stroke covers ``ceil(5%)`` of its class's pixels; the largest
    class's stroke is trimmed when needed so the image total stays within 5%.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    truth = np.asarray(truth)
    classes = int(truth.max()) + 1
    counts = np.bincount(truth.ravel(), minlength=classes)
    lengths = {c: math.ceil(SCRIBBLE_FRACTION * counts[c]) for c in range(classes) if counts[c]}
    for c in range(classes):
        if not counts[c]:
            log.info("class %d absent, no scribble", c)
    budget = int(math.floor(IMAGE_SCRIBBLE_BUDGET * truth.size))
    over = sum(lengths.values()) - budget
    if over > 0:
        big = max(lengths, key=lambda c: (counts[c], -c))
        lengths[big] -= over
    strokes = []
    for c in sorted(lengths):
        length = max(1, lengths[c])
        path = _stroke(truth == c, length, rng)
        strokes.append(Stroke(path, c))
    return ScribbleSet(strokes)


def split_names(n: int) -> list[str]:
    total = sum(w for _, w in SPLIT_FRACTIONS)
    n_val = max(1, round(n * SPLIT_FRACTIONS[1][1] / total)) if n >= 3 else 0
    n_test = max(1, round(n * SPLIT_FRACTIONS[2][1] / total)) if n >= 3 else 0
    n_train = n - n_val - n_test
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


def generate(spec: SynthSpec, out_dir) -> dict:
    """Write a dataset directory and return its manifest."""
    out = Path(out_dir)
    for sub in ("images", "labels", "scribbles"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    samples = []
    for i, split in enumerate(split_names(spec.samples)):
        image, truth, scribbles = generate_sample(spec, i)
        sid = f"s{i:04d}"
        rec = {
            "id": sid,
            "split": split,
            "image": f"images/{sid}.spt",
            "label": f"labels/{sid}.spt",
            "scribble": f"scribbles/{sid}.json",
            "superpixel": None,
        }
        tensor_write(out / rec["image"], image)
        tensor_write(out / rec["label"], truth)
        with open(out / rec["scribble"], "w") as fh:
            json.dump(scribbles.to_json(), fh)
        samples.append(rec)
    manifest = {"spec": asdict(spec), "classes": spec.classes, "samples": samples}
    write_manifest(out / "manifest.json", manifest)
    return manifest


def write_manifest(path, manifest: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=1)
    os.replace(tmp, path)
