"""SLIC superpixels for single-channel images and the superpixel index."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .grid import IGNORE, GridError, check_same_hw


class SlicParameterError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SuperpixelMap:
    sp_id: np.ndarray
    sizes: np.ndarray

    @classmethod
    def from_ids(cls, sp_id) -> "SuperpixelMap":
        ids = np.asarray(sp_id)
        if ids.ndim != 2 or not np.issubdtype(ids.dtype, np.integer):
            raise GridError(f"superpixel ids must be a 2-D integer grid, got {ids.dtype} {ids.shape}")
        ids = ids.astype(np.int32)
        if ids.min() < 0:
            raise GridError("negative superpixel id")
        sizes = np.bincount(ids.ravel())
        if (sizes == 0).any():
            raise GridError(f"superpixel ids are not dense: id {int(np.argmin(sizes))} unused")
        ids.setflags(write=False)
        sizes.setflags(write=False)
        return cls(ids, sizes)

    @property
    def n(self) -> int:
        return len(self.sizes)

    @property
    def shape(self) -> tuple[int, int]:
        return self.sp_id.shape

    @cached_property
    def _order(self) -> np.ndarray:
        return np.argsort(self.sp_id.ravel(), kind="stable")

    def members(self, j: int) -> np.ndarray:
        """Flat (row-major) pixel indices of superpixel ``j``, ascending."""
        stop = int(np.cumsum(self.sizes)[j])
        return self._order[stop - int(self.sizes[j]):stop]

    def broadcast(self, per_sp: np.ndarray) -> np.ndarray:
        """Expand a per-superpixel array to a per-pixel grid."""
        return np.asarray(per_sp)[self.sp_id]

    def __eq__(self, other):
        return isinstance(other, SuperpixelMap) and np.array_equal(self.sp_id, other.sp_id)


def superpixel_class_histogram(sp: SuperpixelMap, labels: np.ndarray, classes: int):
    """Per-superpixel class counts.

    Returns ``(counts, ignored)`` where ``counts[j, c]`` is the number of
    pixels of superpixel ``j`` labelled ``c`` and ``ignored[j]`` counts its
    IGNORE pixels.
    """
    labels = np.asarray(labels)
    check_same_hw(sp.sp_id, labels)
    lab = labels.ravel().astype(np.int64)
    lab = np.where(lab == IGNORE, classes, lab)
    if (lab > classes).any():
        raise GridError(f"label >= {classes} in histogram input")
    flat = sp.sp_id.ravel().astype(np.int64) * (classes + 1) + lab
    hist = np.bincount(flat, minlength=sp.n * (classes + 1)).reshape(sp.n, classes + 1)
    return hist[:, :classes], hist[:, classes]


def _threads() -> int:
    env = os.environ.get("SP3_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _grid_seeds(h: int, w: int, n: int) -> np.ndarray:
    """Cell centres of a regular ny x nx grid, in continuous pixel coordinates."""
    ny = min(h, max(1, round(math.sqrt(n * h / w))))
    nx = min(w, max(1, round(n / ny)))
    ys = (np.arange(ny) + 0.5) * h / ny - 0.5
    xs = (np.arange(nx) + 0.5) * w / nx - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


def _perturb_seeds(img: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """Move each seed to the lowest-gradient pixel of its 3x3 neighbourhood.

    A seed only moves when some neighbour is strictly flatter than the pixel
    it sits on, and never onto a pixel already holding another seed.
    """
    h, w = img.shape
    p = np.pad(img, 1, mode="edge")
    grad = (p[2:, 1:-1] - p[:-2, 1:-1]) ** 2 + (p[1:-1, 2:] - p[1:-1, :-2]) ** 2
    base = np.clip(np.floor(seeds + 0.5).astype(np.int64), 0, [h - 1, w - 1])
    taken = {tuple(b) for b in base.tolist()}
    out = seeds.copy()
    for k, (y, x) in enumerate(base.tolist()):
        best, best_g = None, grad[y, x]
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                yy, xx = y + dy, x + dx
                if not (0 <= yy < h and 0 <= xx < w) or (yy, xx) in taken:
                    continue
                if grad[yy, xx] < best_g:
                    best, best_g = (yy, xx), grad[yy, xx]
        if best is not None:
            taken.discard((y, x))
            taken.add(best)
            out[k] = best
    return out


def _assign_band(img, centers, S, m2, r0, r1):
    """Windowed nearest-center search for rows ``r0:r1``; centers scanned in order."""
    w = img.shape[1]
    best_d = np.full((r1 - r0, w), np.inf)
    best_k = np.full((r1 - r0, w), -1, dtype=np.int64)
    inv_s2 = 1.0 / (S * S)
    for k, (ci, cy, cx) in enumerate(centers):
        y0 = max(r0, int(math.floor(cy - S)))
        y1 = min(r1, int(math.ceil(cy + S)) + 1)
        if y0 >= y1:
            continue
        x0 = max(0, int(math.floor(cx - S)))
        x1 = min(w, int(math.ceil(cx + S)) + 1)
        ys = np.arange(y0, y1, dtype=np.float64)[:, None]
        xs = np.arange(x0, x1, dtype=np.float64)[None, :]
        d = (img[y0:y1, x0:x1] - ci) ** 2 + ((ys - cy) ** 2 + (xs - cx) ** 2) * inv_s2 * m2
        bd = best_d[y0 - r0:y1 - r0, x0:x1]
        closer = d < bd
        bd[closer] = d[closer]
        best_k[y0 - r0:y1 - r0, x0:x1][closer] = k
    return best_k


def _assign(img, centers, S, m2, threads):
    h = img.shape[0]
    if threads <= 1 or h < 2 * threads:
        return _assign_band(img, centers, S, m2, 0, h)
    edges = np.linspace(0, h, threads + 1).astype(int)
    with ThreadPoolExecutor(threads) as pool:
        parts = pool.map(lambda i: _assign_band(img, centers, S, m2, edges[i], edges[i + 1]), range(threads))
        return np.concatenate(list(parts), axis=0)


def _components(labels: np.ndarray) -> np.ndarray:
    """4-connected components of equal-label regions, numbered in raster order."""
    comp = np.zeros(labels.shape, dtype=np.int64)
    offset = 0
    shifted = labels + 1
    for v, sl in enumerate(ndimage.find_objects(shifted)):
        if sl is None:
            continue
        region = shifted[sl] == v + 1
        lab, k = ndimage.label(region)
        target = comp[sl]
        target[region] = lab[region] + offset
        offset += k
    flat = comp.ravel()
    _, first = np.unique(flat, return_index=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    # comp ids are 1..offset, np.unique returns them sorted
    return rank[flat - 1].reshape(labels.shape)


def enforce_connectivity(labels: np.ndarray, min_size: float) -> np.ndarray:
    """Split labels into 4-connected pieces and merge pieces smaller than
    ``min_size`` into their largest neighbour (ties to the smaller id)."""
    comp = _components(labels)
    k = int(comp.max()) + 1
    sizes = np.bincount(comp.ravel(), minlength=k).astype(np.int64)

    pairs = []
    for a, b in ((comp[:, :-1], comp[:, 1:]), (comp[:-1, :], comp[1:, :])):
        diff = a != b
        pairs.append(np.stack([a[diff], b[diff]], axis=1))
    pairs = np.concatenate(pairs)
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    adj: list[set[int]] = [set() for _ in range(k)]
    for a, b in pairs.tolist():
        adj[a].add(b)
        adj[b].add(a)

    parent = np.arange(k)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for c in np.lexsort((np.arange(k), sizes)).tolist():
        root = find(c)
        while sizes[root] < min_size and adj[root]:
            nbrs = sorted(adj[root])
            target = max(nbrs, key=lambda r: (sizes[r], -r))
            keep, gone = min(root, target), max(root, target)
            parent[gone] = keep
            sizes[keep] += sizes[gone]
            merged = (adj[keep] | adj[gone]) - {keep, gone}
            for r in adj[gone]:
                adj[r].discard(gone)
                if r != keep:
                    adj[r].add(keep)
            adj[keep] = merged
            adj[gone] = set()
            root = keep

    roots = np.array([find(c) for c in range(k)])
    merged = roots[comp]
    _, first, inverse = np.unique(merged.ravel(), return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse].reshape(labels.shape).astype(np.int32)


def slic_segment(
    image: np.ndarray,
    n: int,
    compactness: float = 0.1,
    max_iters: int = 10,
    seed: int = 0,
    threads: int | None = None,
) -> SuperpixelMap:
    """Partition a gray image in ``[0, 1]`` into roughly ``n`` superpixels.

    ``seed`` is part of the call signature so callers can record it; the
    procedure itself has no random choices and is a pure function of the
    other arguments.  ``threads`` defaults to ``SP3_THREADS`` and never
    changes the result.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise SlicParameterError(f"expected a 2-D gray image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise SlicParameterError("image intensities must be finite and in [0, 1]")
    h, w = img.shape
    if n < 1 or n > h * w:
        raise SlicParameterError(f"n={n} must be in [1, {h * w}]")
    if compactness <= 0:
        raise SlicParameterError("compactness must be > 0")
    if max_iters < 1:
        raise SlicParameterError("max_iters must be >= 1")
    threads = _threads() if threads is None else max(1, threads)

    S = math.sqrt(h * w / n)
    m2 = float(compactness) ** 2
    seeds = _perturb_seeds(img, _grid_seeds(h, w, n))
    pix = np.clip(np.floor(seeds + 0.5).astype(np.int64), 0, [h - 1, w - 1])
    centers = np.column_stack([img[pix[:, 0], pix[:, 1]], seeds])
    k = len(centers)
    yy, xx = np.mgrid[0:h, 0:w]

    labels = None
    for _ in range(max_iters):
        new = _assign(img, centers, S, m2, threads)
        uncovered = new < 0
        if uncovered.any():
            if labels is not None:
                new[uncovered] = labels[uncovered]
            else:
                pts = np.argwhere(uncovered)
                d = (img[uncovered][:, None] - centers[None, :, 0]) ** 2 + (
                    ((pts[:, :1] - centers[None, :, 1]) ** 2 + (pts[:, 1:] - centers[None, :, 2]) ** 2) * m2 / S**2
                )
                new[uncovered] = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        flat = labels.ravel()
        cnt = np.bincount(flat, minlength=k).astype(np.float64)
        filled = cnt > 0
        for col, vals in enumerate((img, yy, xx)):
            s = np.bincount(flat, weights=vals.ravel().astype(np.float64), minlength=k)
            centers[filled, col] = s[filled] / cnt[filled]

    ids = enforce_connectivity(labels, (h * w / n) / 4.0)
    return SuperpixelMap.from_ids(ids)
