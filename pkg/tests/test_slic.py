from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from sp3.grid import GridError
from sp3.slic import SlicParameterError, SuperpixelMap, enforce_connectivity, slic_segment, superpixel_class_histogram


def smooth_image(rng, size=64, sigma=3.0):
    f = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma)
    f -= f.min()
    return f / max(f.max(), 1e-12)


def is_connected_partition(sp: SuperpixelMap) -> bool:
    for j in range(sp.n):
        _, k = ndimage.label(sp.sp_id == j)
        if k != 1:
            return False
    return True


def test_constant_image_tiles_quadrants():
    sp = slic_segment(np.full((8, 8), 0.5), 4)
    assert sp.n == 4
    assert sp.sizes.tolist() == [16, 16, 16, 16]
    assert is_connected_partition(sp)


def test_every_pixel_its_own_superpixel():
    sp = slic_segment(np.array([[0.1, 0.9], [0.4, 0.6]]), 4)
    assert sp.n == 4 and sorted(sp.sp_id.ravel().tolist()) == [0, 1, 2, 3]


def test_two_tone_boundary_on_step():
    img = np.zeros((16, 16))
    img[:, 8:] = 1.0
    sp = slic_segment(img, 2, compactness=0.1)
    assert sp.n == 2
    assert len(set(sp.sp_id[:, :8].ravel())) == 1
    assert len(set(sp.sp_id[:, 8:].ravel())) == 1


def test_parameter_errors():
    with pytest.raises(SlicParameterError):
        slic_segment(np.zeros((4, 4)), 0)
    with pytest.raises(SlicParameterError):
        slic_segment(np.zeros((4, 4)), 17)
    with pytest.raises(SlicParameterError):
        slic_segment(np.full((4, 4), 1.5), 2)
    with pytest.raises(SlicParameterError):
        slic_segment(np.zeros((4, 4, 3)), 2)


def test_ids_dense_and_in_raster_order(rng):
    sp = slic_segment(smooth_image(rng, 32), 20)
    first_seen = []
    for v in sp.sp_id.ravel():
        if v not in first_seen:
            first_seen.append(v)
    assert first_seen == list(range(sp.n))


def test_thread_count_does_not_change_result(rng):
    img = smooth_image(rng, 48)
    assert slic_segment(img, 60, threads=1) == slic_segment(img, 60, threads=4)


def test_members_and_sizes_agree(rng):
    sp = slic_segment(smooth_image(rng, 24), 12)
    seen = np.concatenate([sp.members(j) for j in range(sp.n)])
    assert sorted(seen.tolist()) == list(range(24 * 24))
    for j in range(sp.n):
        assert len(sp.members(j)) == sp.sizes[j]
        assert np.all(sp.sp_id.ravel()[sp.members(j)] == j)


def test_from_ids_rejects_gaps():
    with pytest.raises(GridError):
        SuperpixelMap.from_ids(np.array([[0, 2]]))


def test_histogram_counts():
    sp = SuperpixelMap.from_ids(np.array([[0, 0, 1], [1, 1, 1]]))
    lab = np.array([[1, 255, 0], [0, 1, 255]], dtype=np.uint8)
    counts, ignored = superpixel_class_histogram(sp, lab, 2)
    assert counts.tolist() == [[0, 1], [2, 1]]
    assert ignored.tolist() == [1, 1]


def test_connectivity_merges_small_fragment_into_largest_neighbour():
    labels = np.array(
        [
            [0, 0, 0, 1, 1],
            [0, 0, 2, 1, 1],
            [0, 0, 0, 1, 1],
            [0, 0, 0, 1, 1],
        ]
    )
    out = enforce_connectivity(labels, 2)
    # the single pixel of label 2 touches 0 (larger) and 1
    assert out[1, 2] == out[0, 0]
    assert len(np.unique(out)) == 2


def test_connectivity_tie_goes_to_smaller_id():
    labels = np.array([[0, 0, 2, 1, 1]])
    out = enforce_connectivity(labels, 2)
    assert out[0, 2] == out[0, 0]


def test_split_label_becomes_two_superpixels():
    labels = np.array([[0, 1, 0], [0, 1, 0]])
    out = enforce_connectivity(labels, 1)
    assert len(np.unique(out)) == 3


@settings(max_examples=25, deadline=None)
@given(st.integers(8, 40), st.integers(8, 40), st.integers(1, 60), st.integers(0, 2**31 - 1))
def test_partition_properties(h, w, n, seed):
    n = min(n, h * w)
    img = np.random.default_rng(seed).random((h, w))
    sp = slic_segment(img, n)
    assert sp.sp_id.shape == (h, w)
    assert sp.sizes.sum() == h * w
    assert is_connected_partition(sp)
    assert sp == slic_segment(img, n)


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 28), st.floats(0.5, 1.0), st.integers(0, 2**31 - 1))
def test_no_superpixel_straddles_a_strong_step(col, step, seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(0.0, 1.0 - step)
    img = np.full((32, 32), lo)
    img[:, col:] = lo + step
    sp = slic_segment(img, int(rng.integers(4, 60)), compactness=0.1)
    left = set(sp.sp_id[:, :col].ravel().tolist())
    right = set(sp.sp_id[:, col:].ravel().tolist())
    assert not left & right
