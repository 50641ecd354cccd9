from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sp3.tensorio import TensorFormatError, decode, encode, tensor_read, tensor_write


def test_header_layout():
    buf = encode(np.zeros((2, 3), dtype=np.uint8))
    assert buf[:4] == b"SPT1"
    assert buf[4] == 0 and buf[5] == 2
    assert buf[6:14] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(buf) == 14 + 6


def test_prob_grid_roundtrip_keeps_sums(tmp_path):
    p = np.random.default_rng(0).random((2, 2, 3))
    p /= p.sum(axis=2, keepdims=True)
    tensor_write(tmp_path / "p.spt", p)
    q = tensor_read(tmp_path / "p.spt", expect_dtype=np.float64)
    assert np.array_equal(p, q)
    assert np.allclose(q.sum(axis=2), 1.0, atol=1e-12)


def test_wide_integers_use_i32():
    ids = np.arange(600, dtype=np.int64).reshape(20, 30)
    buf = encode(ids)
    assert buf[4] == 2
    assert np.array_equal(decode(buf), ids)


def test_small_integers_use_u8():
    assert encode(np.array([[0, 255]], dtype=np.int64))[4] == 0


@pytest.mark.parametrize(
    "mutate, offset",
    [
        (lambda b: b"XPT1" + b[4:], 0),
        (lambda b: b[:4] + bytes([9]) + b[5:], 4),
        (lambda b: b[:-1], None),
        (lambda b: b + b"\0", None),
        (lambda b: b[:5], None),
    ],
)
def test_malformed_files_report_offset(mutate, offset):
    good = encode(np.ones((2, 2)))
    with pytest.raises(TensorFormatError) as exc:
        decode(mutate(good))
    if offset is not None:
        assert exc.value.offset == offset


def test_dtype_expectation():
    with pytest.raises(TensorFormatError):
        decode(encode(np.ones((2, 2))), expect_dtype=np.uint8)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5), elements=st.floats(allow_nan=False)))
def test_float_roundtrip(arr):
    assert np.array_equal(decode(encode(arr)), arr)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6)))
def test_u8_roundtrip(arr):
    out = decode(encode(arr))
    assert out.dtype == np.uint8 and np.array_equal(out, arr)
