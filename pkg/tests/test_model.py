from __future__ import annotations

import numpy as np
import pytest

from sp3.model import N_FEATURES, SGD, PixelModel, backward, dropout_mask, forward, pixel_features, softmax


def image(rng, h=8, w=8):
    return rng.random((h, w))


def test_features_shape_and_coordinates(rng):
    f = pixel_features(image(rng, 5, 7))
    assert f.shape == (35, N_FEATURES)
    assert f[0, 5] == 0.0 and f[-1, 5] == 1.0 and f[-1, 6] == 1.0


def test_eval_forward_is_deterministic(rng):
    m = PixelModel.init(3, rng)
    img = image(rng)
    a1, a2, _ = forward(m, img)
    b1, b2, _ = forward(m, img)
    assert np.array_equal(a1, b1) and np.array_equal(a2, b2)
    assert np.allclose(a1.sum(axis=2), 1.0)


def test_zero_weights_give_uniform(rng):
    m = PixelModel(np.zeros((N_FEATURES, 4)), np.zeros(4), np.zeros((N_FEATURES, 4)), np.zeros(4))
    p1, p2, _ = forward(m, image(rng), train_mode=True, rng=rng)
    assert np.allclose(p1, 0.25) and np.allclose(p2, 0.25)


def test_no_dropout_heads_differ_only_by_weights(rng):
    m = PixelModel.init(3, rng, dropout=0.0)
    m.w2[:] = m.w1
    m.b2[:] = m.b1
    p1, p2, _ = forward(m, image(rng), train_mode=True, rng=rng)
    assert np.array_equal(p1, p2)


def test_train_mode_needs_rng(rng):
    with pytest.raises(ValueError):
        forward(PixelModel.init(2, rng), image(rng), train_mode=True)


def test_dropout_mask_is_inverted(rng):
    m = dropout_mask(rng, (20000,), 0.2)
    assert set(np.unique(m)) == {0.0, 1.25}
    assert abs(m.mean() - 1.0) < 0.03


def test_tensor_roundtrip(rng):
    m = PixelModel.init(3, rng)
    back = PixelModel.from_tensor(m.to_tensor())
    for a, b in zip(m.params(), back.params()):
        assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        PixelModel.from_tensor(np.zeros((2, 3, 3)))


def test_backward_matches_finite_differences(rng):
    m = PixelModel.init(3, rng, scale=0.5)
    img = image(rng)
    g1 = rng.normal(size=(8, 8, 3))
    g2 = rng.normal(size=(8, 8, 3))
    p1, p2, cache = forward(m, img)

    def f():
        q1, q2, _ = forward(m, img)
        return float(np.sum(q1 * g1) + np.sum(q2 * g2))

    grads = backward(cache, g1, g2)
    for p, g in zip(m.params(), grads):
        num = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + 1e-6
            fp = f()
            p[i] = old - 1e-6
            fm = f()
            p[i] = old
            num[i] = (fp - fm) / 2e-6
        assert np.linalg.norm(num - g) / np.linalg.norm(g) < 1e-6


def test_sgd_matches_heavy_ball_with_coupled_decay():
    p = np.array([1.0, -2.0])
    opt = SGD([p], lr=0.1, momentum=0.9, weight_decay=0.01)
    g1, g2 = np.array([0.5, 0.5]), np.array([-1.0, 2.0])
    ref = np.array([1.0, -2.0])
    d1 = g1 + 0.01 * ref
    buf = d1
    ref = ref - 0.1 * buf
    opt.step([g1])
    assert np.allclose(p, ref)
    d2 = g2 + 0.01 * ref
    buf = 0.9 * buf + d2
    ref = ref - 0.1 * buf
    opt.step([g2])
    assert np.allclose(p, ref)


def test_lr_zero_leaves_params(rng):
    p = rng.normal(size=3)
    before = p.copy()
    SGD([p], lr=0.0).step([rng.normal(size=3)])
    assert np.array_equal(p, before)


def test_softmax_stable():
    z = np.array([[1000.0, 0.0, -1000.0]])
    assert np.allclose(softmax(z), [[1.0, 0.0, 0.0]])
