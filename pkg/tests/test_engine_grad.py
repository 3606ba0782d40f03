import numpy as np
import pytest

from darwinnet import engine as E


def _rand_batch(shape, seed):
    return np.random.default_rng(seed).normal(size=shape).astype(np.float32)


def test_dense_closed_form_gradient():
    m = E.build_model([E.dense(2)], (3,), seed=0)
    x = _rand_batch((4, 3), 1)
    acts = E.forward(m, x)
    g = _rand_batch((4, 2), 2)
    grads = E.backward(m, x, acts, g)
    np.testing.assert_allclose(grads[0]["W"], x.T @ g, rtol=1e-5)
    np.testing.assert_allclose(grads[0]["b"], g.sum(axis=0), rtol=1e-5)


def test_zero_output_grad_gives_zero_param_grads():
    specs = [E.conv2d(3, 3), E.relu(), E.dense(2)]
    m = E.build_model(specs, (1, 8, 8), seed=0)
    x = _rand_batch((2, 1, 8, 8), 0)
    acts = E.forward(m, x)
    grads = E.backward(m, x, acts, np.zeros((2, 2), dtype=np.float32))
    for g in grads:
        for arr in g.values():
            np.testing.assert_array_equal(arr, 0.0)


def test_grad_check_linear_model_is_tight():
    m = E.build_model([E.dense(3)], (4,), seed=2)
    batch = (_rand_batch((5, 4), 3),
             _rand_batch((5, 3), 4))
    err = E.grad_check(m, batch, E.loss_sse, epsilon=1e-4)
    assert err < 1e-6


def test_grad_check_conv_relu_dense():
    specs = [E.conv2d(3, 3), E.relu(), E.maxpool2d(2), E.dense(4)]
    m = E.build_model(specs, (1, 8, 8), seed=5)
    rng = np.random.default_rng(6)
    batch = (rng.normal(size=(2, 1, 8, 8)).astype(np.float32),
             rng.integers(0, 4, size=2))
    err = E.grad_check(m, batch, E.loss_softmax_ce, epsilon=1e-4)
    assert err < 1e-3


def test_grad_check_concat_path():
    specs = [E.conv2d(2, 3), E.relu(), E.maxpool2d(2), E.conv2d(2, 3),
             E.upsample2d(2), E.concat(1), E.conv2d(2, 1)]
    m = E.build_model(specs, (1, 4, 4), seed=7)
    rng = np.random.default_rng(8)
    batch = (rng.normal(size=(2, 1, 4, 4)).astype(np.float32),
             rng.integers(0, 2, size=(2, 4, 4)))
    err = E.grad_check(m, batch, E.loss_pixel_ce, epsilon=1e-4)
    assert err < 1e-3


def test_grad_check_softmax_layer():
    specs = [E.dense(3), E.softmax()]
    m = E.build_model(specs, (4,), seed=9)
    rng = np.random.default_rng(10)
    batch = (rng.normal(size=(3, 4)).astype(np.float32),
             rng.random(size=(3, 3)).astype(np.float32))
    err = E.grad_check(m, batch, E.loss_sse, epsilon=1e-4)
    assert err < 1e-3


def test_grad_check_refuses_large_models():
    m = E.build_model([E.dense(101)], (101,), seed=0)   # 101*101+101 > 10_000
    batch = (np.zeros((1, 101), dtype=np.float32),
             np.zeros((1, 101), dtype=np.float32))
    with pytest.raises(ValueError):
        E.grad_check(m, batch, E.loss_sse)


def test_grad_check_requires_positive_epsilon():
    m = E.build_model([E.dense(2)], (2,), seed=0)
    batch = (np.zeros((1, 2), dtype=np.float32),
             np.zeros((1, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        E.grad_check(m, batch, E.loss_sse, epsilon=0.0)
