import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from beamsr.errors import DataError, NumericalDivergence
from beamsr.netmath import (
    ConvParams,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
    weight_materialize,
)

from oracles import conv_loop, numeric_grad, rel_error


def random_conv(rng, c_in, c_out, k):
    return ConvParams(rng.normal(size=(c_out, c_in, k, k)), rng.uniform(0.5, 2, c_out),
                      rng.normal(size=c_out))


def test_identity_kernel():
    x = np.random.default_rng(0).random((2, 1, 5, 6))
    p = ConvParams(np.ones((1, 1, 1, 1)), np.ones(1), np.zeros(1))
    np.testing.assert_array_equal(conv2d_forward(x, p), x)


def test_all_ones_kernel_on_constant():
    v = np.ones((1, 1, 3, 3))
    p = ConvParams(v, np.array([3.0]), np.zeros(1))  # g = ||v|| so W is all ones
    out = conv2d_forward(np.full((1, 1, 6, 6), 0.7), p)
    np.testing.assert_allclose(out[0, 0, 1:-1, 1:-1], 9 * 0.7, rtol=0, atol=1e-12)
    assert out[0, 0, 0, 0] == pytest.approx(4 * 0.7)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_forward_matches_loop_oracle(k):
    rng = np.random.default_rng(k)
    for _ in range(3):
        x = rng.normal(size=(2, 3, 6, 7))
        p = random_conv(rng, 3, 2, k)
        ref = conv_loop(x, weight_materialize(p), p.b)
        np.testing.assert_allclose(conv2d_forward(x, p), ref, rtol=0, atol=1e-10)


def test_weight_materialize():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(3, 2, 3, 3))
    unit = v / np.sqrt((v**2).sum(axis=(1, 2, 3)))[:, None, None, None]
    np.testing.assert_allclose(weight_materialize(ConvParams(unit, np.ones(3), np.zeros(3))), unit,
                               atol=1e-15)
    w = weight_materialize(ConvParams(v, np.full(3, 2.0), np.zeros(3)))
    np.testing.assert_allclose(np.sqrt((w**2).sum(axis=(1, 2, 3))), 2.0, atol=1e-12)
    w10 = weight_materialize(ConvParams(10 * v, np.full(3, 2.0), np.zeros(3)))
    np.testing.assert_allclose(w10, w, atol=1e-14)
    v[1] = 0
    with pytest.raises(DataError, match="zero-norm"):
        weight_materialize(ConvParams(v, np.ones(3), np.zeros(3)))


def test_shape_and_value_guards():
    rng = np.random.default_rng(2)
    p = random_conv(rng, 2, 3, 3)
    with pytest.raises(DataError, match="channel"):
        conv2d_forward(np.zeros((1, 1, 4, 4)), p)
    x = np.zeros((1, 2, 4, 4))
    x[0, 0, 1, 1] = np.nan
    with pytest.raises(NumericalDivergence):
        conv2d_forward(x, p)
    with pytest.raises(DataError):
        ConvParams(np.ones((1, 1, 2, 2)), np.ones(1), np.zeros(1))
    with pytest.raises(DataError):
        conv2d_backward(np.zeros((1, 2, 4, 4)), p, np.zeros((1, 2, 4, 4)))


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(3)
    p = random_conv(rng, 2, 3, 3)
    x = rng.normal(size=(1, 2, 5, 5))
    grads, dx = conv2d_backward(x, p, np.zeros((1, 3, 5, 5)))
    for g in (*grads.arrays(), dx):
        assert not np.any(g)


def test_bias_gradient_is_channel_sum():
    rng = np.random.default_rng(4)
    p = random_conv(rng, 1, 2, 3)
    x = rng.normal(size=(2, 1, 5, 5))
    up = rng.normal(size=(2, 2, 5, 5))
    grads, _ = conv2d_backward(x, p, up)
    np.testing.assert_allclose(grads.b, up.sum(axis=(0, 2, 3)), atol=1e-12)


def conv_grad_errors(seed, k=3, c_in=1, c_out=1, shape=(8, 8)):
    rng = np.random.default_rng(seed)
    p = random_conv(rng, c_in, c_out, k)
    x = rng.normal(size=(1, c_in) + shape)
    up = rng.normal(size=(1, c_out) + shape)

    def loss():
        return float(np.sum(conv2d_forward(x, p) * up))

    grads, dx = conv2d_backward(x, p, up)
    return [rel_error(numeric_grad(loss, arr), ana)
            for arr, ana in ((p.v, grads.v), (p.g, grads.g), (p.b, grads.b), (x, dx))]


@pytest.mark.parametrize("seed", range(20))
def test_conv_gradients_finite_differences(seed):
    assert max(conv_grad_errors(seed)) < 1e-3


@pytest.mark.parametrize("k, c_in, c_out", [(3, 2, 3), (5, 2, 2)])
def test_conv_gradients_multichannel(k, c_in, c_out):
    assert max(conv_grad_errors(100 + k, k, c_in, c_out, (6, 7))) < 1e-3


def test_direction_gradient_orthogonal_to_direction():
    rng = np.random.default_rng(5)
    p = random_conv(rng, 2, 3, 3)
    p.v /= np.sqrt((p.v**2).sum(axis=(1, 2, 3)))[:, None, None, None]
    grads, _ = conv2d_backward(rng.normal(size=(2, 2, 6, 6)), p, rng.normal(size=(2, 3, 6, 6)))
    inner = np.sum(grads.v * p.v, axis=(1, 2, 3))
    assert np.abs(inner).max() < 1e-8


def test_relu():
    x = -np.random.default_rng(6).random((1, 2, 3, 3)) - 0.1
    assert not np.any(relu_forward(x))
    pos = -x
    np.testing.assert_array_equal(relu_forward(pos), pos)
    up = np.random.default_rng(7).normal(size=pos.shape)
    np.testing.assert_array_equal(relu_backward(pos, up), up)


@pytest.mark.parametrize("seed", range(20))
def test_relu_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 2, 5, 5))
    x[np.abs(x) < 0.01] = 0.5  # keep clear of the kink
    up = rng.normal(size=x.shape)
    num = numeric_grad(lambda: float(np.sum(relu_forward(x) * up)), x)
    assert rel_error(num, relu_backward(x, up)) < 1e-3


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.integers(1, 2))
def test_translation_equivariance_interior(seed, shift):
    rng = np.random.default_rng(seed)
    p = random_conv(rng, 1, 2, 3)
    x = rng.normal(size=(1, 1, 10, 10))
    y = conv2d_forward(x, p)
    ys = conv2d_forward(np.roll(x, shift, axis=2), p)
    np.testing.assert_allclose(ys[:, :, shift + 1 : -1], y[:, :, 1 : -1 - shift], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linearity_without_bias(seed, a, b):
    rng = np.random.default_rng(seed)
    p = random_conv(rng, 2, 2, 3)
    p.b[:] = 0
    x1, x2 = rng.normal(size=(2, 1, 2, 6, 6))
    lhs = conv2d_forward(a * x1 + b * x2, p)
    rhs = a * conv2d_forward(x1, p) + b * conv2d_forward(x2, p)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_forward_deterministic():
    rng = np.random.default_rng(8)
    p = random_conv(rng, 2, 4, 3)
    x = rng.normal(size=(3, 2, 9, 9))
    assert np.array_equal(conv2d_forward(x, p), conv2d_forward(x.copy(), p.copy()))
