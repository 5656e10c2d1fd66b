import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from originet import tensor as T
from originet.errors import DimensionError, NumericError, StateError

from conftest import conv_oracle


# ------------------------------------------------------------------ conv2d
def test_conv_sum_of_ones():
    out = T.conv2d_forward(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1), 1, 0)
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 9


def test_conv_stride2_output_size():
    out = T.conv2d_forward(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)), np.zeros(1), 2, 1)
    assert out.shape == (1, 1, 2, 2)


def test_conv_identity_centre_kernel_matches_oracle():
    x = np.arange(25, dtype=float).reshape(1, 1, 5, 5)
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1
    out = T.conv2d_forward(x, k, np.zeros(1), 1, 1)
    np.testing.assert_array_equal(out, conv_oracle(x, k, np.zeros(1), 1, (1, 1, 1, 1)))
    np.testing.assert_array_equal(out, x)


def test_conv_1x1_ones_is_identity(rng):
    x = rng.standard_normal((2, 1, 5, 7))
    np.testing.assert_array_equal(T.conv2d_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1)), x)


@pytest.mark.parametrize("stride", [1, 2, 3])
@pytest.mark.parametrize("pads", [(0, 0, 0, 0), (1, 1, 1, 1), (2, 2, 2, 2), (0, 1, 2, 1)])
@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv_matches_loop_oracle(rng, stride, pads, k):
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(T.conv2d_forward(x, w, b, stride, pads), conv_oracle(x, w, b, stride, pads), rtol=0, atol=1e-12)


def test_conv_shape_errors_name_axes():
    with pytest.raises(DimensionError, match="axis 1"):
        T.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(DimensionError):
        T.conv2d_forward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)), np.zeros(1))
    with pytest.raises(DimensionError):
        T.conv2d_backward(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)), np.zeros((1, 1, 3, 3)), 1, 1)


def test_conv_backward_zero_grad(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    g = T.conv2d_backward(x, w, np.zeros((1, 3, 5, 5)), 1, 1)
    assert not g.input.any() and not g["kernel"].any() and not g["bias"].any()


def test_conv_backward_single_pixel_chain():
    # one input pixel, one output pixel: d out / d x equals the kernel tap touching it
    x = np.zeros((1, 1, 3, 3))
    w = np.arange(9, dtype=float).reshape(1, 1, 3, 3)
    g = T.conv2d_backward(x, w, np.ones((1, 1, 1, 1)), 1, 0)
    np.testing.assert_array_equal(g.input[0, 0], w[0, 0])


def test_conv_bias_grad_is_sum(rng):
    x = rng.standard_normal((2, 2, 6, 6))
    w = rng.standard_normal((4, 2, 3, 3))
    r = rng.standard_normal((2, 4, 3, 3))
    g = T.conv2d_backward(x, w, r, 2, 1)
    np.testing.assert_allclose(g["bias"], r.sum(axis=(0, 2, 3)))


def test_conv_backward_fd_random_stride2(rng):
    x = rng.standard_normal((1, 2, 6, 6))
    w = rng.standard_normal((4, 2, 3, 3))
    b = rng.standard_normal(4)
    r = rng.standard_normal(T.conv2d_forward(x, w, b, 2, 1).shape)
    g = T.conv2d_backward(x, w, r, 2, 1)
    assert T.gradcheck(lambda v: float(np.sum(T.conv2d_forward(v, w, b, 2, 1) * r)), x, g.input) < 1e-6
    assert T.gradcheck(lambda v: float(np.sum(T.conv2d_forward(x, v, b, 2, 1) * r)), w, g["kernel"]) < 1e-6


def test_conv_backward_reused_cols_identical(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((5, 3, 5, 5))
    b = rng.standard_normal(5)
    y, cols = T.conv2d_forward_cols(x, w, b, 2, 2)
    r = rng.standard_normal(y.shape)
    a = T.conv2d_backward(x, w, r, 2, 2)
    c = T.conv2d_backward(x, w, r, 2, 2, cols=cols)
    np.testing.assert_array_equal(a["kernel"], c["kernel"])
    np.testing.assert_array_equal(a.input, c.input)


# --------------------------------------------------------------- batchnorm
def test_bn_constant_channel_zero(rng):
    x = np.full((2, 1, 3, 3), 4.2)
    y, _, _ = T.batchnorm_forward(x, np.ones(1), np.zeros(1))
    np.testing.assert_array_equal(y, 0.0)


def test_bn_gamma_zero_gives_beta(rng):
    x = rng.standard_normal((3, 2, 4, 4))
    beta = np.array([0.5, -2.0])
    y, _, _ = T.batchnorm_forward(x, np.zeros(2), beta)
    np.testing.assert_array_equal(y, np.broadcast_to(beta.reshape(1, 2, 1, 1), x.shape))


def test_bn_normalises(rng):
    x = rng.standard_normal((4, 3, 5, 5)) * 7 + 3
    y, _, _ = T.batchnorm_forward(x, np.ones(3), np.zeros(3))
    mu = y.mean(axis=(0, 2, 3))
    var = y.var(axis=(0, 2, 3))
    assert np.all(np.abs(mu) < 1e-9)
    # eps = 1e-5 shrinks the variance by var/(var+eps); the raw variance is ~49
    assert np.all(np.abs(var - 1) < 1e-6)


def test_bn_eval_requires_stats():
    with pytest.raises(StateError):
        T.batchnorm_forward(np.zeros((1, 1, 2, 2)), np.ones(1), np.zeros(1), "eval", None)


def test_bn_running_update_and_eval_deterministic(rng):
    x = rng.standard_normal((4, 2, 3, 3)) + 1
    _, stats, _ = T.batchnorm_forward(x, np.ones(2), np.zeros(2))
    np.testing.assert_allclose(stats.mean, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(stats.var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))
    a = T.batchnorm_forward(x, np.ones(2), np.zeros(2), "eval", stats)[0]
    b = T.batchnorm_forward(x, np.ones(2), np.zeros(2), "eval", stats)[0]
    np.testing.assert_array_equal(a, b)


def test_bn_backward_fd(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    gamma, beta = rng.standard_normal(3), rng.standard_normal(3)
    r = rng.standard_normal(x.shape)
    _, _, cache = T.batchnorm_forward(x, gamma, beta)
    g = T.batchnorm_backward(cache, r)
    f = lambda v: float(np.sum(T.batchnorm_forward(v, gamma, beta)[0] * r))  # noqa: E731
    assert T.gradcheck(f, x, g.input) < 1e-6


def test_bn_backward_zero_and_gamma_formula(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    _, _, cache = T.batchnorm_forward(x, np.ones(3), np.zeros(3))
    g0 = T.batchnorm_backward(cache, np.zeros_like(x))
    assert not g0.input.any() and not g0["gamma"].any() and not g0["beta"].any()
    r = rng.standard_normal(x.shape)
    g = T.batchnorm_backward(cache, r)
    xhat = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / np.sqrt(x.var(axis=(0, 2, 3), keepdims=True) + 1e-5)
    np.testing.assert_allclose(g["gamma"], (r * xhat).sum(axis=(0, 2, 3)), rtol=1e-12)


# ------------------------------------------------------------------ linear
def test_linear_examples():
    x = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(T.linear_forward(x, np.eye(3), np.zeros(3)), x)
    np.testing.assert_array_equal(T.linear_forward(np.ones((2, 3)), np.zeros((2, 3)), np.array([1.0, -1.0])), [[1, -1], [1, -1]])
    np.testing.assert_array_equal(T.linear_forward(x, np.ones((1, 3)), np.array([0.5])), [[6.5]])
    with pytest.raises(DimensionError):
        T.linear_forward(x, np.ones((1, 2)), np.zeros(1))


def test_linear_backward(rng):
    x = rng.standard_normal((1, 4))
    w = rng.standard_normal((3, 4))
    r = rng.standard_normal((1, 3))
    g = T.linear_backward(x, w, r)
    np.testing.assert_allclose(g["weight"], np.outer(r[0], x[0]))
    assert not T.linear_backward(x, w, np.zeros((1, 3))).input.any()
    b = np.zeros(3)
    assert T.gradcheck(lambda v: float(np.sum(T.linear_forward(v, w, b) * r)), x, g.input) < 1e-7


# ------------------------------------------------------- softmax and loss
def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(np.zeros((1, 4))), [[0.25] * 4])
    big = T.softmax(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(big)) and big[0, 0] == pytest.approx(1.0) and big[0, 1] < 1e-300
    np.testing.assert_allclose(T.softmax(np.log([[1.0, 2.0, 3.0]])), [[1 / 6, 2 / 6, 3 / 6]], rtol=1e-14)
    with pytest.raises(NumericError):
        T.softmax(np.array([[np.nan, 0.0]]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_rows_and_shift_invariance(row, shift):
    p = T.softmax(np.array([row]))
    assert abs(p.sum() - 1) < 1e-12
    assert np.all(p > 0) or len(row) > 1
    np.testing.assert_allclose(T.softmax(np.array([row]) + shift), p, rtol=0, atol=1e-12)


def test_cross_entropy_values():
    loss, _ = T.cross_entropy_loss(np.array([[0.0, 1.0, 0.0]]), [1])
    assert loss == 0.0
    loss, _ = T.cross_entropy_loss(np.full((2, 4), 0.25), [0, 3])
    assert loss == pytest.approx(math.log(4), abs=1e-15)
    with pytest.raises(IndexError):
        T.cross_entropy_loss(np.full((1, 4), 0.25), [4])


def test_cross_entropy_combined_grad_fd(rng):
    logits = rng.standard_normal((3, 5))
    labels = [0, 4, 2]
    _, g = T.cross_entropy_loss(T.softmax(logits), labels)
    assert T.gradcheck(lambda v: T.cross_entropy_loss(T.softmax(v), labels)[0], logits, g) < 1e-7


# --------------------------------------------------------------------- sgd
def test_sgd_examples():
    p = {"w": np.array([1.0, 2.0])}
    g = {"w": np.array([0.5, -1.0])}
    new, _ = T.sgd_step(p, g, lr=1.0, momentum=0.0)
    np.testing.assert_array_equal(new["w"], p["w"] - g["w"])
    same, _ = T.sgd_step(p, {"w": np.zeros(2)}, lr=0.3, momentum=0.9, velocity={"w": np.zeros(2)})
    np.testing.assert_array_equal(same["w"], p["w"])


def test_sgd_momentum_two_steps():
    lr = 0.1
    g1, g2 = np.array([1.0, -2.0]), np.array([0.5, 0.25])
    p0 = {"w": np.zeros(2)}
    p1, v = T.sgd_step(p0, {"w": g1}, lr, 0.9)
    p2, _ = T.sgd_step(p1, {"w": g2}, lr, 0.9, v)
    np.testing.assert_allclose(p1["w"] - p2["w"], lr * (0.9 * g1 + g2), rtol=1e-15)


def test_sgd_momentum_zero_is_plain_descent(rng):
    p = {"a": rng.standard_normal(5)}
    g = {"a": rng.standard_normal(5)}
    new, _ = T.sgd_step(p, g, 0.01, 0.0, {"a": rng.standard_normal(5)})
    np.testing.assert_array_equal(new["a"], p["a"] - 0.01 * g["a"])


# --------------------------------------------------------------- gradcheck
def test_gradcheck_examples():
    assert T.gradcheck(lambda v: float(3 * v.sum() + 1), np.ones(4), np.full(4, 3.0)) < 1e-10
    assert T.gradcheck(lambda v: float(v[0] ** 2), np.array([3.0]), np.array([6.0])) < 1e-9
    assert T.gradcheck(lambda v: float(v[0] ** 2), np.array([3.0]), np.array([12.0])) == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("seed", range(50))
def test_layer_gradcheck_seeds(seed):
    from originet.checks import LAYER_TOL, check_layers

    errs = check_layers(seed)
    assert max(errs.values()) < LAYER_TOL, errs
