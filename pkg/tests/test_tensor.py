"""Engine-level tests: forward fixtures plus finite-difference gradient checks."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svdc import tensor as T
from conftest import gradcheck


def leaf(arr):
    return T.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


# -- forward fixtures -------------------------------------------------------------


def test_add_mul_forward():
    a = T.Tensor([1.0, 2.0, 3.0])
    b = T.Tensor([4.0, 5.0, 6.0])
    assert np.allclose(T.add(a, b).data, [5, 7, 9])
    assert np.allclose(T.mul(a, b).data, [4, 10, 18])
    assert np.allclose(T.sub(a, b).data, [-3, -3, -3])


def test_channel_broadcast_shapes():
    f = T.Tensor(np.ones((3, 4, 5)))
    cw = T.Tensor(2.0 * np.ones((3, 1, 1)))
    sw = T.Tensor(3.0 * np.ones((1, 4, 5)))
    assert T.mul(f, cw).shape == (3, 4, 5)
    assert np.allclose(T.mul(f, cw).data, 2.0)
    assert np.allclose(T.mul(f, sw).data, 3.0)


def test_incompatible_broadcast_rejected():
    a = T.Tensor(np.ones((3, 4, 5)))
    b = T.Tensor(np.ones((4, 5)))
    with pytest.raises(T.ShapeError):
        T.add(a, b)
    with pytest.raises(T.ShapeError):
        T.mul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((3, 2))))


def test_sigmoid_saturation_is_finite():
    x = T.Tensor([-1e4, -50.0, 0.0, 50.0, 1e4])
    y = T.sigmoid(x)
    assert np.all(np.isfinite(y.data))
    assert y.data[0] == 0.0 or y.data[0] < 1e-300
    assert y.data[2] == 0.5
    assert y.data[-1] == 1.0


def test_softmax_log_fixture():
    # softmax of (ln 1, ln 2, ln 3) is (1/6, 2/6, 3/6)
    x = T.Tensor(np.log(np.array([1.0, 2.0, 3.0])).reshape(3, 1, 1))
    y = T.softmax_channel(x)
    assert np.allclose(y.data.ravel(), [1 / 6, 2 / 6, 3 / 6], atol=1e-12)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3, 4))
    a = T.softmax_channel(T.Tensor(x)).data
    b = T.softmax_channel(T.Tensor(x + 123.456)).data
    assert np.allclose(a, b, atol=1e-12)
    assert np.allclose(a.sum(axis=0), 1.0, atol=1e-12)


def test_pooling_fixtures():
    x = T.Tensor(np.arange(12, dtype=np.float64).reshape(1, 3, 4))
    assert T.pool_spatial(x, "avg").data.ravel()[0] == pytest.approx(5.5)
    assert T.pool_spatial(x, "max").data.ravel()[0] == 11.0
    y = T.Tensor(np.stack([np.full((2, 2), 1.0), np.full((2, 2), 3.0)]))
    assert np.allclose(T.pool_channel(y, "avg").data, 2.0)
    assert np.allclose(T.pool_channel(y, "max").data, 3.0)


def test_identity_conv():
    rng = np.random.default_rng(3)
    x = T.Tensor(rng.normal(size=(2, 5, 7)))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 1.0
    y = T.conv2d(x, T.Tensor(w), padding=1)
    assert y.shape == x.shape
    assert np.allclose(y.data, x.data, atol=1e-12)


def test_conv_box_filter():
    x = T.Tensor(np.ones((1, 4, 4)))
    w = T.Tensor(np.ones((1, 1, 3, 3)))
    y = T.conv2d(x, w)
    assert y.shape == (1, 2, 2)
    assert np.allclose(y.data, 9.0)


def test_conv_stride_and_bias():
    x = T.Tensor(np.arange(16, dtype=np.float64).reshape(1, 4, 4))
    w = np.zeros((1, 1, 1, 1))
    w[0, 0, 0, 0] = 1.0
    y = T.conv2d(x, T.Tensor(w), b=T.Tensor([10.0]), stride=2)
    assert y.shape == (1, 2, 2)
    assert np.allclose(y.data[0], [[10, 12], [18, 20]])


def test_conv_shape_errors():
    x = T.Tensor(np.ones((2, 4, 4)))
    with pytest.raises(T.ShapeError):
        T.conv2d(x, T.Tensor(np.ones((1, 3, 3, 3))))  # channel mismatch
    with pytest.raises(T.ShapeError):
        T.conv2d(x, T.Tensor(np.ones((1, 2, 2, 2))))  # even kernel


def test_depth_space_roundtrip():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(8, 3, 4))
    back = T.space_to_depth(T.depth_to_space(T.Tensor(x), 2), 2)
    assert np.allclose(back.data, x, atol=0)


def test_grid_sample_integer_and_half():
    src = T.Tensor(np.arange(12, dtype=np.float64).reshape(1, 3, 4))
    u = np.array([[1.0, 2.0]])
    v = np.array([[1.0, 2.0]])
    y = T.grid_sample(src, u, v)
    assert np.allclose(y.data[0], [5.0, 10.0])
    # half-pixel sample averages the four neighbours
    y2 = T.grid_sample(src, np.array([[0.5]]), np.array([[0.5]]))
    assert y2.data.ravel()[0] == pytest.approx((0 + 1 + 4 + 5) / 4.0)


def test_grid_sample_border_clamp():
    src = T.Tensor(np.arange(4, dtype=np.float64).reshape(1, 2, 2))
    y = T.grid_sample(src, np.array([[-5.0, 10.0]]), np.array([[-5.0, 10.0]]))
    assert np.allclose(y.data[0], [0.0, 3.0])


def test_upsample_constant_stays_constant():
    x = T.Tensor(np.full((2, 3, 3), 7.25))
    y = T.upsample_bilinear(x, 4)
    assert y.shape == (2, 12, 12)
    assert np.allclose(y.data, 7.25, atol=1e-12)


def test_backward_requires_scalar():
    x = leaf(np.ones(3))
    y = T.mul(x, x)
    with pytest.raises(T.ShapeError):
        T.backward(y)


def test_diamond_fanout_gradient():
    # y = x*x + x*x accumulates both paths: dy/dx = 4x
    x = leaf([3.0])
    y = T.tsum(T.add(T.mul(x, x), T.mul(x, x)))
    T.backward(y)
    assert x.grad[0] == pytest.approx(12.0)


def test_grad_accumulates_across_backwards():
    x = leaf([2.0])
    for _ in range(2):
        T.backward(T.tsum(T.mul(x, x)))
    assert x.grad[0] == pytest.approx(8.0)
    x.zero_grad()
    assert x.grad is None


def test_forward_determinism():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))

    def run():
        xt, wt = leaf(x.copy()), leaf(w.copy())
        loss = T.tmean(T.sigmoid(T.conv2d(xt, wt, padding=1)))
        T.backward(loss)
        return loss.item(), xt.grad.copy(), wt.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert l1 == l2
    assert np.array_equal(gx1, gx2)
    assert np.array_equal(gw1, gw2)


# -- finite-difference gradient checks ---------------------------------------------


def _rand(rng, shape):
    return leaf(rng.normal(size=shape))


def test_grad_elementwise(rng):
    a = _rand(rng, (3, 4, 5))
    b = _rand(rng, (3, 4, 5))
    cw = _rand(rng, (3, 1, 1))
    gradcheck(lambda: T.tsum(T.mul(T.add(a, b), T.sub(a, b))), [a, b])
    gradcheck(lambda: T.tsum(T.mul(a, cw)), [a, cw])
    gradcheck(lambda: T.tmean(T.scale(a, -2.5)), [a])


def test_grad_nonlinear(rng):
    a = _rand(rng, (2, 3, 3))
    gradcheck(lambda: T.tsum(T.sigmoid(a)), [a])
    gradcheck(lambda: T.tsum(T.tanh(a)), [a])
    gradcheck(lambda: T.tsum(T.exp(T.scale(a, 0.3))), [a])
    pos = leaf(np.abs(rng.normal(size=(2, 3, 3))) + 0.5)
    gradcheck(lambda: T.tsum(T.log(pos)), [pos])
    gradcheck(lambda: T.tsum(T.sqrt_floored(pos)), [pos])


def test_grad_relu_abs_clamp(rng):
    # keep entries away from the kinks so central differences are valid
    vals = rng.normal(size=(3, 4)) * 2.0
    vals[np.abs(vals) < 0.2] = 0.7
    a = leaf(vals)
    gradcheck(lambda: T.tsum(T.relu(a)), [a])
    gradcheck(lambda: T.tsum(T.absolute(a)), [a])
    gradcheck(lambda: T.tsum(T.clamp_min(a, 0.0)), [a])


def test_grad_reductions_pooling(rng):
    a = _rand(rng, (3, 4, 5))
    gradcheck(lambda: T.tsum(T.mul(T.sum_channel(a), T.sum_channel(a))), [a])
    gradcheck(lambda: T.tsum(T.mul(a, T.pool_spatial(a, "avg"))), [a])
    gradcheck(lambda: T.tsum(T.mul(a, T.pool_channel(a, "avg"))), [a])
    # distinct entries keep the argmax stable under perturbation
    b = leaf(rng.permutation(60).reshape(3, 4, 5) * 0.917)
    gradcheck(lambda: T.tsum(T.mul(b, T.pool_spatial(b, "max"))), [b])
    gradcheck(lambda: T.tsum(T.mul(b, T.pool_channel(b, "max"))), [b])


def test_grad_softmax(rng):
    a = _rand(rng, (4, 2, 3))
    w = T.Tensor(rng.normal(size=(4, 2, 3)))
    gradcheck(lambda: T.tsum(T.mul(T.softmax_channel(a), w)), [a])


def test_grad_structural(rng):
    a = _rand(rng, (2, 3, 4))
    b = _rand(rng, (3, 3, 4))
    gradcheck(lambda: T.tsum(T.mul(T.concat([a, b], axis=0), T.concat([a, b], axis=0))), [a, b])
    gradcheck(lambda: T.tsum(T.mul(T.narrow(b, 0, 1, 2), T.narrow(b, 0, 0, 2))), [b])
    gradcheck(lambda: T.tsum(T.mul(T.reshape(a, (4, 6)), T.reshape(a, (4, 6)))), [a])
    gradcheck(lambda: T.tsum(T.exp(T.scale(T.transpose(a, (2, 0, 1)), 0.2))), [a])


def test_grad_matmul(rng):
    a = _rand(rng, (3, 4))
    b = _rand(rng, (4, 2))
    gradcheck(lambda: T.tsum(T.sigmoid(T.matmul(a, b))), [a, b])


def test_grad_shuffles(rng):
    a = _rand(rng, (8, 2, 3))
    w = T.Tensor(rng.normal(size=(2, 4, 6)))
    gradcheck(lambda: T.tsum(T.mul(T.depth_to_space(a, 2), w)), [a])
    c = _rand(rng, (2, 4, 6))
    w2 = T.Tensor(rng.normal(size=(8, 2, 3)))
    gradcheck(lambda: T.tsum(T.mul(T.space_to_depth(c, 2), w2)), [c])


@pytest.mark.parametrize("stride,padding,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 0, 1)])
def test_grad_conv2d(rng, stride, padding, k):
    x = _rand(rng, (2, 6, 7))
    w = _rand(rng, (3, 2, k, k))
    b = _rand(rng, (3,))
    gradcheck(lambda: T.tmean(T.tanh(T.conv2d(x, w, b, stride=stride, padding=padding))), [x, w, b])


def test_grad_grid_sample_source(rng):
    src = _rand(rng, (2, 5, 6))
    u = rng.uniform(0.3, 4.7, size=(3, 4))
    v = rng.uniform(0.3, 3.7, size=(3, 4))
    gradcheck(lambda: T.tsum(T.sigmoid(T.grid_sample(src, u, v))), [src])


def test_grad_grid_sample_coords(rng):
    src = T.Tensor(rng.normal(size=(2, 5, 6)))
    # keep coordinates off integer lattice points, where bilinear kinks live
    u = leaf(rng.uniform(0.3, 4.6, size=(3, 4)) + 0.013)
    v = leaf(rng.uniform(0.3, 3.6, size=(3, 4)) + 0.017)
    gradcheck(lambda: T.tsum(T.sigmoid(T.grid_sample(src, u, v))), [u, v])


def test_grad_grid_sample_clamped_coords_zero():
    src = T.Tensor(np.arange(6, dtype=np.float64).reshape(1, 2, 3))
    u = leaf(np.array([[-3.0, 5.0]]))
    v = leaf(np.array([[-3.0, 5.0]]))
    T.backward(T.tsum(T.grid_sample(src, u, v)))
    assert np.allclose(u.grad, 0.0)
    assert np.allclose(v.grad, 0.0)


def test_grad_upsample(rng):
    a = _rand(rng, (2, 3, 4))
    gradcheck(lambda: T.tmean(T.sigmoid(T.upsample_bilinear(a, 2))), [a])


def test_grad_sqrt_floored_at_zero():
    a = leaf(np.array([0.0, -1.0, 4.0]))
    T.backward(T.tsum(T.sqrt_floored(a)))
    assert a.grad[0] == 0.0
    assert a.grad[1] == 0.0
    assert a.grad[2] == pytest.approx(0.25)


def test_deep_graph_does_not_recurse():
    x = leaf([1.0])
    y = x
    for _ in range(5000):
        y = T.add(y, T.scale(x, 1e-4))
    T.backward(T.tsum(y))
    assert x.grad[0] == pytest.approx(1.0 + 5000 * 1e-4)


# -- property-based invariants ------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_softmax_is_distribution(seed):
    x = np.random.default_rng(seed).normal(scale=5.0, size=(6, 3, 3))
    y = T.softmax_channel(T.Tensor(x)).data
    assert np.all(y >= 0)
    assert np.allclose(y.sum(axis=0), 1.0, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_conv_linearity(seed):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.normal(size=(2, 2, 5, 5))
    w = T.Tensor(rng.normal(size=(3, 2, 3, 3)))
    lhs = T.conv2d(T.Tensor(x1 + 2.0 * x2), w, padding=1).data
    rhs = T.conv2d(T.Tensor(x1), w, padding=1).data + 2.0 * T.conv2d(T.Tensor(x2), w, padding=1).data
    assert np.allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_grid_sample_identity_grid(seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(3, 4, 6))
    vv, uu = np.meshgrid(np.arange(4.0), np.arange(6.0), indexing="ij")
    out = T.grid_sample(T.Tensor(src), uu, vv).data
    assert np.allclose(out, src, atol=1e-12)
