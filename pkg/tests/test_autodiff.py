"""Finite-difference property tests for every registered primitive plus the
tape mechanics (topological order, no_grad, shape errors)."""

import numpy as np
import pytest

from kpx import autodiff as ad
from kpx.autodiff import ShapeError, Value


def _fd_check(build_loss, params, tol=1e-6, eps=1e-5, n_samples=4, seed=0):
    err = ad.gradient_check(build_loss, params, eps=eps, n_samples=n_samples,
                            rng=np.random.default_rng(seed))
    assert err < tol, f"max relative FD error {err:.3e} >= {tol}"


def _param(shape, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return Value(scale * rng.normal(size=shape), requires_grad=True)


# -- trivial identities --------------------------------------------------------

def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(3, 3))
    out = ad.matmul(Value(np.eye(3)), Value(a))
    np.testing.assert_array_equal(out.data, a)


def test_softmax_symmetry():
    out = ad.softmax(Value(np.zeros((1, 3))), axis=1)
    np.testing.assert_allclose(out.data, np.full((1, 3), 1.0 / 3.0), rtol=0, atol=1e-15)


def test_relu_definition():
    out = ad.relu(Value(np.array([-1.0, 2.0])))
    np.testing.assert_array_equal(out.data, [0.0, 2.0])


def test_sum_of_squares_gradient():
    w = Value(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    loss = ad.vsum(w * w)
    ad.backward(loss)
    np.testing.assert_array_equal(w.grad, [2.0, 4.0, 6.0])


def test_sigmoid_gradient_at_zero():
    x = Value(np.zeros(()), requires_grad=True)
    ad.backward(ad.sigmoid(x))
    np.testing.assert_allclose(x.grad, 0.25, rtol=0, atol=1e-15)


# -- finite differences on each primitive --------------------------------------

ELEMENTWISE_UNARY = [
    ad.relu, ad.sigmoid, ad.tanh, ad.exp, ad.neg, ad.absolute,
    lambda x: ad.huber(x, delta=1.0),
    lambda x: ad.clip(x, -0.9, 0.9),
]


@pytest.mark.parametrize("op", ELEMENTWISE_UNARY)
def test_fd_elementwise_unary(op):
    x = _param((4, 5), seed=3)
    coeff = np.random.default_rng(9).normal(size=(4, 5))
    _fd_check(lambda: ad.vsum(op(x) * Value(coeff)), {"x": x})


@pytest.mark.parametrize("op", [ad.log, ad.sqrt])
def test_fd_positive_domain_unary(op):
    rng = np.random.default_rng(4)
    x = Value(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    coeff = rng.normal(size=(3, 4))
    _fd_check(lambda: ad.vsum(op(x) * Value(coeff)), {"x": x})


@pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul, ad.div])
def test_fd_elementwise_binary(op):
    a = _param((3, 4), seed=5)
    b = Value(np.random.default_rng(6).uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    coeff = np.random.default_rng(7).normal(size=(3, 4))
    _fd_check(lambda: ad.vsum(op(a, b) * Value(coeff)), {"a": a, "b": b})


@pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul, ad.div])
def test_fd_scalar_with_tensor(op):
    a = _param((2, 3), seed=8)
    s = Value(np.asarray(1.7), requires_grad=True)
    _fd_check(lambda: ad.vsum(op(a, s)), {"a": a, "s": s})


def test_fd_matmul():
    a = _param((3, 4), seed=10)
    b = _param((4, 2), seed=11)
    coeff = np.random.default_rng(12).normal(size=(3, 2))
    _fd_check(lambda: ad.vsum(ad.matmul(a, b) * Value(coeff)), {"a": a, "b": b})


def test_fd_matmul_batched():
    a = _param((5, 3, 4), seed=13)
    b = _param((4, 2), seed=14)
    _fd_check(lambda: ad.vsum(ad.matmul(a, b)), {"a": a, "b": b})


def test_fd_add_bias():
    x = _param((4, 3), seed=15)
    b = _param((3,), seed=16)
    coeff = np.random.default_rng(17).normal(size=(4, 3))
    _fd_check(lambda: ad.vsum(ad.add_bias(x, b) * Value(coeff)), {"x": x, "b": b})


def test_fd_repeat_rows():
    x = _param((1, 4), seed=18)
    coeff = np.random.default_rng(19).normal(size=(5, 4))
    _fd_check(lambda: ad.vsum(ad.repeat_rows(x, 5) * Value(coeff)), {"x": x})


def test_fd_concat():
    a = _param((2, 3), seed=20)
    b = _param((4, 3), seed=21)
    coeff = np.random.default_rng(22).normal(size=(6, 3))
    _fd_check(lambda: ad.vsum(ad.concat([a, b], axis=0) * Value(coeff)), {"a": a, "b": b})


def test_fd_getitem_reshape_transpose():
    x = _param((4, 6), seed=23)
    coeff = np.random.default_rng(24).normal(size=(3, 2, 2))

    def f():
        y = ad.transpose(ad.reshape(x[1:4, :4], (3, 2, 2)), (0, 2, 1))
        return ad.vsum(y * Value(coeff))

    _fd_check(f, {"x": x})


@pytest.mark.parametrize("axis", [None, 0, 1])
def test_fd_reductions(axis):
    x = _param((4, 5), seed=25)
    for red in (ad.vsum, ad.mean):
        _fd_check(lambda red=red: ad.vsum(ad.exp(red(x, axis=axis) * Value(0.1))), {"x": x})


@pytest.mark.parametrize("axis", [None, 0, 1])
def test_fd_vmax(axis):
    # distinct entries keep the max unique so the FD probe stays smooth
    x = Value(np.arange(20, dtype=np.float64).reshape(4, 5) * 0.37, requires_grad=True)
    _fd_check(lambda: ad.vsum(ad.vmax(x, axis=axis)), {"x": x})


@pytest.mark.parametrize("op", [ad.softmax, ad.log_softmax])
def test_fd_softmax(op):
    x = _param((2, 6), seed=26)
    coeff = np.random.default_rng(27).normal(size=(2, 6))
    _fd_check(lambda: ad.vsum(op(x, axis=1) * Value(coeff)), {"x": x})


def test_fd_quadratic_form_tight():
    # smooth closed-form case: central differences should be near machine level
    a = np.random.default_rng(28).normal(size=(5, 5))
    q = Value(a @ a.T + 5.0 * np.eye(5))
    x = _param((5, 1), seed=29)
    err = ad.gradient_check(
        lambda: ad.vsum(ad.matmul(ad.transpose(x, (1, 0)), ad.matmul(q, x))),
        {"x": x}, eps=1e-5, n_samples=5, rng=np.random.default_rng(1))
    assert err < 1e-7


def test_gradient_check_skips_exact_relu_kink():
    # an input sitting exactly on the relu kink must not poison the check
    x = Value(np.array([0.0, 1.0, -1.0]), requires_grad=True)
    err = ad.gradient_check(lambda: ad.vsum(ad.relu(x)), {"x": x},
                            n_samples=3, rng=np.random.default_rng(2))
    assert np.isfinite(err) and err < 1e-9


# -- tape mechanics -------------------------------------------------------------

def test_vmax_tie_gradient_shared_equally():
    x = Value(np.array([2.0, 2.0, 1.0]), requires_grad=True)
    ad.backward(ad.vmax(x))
    np.testing.assert_allclose(x.grad, [0.5, 0.5, 0.0], rtol=0, atol=1e-15)


def test_diamond_graph_accumulates_both_paths():
    x = Value(np.asarray(3.0), requires_grad=True)
    y = x * x      # dy/dx = 6
    loss = y + x   # dloss/dx = 7
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, 7.0, rtol=0, atol=1e-15)


def test_reused_node_gradient_accumulates():
    x = Value(np.asarray(2.0), requires_grad=True)
    loss = x * x * x  # d(x^3) = 3x^2 = 12
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, 12.0, rtol=0, atol=1e-15)


def test_no_grad_blocks_tape():
    x = Value(np.ones((2, 2)), requires_grad=True)
    with ad.no_grad():
        y = ad.vsum(x * x)
    assert y._parents == () and y._backward is None


def test_backward_requires_scalar():
    x = Value(np.ones((2,)), requires_grad=True)
    with pytest.raises(ShapeError):
        ad.backward(x * x)


@pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul, ad.div])
def test_elementwise_shape_mismatch_raises(op):
    with pytest.raises(ShapeError):
        op(Value(np.ones((2, 3))), Value(np.ones((3, 2))))


def test_matmul_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        ad.matmul(Value(np.ones((2, 3))), Value(np.ones((2, 3))))


def test_add_bias_requires_1d_bias():
    with pytest.raises(ShapeError):
        ad.add_bias(Value(np.ones((2, 3))), Value(np.ones((2, 3))))


def test_gradient_check_rejects_bad_eps():
    x = Value(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.gradient_check(lambda: ad.vsum(x), {"x": x}, eps=0.5)


def test_grad_array_zero_when_unreached():
    x = Value(np.ones((2, 2)), requires_grad=True)
    np.testing.assert_array_equal(x.grad_array(), np.zeros((2, 2)))
