"""Gradient and semantics checks for the autodiff core primitives."""

import numpy as np
import pytest

from lnlatten import tensor as T
from lnlatten.errors import ContractError, DimensionError, NumericalError
from lnlatten.gradcheck import finite_diff_check
from lnlatten.tensor import Tensor, backward, no_grad

TOL = 1e-4


def rand(rng, *shape, margin=0.0):
    """Random array; `margin` pushes values away from 0 (kink safety)."""
    x = rng.standard_normal(shape)
    if margin:
        x = x + np.sign(x) * margin
    return x


def test_add_mul_scale_grads():
    rng = np.random.default_rng(0)
    for _ in range(20):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        other = Tensor(rand(rng, *shape))
        c = float(rng.standard_normal())
        assert finite_diff_check(lambda x: T.summation(T.add(x, other)), rand(rng, *shape)) < TOL
        assert finite_diff_check(lambda x: T.summation(T.mul(x, other)), rand(rng, *shape)) < TOL
        assert finite_diff_check(lambda x: T.summation(T.scale(x, c)), rand(rng, *shape)) < TOL


def test_broadcast_add_mul_grads():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rand(rng, 3, 4)
        row = Tensor(rand(rng, 1, 4))
        col = Tensor(rand(rng, 3, 1))
        assert finite_diff_check(lambda x: T.summation(T.add(x, row)), a) < TOL
        assert finite_diff_check(lambda x: T.summation(T.mul(x, col)), a) < TOL
        # and the gradient of the broadcast side collapses back to its shape
        xb = Tensor(rand(rng, 1, 4), requires_grad=True)
        backward(T.summation(T.mul(Tensor(a), xb)))
        assert xb.grad.shape == (1, 4)
        assert np.allclose(xb.grad, a.sum(axis=0, keepdims=True))


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n, k, m = rng.integers(1, 6, size=3)
        a, b = rand(rng, n, k), rand(rng, k, m)
        want = np.zeros((n, m))
        for i in range(n):
            for j in range(m):
                for p in range(k):
                    want[i, j] += a[i, p] * b[p, j]
        got = T.matmul(Tensor(a), Tensor(b)).data
        assert np.allclose(got, want, atol=1e-12)


def test_matmul_grads_and_batching():
    rng = np.random.default_rng(3)
    for _ in range(20):
        b = Tensor(rand(rng, 4, 3))
        assert finite_diff_check(lambda x: T.summation(T.matmul(x, b)), rand(rng, 2, 4)) < TOL
        a = Tensor(rand(rng, 2, 4))
        assert finite_diff_check(lambda x: T.summation(T.matmul(a, x)), rand(rng, 4, 3)) < TOL
        batched = Tensor(rand(rng, 5, 2, 4))
        assert finite_diff_check(lambda x: T.summation(T.matmul(batched, x)), rand(rng, 4, 3)) < TOL


def test_matmul_rejects_inner_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_shape_ops_grads():
    rng = np.random.default_rng(4)
    for _ in range(20):
        x = rand(rng, 2, 3, 4)
        w = Tensor(rand(rng, 24))
        wk = Tensor(rand(rng, 2, 12))
        wt = Tensor(rand(rng, 4, 2, 3))
        ws = Tensor(rand(rng, 2, 4, 3))
        assert finite_diff_check(
            lambda t: T.summation(T.mul(T.reshape(t, (24,)), w)), x) < TOL
        assert finite_diff_check(
            lambda t: T.summation(T.mul(T.flatten(t, keep_batch=True), wk)), x) < TOL
        assert finite_diff_check(
            lambda t: T.summation(T.mul(T.transpose(t, (2, 0, 1)), wt)), x) < TOL
        assert finite_diff_check(
            lambda t: T.summation(T.mul(T.swap_last2(t), ws)), x) < TOL


def test_concat_and_crop_grads():
    rng = np.random.default_rng(5)
    for _ in range(20):
        other = Tensor(rand(rng, 3, 2))
        w = Tensor(rand(rng, 3, 6))
        assert finite_diff_check(
            lambda x: T.summation(T.mul(T.concat([x, other], axis=-1), w)), rand(rng, 3, 4)) < TOL
        idx = (slice(1, 4), slice(0, 3))
        assert finite_diff_check(
            lambda x: T.summation(T.crop(x, idx)), rand(rng, 5, 5)) < TOL


def test_crop_backward_scatters_zeros_elsewhere():
    x = Tensor(np.arange(25, dtype=np.float64).reshape(5, 5), requires_grad=True)
    backward(T.summation(T.crop(x, (slice(1, 3), slice(2, 4)))))
    want = np.zeros((5, 5))
    want[1:3, 2:4] = 1.0
    assert np.array_equal(x.grad, want)


def test_reductions_grads():
    rng = np.random.default_rng(6)
    for _ in range(20):
        x = rand(rng, 3, 4)
        w = Tensor(rand(rng, 4))
        assert finite_diff_check(lambda t: T.summation(t), x) < TOL
        assert finite_diff_check(
            lambda t: T.summation(T.mul(T.summation(t, axis=0), w)), x) < TOL
        assert finite_diff_check(
            lambda t: T.summation(T.mul(T.mean(t, axis=0), w)), x) < TOL
        assert finite_diff_check(lambda t: T.sum_squares(t), x) < TOL


def test_elementwise_nonlinearities_grads():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rand(rng, 3, 4, margin=0.2)      # away from the relu/abs kink
        w = Tensor(rand(rng, 3, 4))
        assert finite_diff_check(lambda t: T.summation(T.mul(T.relu(t), w)), x) < TOL
        assert finite_diff_check(lambda t: T.summation(T.mul(T.sigmoid(t), w)), x) < TOL
        assert finite_diff_check(lambda t: T.summation(T.mul(T.absolute(t), w)), x) < TOL
        assert finite_diff_check(lambda t: T.summation(T.mul(T.softmax(t), w)), x) < TOL


def test_softmax_rows_sum_to_one_and_shift_invariance():
    rng = np.random.default_rng(8)
    for _ in range(20):
        x = rand(rng, 4, 6) * 3
        p = T.softmax(Tensor(x)).data
        assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12)
        shifted = T.softmax(Tensor(x + 100.0)).data
        assert np.allclose(p, shifted, atol=1e-9)


def test_l1_normalize_rows_matches_manual():
    rng = np.random.default_rng(9)
    for _ in range(20):
        x = rand(rng, 4, 5, margin=0.3)
        r = T.l1_normalize_rows(Tensor(x)).data
        want = np.abs(x) / np.abs(x).sum(axis=-1, keepdims=True)
        assert np.allclose(r, want, atol=1e-12)
        assert np.allclose(r.sum(axis=-1), 1.0, atol=1e-12)


def test_l1_normalize_rows_grad():
    rng = np.random.default_rng(10)
    for _ in range(20):
        x = rand(rng, 4, 5, margin=0.3)
        w = Tensor(rand(rng, 4, 5))
        assert finite_diff_check(
            lambda t: T.summation(T.mul(T.l1_normalize_rows(t), w)), x) < TOL


def test_l1_normalize_degenerate_row_is_uniform():
    x = Tensor(np.array([[0.0, 0.0, 0.0], [3.0, -1.0, 0.0]]), requires_grad=True)
    r = T.l1_normalize_rows(x)
    assert np.allclose(r.data[0], 1.0 / 3.0)
    backward(T.summation(T.mul(r, Tensor(np.ones((2, 3))))))
    assert np.array_equal(x.grad[0], np.zeros(3))


def test_shared_subexpression_accumulates_grad():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a = rand(rng, 3, 3)
        x1 = Tensor(a, requires_grad=True)
        y = T.mul(x1, x1)
        backward(T.summation(T.add(y, y)))           # reused node
        x2 = Tensor(a, requires_grad=True)
        unrolled = T.add(T.mul(x2, x2), T.mul(x2, x2))
        backward(T.summation(unrolled))
        assert np.allclose(x1.grad, x2.grad, atol=1e-12)
        assert np.allclose(x1.grad, 4 * a, atol=1e-12)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        backward(T.relu(x))


def test_nonfinite_forward_raises():
    big = Tensor(np.array([1e308]))
    with np.errstate(over="ignore"), pytest.raises(NumericalError):
        T.mul(big, big)


def test_no_grad_suppresses_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = T.relu(x)
    assert y._parents == ()
    backward(T.summation(y))         # graph was never recorded past y
    assert np.array_equal(x.grad, np.zeros(3))


def test_python_operator_sugar():
    a = Tensor(np.array([1.0, -2.0]))
    b = Tensor(np.array([3.0, 5.0]))
    assert np.allclose((a + b).data, [4.0, 3.0])
    assert np.allclose((a - b).data, [-2.0, -7.0])
    assert np.allclose((a * b).data, [3.0, -10.0])
    assert np.allclose((-a).data, [-1.0, 2.0])
