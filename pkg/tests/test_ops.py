"""Structured ops (conv / pool / upsample / loss) against brute-force oracles."""

import numpy as np
import pytest

from lnlatten import ops
from lnlatten import tensor as T
from lnlatten.errors import DimensionError
from lnlatten.gradcheck import finite_diff_check
from lnlatten.tensor import Tensor, backward

TOL = 1e-4


def conv2d_naive(x, k, stride=1, padding="same"):
    """Sliding-window convolution with explicit loops (the oracle)."""
    kh, kw, cin, cout = k.shape
    if padding == "same":
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        x = np.pad(x, ((ph, kh - 1 - ph), (pw, kw - 1 - pw), (0, 0)))
    h, w, _ = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.zeros((oh, ow, cout))
    for i in range(oh):
        for j in range(ow):
            win = x[i * stride:i * stride + kh, j * stride:j * stride + kw]
            for co in range(cout):
                out[i, j, co] = np.sum(win * k[..., co])
    return out


def maxpool_naive(x, window=2, stride=2):
    h, w, c = x.shape
    oh, ow = h // stride, w // stride
    out = np.zeros((oh, ow, c))
    for i in range(oh):
        for j in range(ow):
            out[i, j] = x[i * stride:i * stride + window,
                          j * stride:j * stride + window].max(axis=(0, 1))
    return out


def spaced_values(rng, shape):
    """Random values with pairwise gaps, so max-pool argmaxes are FD-stable."""
    n = int(np.prod(shape))
    vals = (np.arange(n) * 0.1 + 0.05)
    return rng.permutation(vals).reshape(shape)


def test_conv2d_matches_naive():
    rng = np.random.default_rng(0)
    for _ in range(20):
        h = int(rng.integers(4, 9))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        kh = int(rng.choice([1, 3]))
        x = rng.standard_normal((h, h, cin))
        k = rng.standard_normal((kh, kh, cin, cout))
        for padding in ("same", "none"):
            got = ops.conv2d(Tensor(x), Tensor(k), padding=padding).data
            want = conv2d_naive(x, k, padding=padding)
            assert got.shape == want.shape
            assert np.allclose(got, want, atol=1e-10)


def test_conv2d_batched_matches_per_image():
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.standard_normal((3, 6, 6, 2))
        k = rng.standard_normal((3, 3, 2, 4))
        got = ops.conv2d(Tensor(x), Tensor(k)).data
        for n in range(3):
            assert np.allclose(got[n], conv2d_naive(x[n], k), atol=1e-10)


def test_conv2d_grads():
    rng = np.random.default_rng(2)
    for _ in range(20):
        k = Tensor(rng.standard_normal((3, 3, 2, 2)))
        x = rng.standard_normal((5, 5, 2))
        for padding in ("same", "none"):
            assert finite_diff_check(
                lambda t, p=padding: T.summation(ops.conv2d(t, k, padding=p)), x) < TOL
        xt = Tensor(rng.standard_normal((5, 5, 2)))
        assert finite_diff_check(
            lambda t: T.summation(ops.conv2d(xt, t)), np.array(k.data)) < TOL


def test_conv2d_no_kernel_grad_when_frozen():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((4, 4, 2)), requires_grad=True)
    k = Tensor(rng.standard_normal((3, 3, 2, 1)))          # frozen kernel
    backward(T.summation(ops.conv2d(x, k)))
    assert k.grad is None
    assert x.grad is not None and x.grad.shape == (4, 4, 2)


def test_maxpool_matches_naive():
    rng = np.random.default_rng(4)
    for _ in range(20):
        h = int(rng.integers(4, 10))
        x = rng.standard_normal((h, h, 3))
        got = ops.maxpool2d(Tensor(x)).data
        want = maxpool_naive(x)
        assert got.shape == want.shape
        assert np.allclose(got, want)


def test_maxpool_grad_and_tie_breaking():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = spaced_values(rng, (6, 6, 2))
        assert finite_diff_check(lambda t: T.summation(ops.maxpool2d(t)), x) < TOL
    # all-equal window: exactly one input (the row-major first) gets the grad
    x = Tensor(np.ones((2, 2, 1)), requires_grad=True)
    backward(T.summation(ops.maxpool2d(x)))
    assert x.grad.sum() == 1.0
    assert x.grad[0, 0, 0] == 1.0


def test_adaptive_maxpool_matches_cell_partition():
    rng = np.random.default_rng(6)
    for _ in range(20):
        h = int(rng.integers(5, 12))
        n = int(rng.integers(2, min(h, 5)))
        x = rng.standard_normal((h, h, 2))
        got = ops.adaptive_maxpool(Tensor(x), n).data
        bounds = [h * i // n for i in range(n + 1)]
        for i in range(n):
            for j in range(n):
                cell = x[bounds[i]:bounds[i + 1], bounds[j]:bounds[j + 1]]
                assert np.allclose(got[i, j], cell.max(axis=(0, 1)))


def test_adaptive_maxpool_equals_maxpool_on_halving():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((8, 8, 3))
    a = ops.adaptive_maxpool(Tensor(x), 4).data
    b = ops.maxpool2d(Tensor(x)).data
    assert np.array_equal(a, b)


def test_adaptive_maxpool_grad():
    rng = np.random.default_rng(8)
    for _ in range(10):
        x = spaced_values(rng, (7, 7, 2))
        assert finite_diff_check(
            lambda t: T.summation(ops.adaptive_maxpool(t, 3)), x) < TOL


def test_upsample2x_forward_and_grad():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((3, 3, 2))
    up = ops.upsample2x(Tensor(x)).data
    assert up.shape == (6, 6, 2)
    for i in range(6):
        for j in range(6):
            assert np.array_equal(up[i, j], x[i // 2, j // 2])
    for _ in range(10):
        x = rng.standard_normal((3, 3, 2))
        assert finite_diff_check(lambda t: T.summation(ops.upsample2x(t)), x) < TOL


def test_nll_loss_value_and_grad():
    rng = np.random.default_rng(10)
    for _ in range(20):
        n, c = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        logits = rng.standard_normal((n, c))
        labels = rng.integers(0, c, size=n)
        probs = T.softmax(Tensor(logits))
        loss, clamped = ops.nll_loss(probs, labels)
        want = -np.mean([np.log(probs.data[i, labels[i]]) for i in range(n)])
        assert clamped == 0
        assert np.allclose(loss.data, want, atol=1e-12)
        assert finite_diff_check(
            lambda t, lab=labels: ops.nll_loss(T.softmax(t), lab)[0], logits) < TOL


def test_nll_loss_clamps_zero_probability():
    probs = Tensor(np.array([[1.0, 0.0], [0.5, 0.5]]), requires_grad=True)
    loss, clamped = ops.nll_loss(probs, np.array([1, 0]))
    assert clamped == 1
    assert np.isfinite(loss.data)
    backward(loss)
    assert probs.grad[0, 1] == 0.0            # clamped sample contributes no grad
    assert probs.grad[1, 0] != 0.0


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(DimensionError):
        ops.conv2d(Tensor(np.zeros((4, 4, 3))), Tensor(np.zeros((3, 3, 2, 1))))
