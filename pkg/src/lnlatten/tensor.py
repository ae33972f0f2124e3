"""Reverse-mode differentiable tensors backed by numpy.

Every operation appends a node to the implicit computation record (the
chain of ``_parents`` / ``_backward`` links).  ``backward`` walks that
record once in reverse topological order, so gradients of shared
subexpressions accumulate additively.
"""

import numpy as np

from .errors import ContractError, DimensionError, NumericalError

DEFAULT_DTYPE = np.float64

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # convenience arithmetic
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=self.dtype))
        return add(self, scale(other, -1.0))

    def backward(self):
        backward(self)


def _check_finite(arr):
    if not np.isfinite(arr).all():
        raise NumericalError("forward operation produced a non-finite value")


def _make(data, parents, backward_fn):
    """Wrap an op result, recording the node when gradients are enabled."""
    _check_finite(data)
    rg = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = rg
    out.grad = None   # allocated lazily on first backward
    if rg:
        out._parents = parents
        out._backward_fn = backward_fn
    else:
        out._parents = ()
        out._backward_fn = None
    return out


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss):
    """Populate grads of every requires_grad tensor reachable from `loss`.

    Repeated calls accumulate into existing grad buffers.
    """
    if loss.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # reverse topological order, iterative to keep deep graphs safe
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    flow = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._backward_fn is None:
            continue
        grads = node._backward_fn(g)
        for p, pg in zip(node._parents, grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in flow:
                flow[id(p)] = flow[id(p)] + pg
            else:
                flow[id(p)] = pg


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}") from e

    def bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _make(data, (a, b), bw)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}") from e

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bw)


def scale(a, c):
    c = float(c)

    def bw(g):
        return (g * c,)

    return _make(a.data * c, (a,), bw)


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul expects tensors with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dims disagree {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(data, (a, b), bw)


def reshape(a, shape):
    data = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), bw)


def flatten(a, keep_batch=False):
    """Collapse to 1-D, or to (batch, -1) with keep_batch."""
    if keep_batch:
        return reshape(a, (a.shape[0], -1))
    return reshape(a, (-1,))


def concat(tensors, axis=0):
    tensors = tuple(tensors)
    ref = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != ref:
            raise DimensionError("concat: mixed ranks")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from e
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tensors, bw)


def crop(a, index):
    """Differentiable slice; gradient scatters back additively."""
    data = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return _make(data.copy(), (a,), bw)


def summation(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data, dtype=a.dtype)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(a_ % a.data.ndim for a_ in axes):
                gg = np.expand_dims(gg, ax)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(data, (a,), bw)


def mean(a, axis=None, keepdims=False):
    n = a.size if axis is None else a.shape[axis]
    return scale(summation(a, axis=axis, keepdims=keepdims), 1.0 / n)


def relu(a):
    data = np.maximum(a.data, 0)

    def bw(g):
        return (g * (a.data > 0),)

    return _make(data, (a,), bw)


def sigmoid(a):
    data = np.empty_like(a.data)
    pos = a.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    data[~pos] = ex / (1.0 + ex)

    def bw(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), bw)


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    data = ex / ex.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), bw)


def transpose(a, axes=None):
    data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return _make(data.copy(), (a,), bw)


def swap_last2(a):
    """Transpose the two trailing axes (batch-safe)."""
    data = np.swapaxes(a.data, -1, -2)

    def bw(g):
        return (np.swapaxes(g, -1, -2),)

    return _make(data.copy(), (a,), bw)


def absolute(a):
    data = np.abs(a.data)
    sign = np.sign(a.data)

    def bw(g):
        return (g * sign,)

    return _make(data, (a,), bw)


def l1_normalize_rows(raw):
    """Row-stochastic matrix from possibly signed raw correlations.

    r[i][j] = |raw[i][j]| / sum_j |raw[i][j]|; an all-zero raw row falls back
    to the uniform row 1/M (and receives zero gradient).
    """
    m = raw.shape[-1]
    a = np.abs(raw.data)
    s = a.sum(axis=-1, keepdims=True)
    deg = s == 0.0
    safe = np.where(deg, 1.0, s)
    r = np.where(deg, 1.0 / m, a / safe)
    sign = np.sign(raw.data)

    def bw(g):
        dot = (g * r).sum(axis=-1, keepdims=True)
        graw = sign * (g - dot) / safe
        return (np.where(deg, 0.0, graw),)

    return _make(r, (raw,), bw)


def sum_squares(a):
    """Scalar sum of squared entries (L2 building block)."""
    data = np.asarray((a.data * a.data).sum(), dtype=a.dtype)

    def bw(g):
        return (2.0 * g * a.data,)

    return _make(data, (a,), bw)
