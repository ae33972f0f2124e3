"""Spatial and classification ops on differentiable tensors.

All ops accept a single image (H, W, C) or a batch (N, H, W, C); the
single-image form is handled by a temporary batch axis.  Convolutions use
im2col with a matmul core; gradients are scattered back with Kh*Kw
slice-adds, which is exact for any stride.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .tensor import _make

__all__ = [
    "conv2d",
    "maxpool2d",
    "adaptive_maxpool",
    "upsample2x",
    "nll_loss",
]


def _batched(x):
    if x.data.ndim == 3:
        return x.data[None], True
    if x.data.ndim == 4:
        return x.data, False
    raise DimensionError(f"expected (H,W,C) or (N,H,W,C) input, got shape {x.shape}")


def _im2col(xp, kh, kw, stride):
    """(N,Hp,Wp,C) -> windows (N,H',W',kh,kw,C) honoring stride."""
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]          # (N,H',W',C,kh,kw)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def conv2d(x, kernels, stride=1, padding="same"):
    """2-D convolution (cross-correlation), kernels laid out (Kh,Kw,Cin,Cout)."""
    if padding not in ("same", "none"):
        raise DimensionError(f"conv2d: unknown padding {padding!r}")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    xd, squeeze = _batched(x)
    n, h, w, cin = xd.shape
    if kernels.data.ndim != 4:
        raise DimensionError(f"conv2d: kernels must be 4-D, got {kernels.shape}")
    kh, kw, kcin, cout = kernels.shape
    if kcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, kernels expect {kcin}")

    if padding == "same":
        pt, pl = (kh - 1) // 2, (kw - 1) // 2
        pb, pr = kh - 1 - pt, kw - 1 - pl
    else:
        pt = pb = pl = pr = 0
    hp, wp = h + pt + pb, w + pl + pr
    if kh > hp or kw > wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")

    if pt or pb or pl or pr:
        xp = np.pad(xd, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    else:
        xp = xd
    cols = _im2col(xp, kh, kw, stride)        # (N,H',W',kh,kw,Cin)
    n_, ho, wo = cols.shape[:3]
    colmat = cols.reshape(n_ * ho * wo, kh * kw * cin)
    kmat = kernels.data.reshape(kh * kw * cin, cout)
    out = (colmat @ kmat).reshape(n, ho, wo, cout)
    if squeeze:
        out = out[0]

    def bw(g):
        gb = g[None] if squeeze else g
        gmat = gb.reshape(n * ho * wo, cout)
        gk = (colmat.T @ gmat).reshape(kernels.shape) if kernels.requires_grad else None
        if not x.requires_grad:
            return (None, gk)
        gcols = (gmat @ kmat.T).reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, :, i, j]
        gx = gxp[:, pt:pt + h, pl:pl + w]
        if squeeze:
            gx = gx[0]
        return (gx, gk)

    return _make(out, (x, kernels), bw)


def maxpool2d(x, window=2, stride=2):
    """2x2/2 max pooling; odd trailing row/column is dropped.

    Gradient routes to the first (row-major) maximum of each window.
    """
    if window != 2 or stride != 2:
        raise DimensionError("maxpool2d supports window=2, stride=2 only")
    xd, squeeze = _batched(x)
    n, h, w, c = xd.shape
    if h < 2 or w < 2:
        raise DimensionError(f"maxpool2d: input {h}x{w} smaller than window")
    ho, wo = h // 2, w // 2
    blocks = xd[:, :2 * ho, :2 * wo].reshape(n, ho, 2, wo, 2, c)
    wins = blocks.transpose(0, 1, 3, 2, 4, 5).reshape(n, ho, wo, 4, c)
    idx = wins.argmax(axis=3)                  # first max on ties
    out = np.take_along_axis(wins, idx[:, :, :, None], axis=3)[:, :, :, 0]
    if squeeze:
        out = out[0]

    def bw(g):
        gb = g[None] if squeeze else g
        gwins = np.zeros((n, ho, wo, 4, c), dtype=xd.dtype)
        np.put_along_axis(gwins, idx[:, :, :, None], gb[:, :, :, None], axis=3)
        gx = np.zeros_like(xd)
        gx[:, :2 * ho, :2 * wo] = (
            gwins.reshape(n, ho, wo, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, 2 * ho, 2 * wo, c)
        )
        if squeeze:
            gx = gx[0]
        return (gx,)

    return _make(out, (x,), bw)


def adaptive_maxpool(x, n_out):
    """Max pool to an n_out x n_out grid with floor-partitioned cells.

    Matches maxpool2d when the input extent is exactly 2*n_out; used for
    attention grids whose side is not floor(extent/2).
    """
    xd, squeeze = _batched(x)
    n, h, w, c = xd.shape
    if n_out > h or n_out > w:
        raise DimensionError(f"adaptive_maxpool: grid {n_out} exceeds input {h}x{w}")
    rb = [int(np.floor(i * h / n_out)) for i in range(n_out + 1)]
    cb = [int(np.floor(j * w / n_out)) for j in range(n_out + 1)]
    out = np.empty((n, n_out, n_out, c), dtype=xd.dtype)
    argidx = []
    for i in range(n_out):
        row = []
        for j in range(n_out):
            cell = xd[:, rb[i]:rb[i + 1], cb[j]:cb[j + 1]].reshape(n, -1, c)
            k = cell.argmax(axis=1)
            out[:, i, j] = np.take_along_axis(cell, k[:, None], axis=1)[:, 0]
            row.append(k)
        argidx.append(row)
    res = out[0] if squeeze else out

    def bw(g):
        gb = g[None] if squeeze else g
        gx = np.zeros_like(xd)
        for i in range(n_out):
            hh = rb[i + 1] - rb[i]
            for j in range(n_out):
                ww = cb[j + 1] - cb[j]
                gcell = np.zeros((n, hh * ww, c), dtype=xd.dtype)
                np.put_along_axis(gcell, argidx[i][j][:, None], gb[:, i, j][:, None], axis=1)
                gx[:, rb[i]:rb[i + 1], cb[j]:cb[j + 1]] += gcell.reshape(n, hh, ww, c)
        if squeeze:
            gx = gx[0]
        return (gx,)

    return _make(res, (x,), bw)


def upsample2x(x):
    """Nearest-neighbor 2x spatial upsampling."""
    xd, squeeze = _batched(x)
    out = xd.repeat(2, axis=1).repeat(2, axis=2)
    if squeeze:
        out = out[0]
    n, h, w, c = xd.shape

    def bw(g):
        gb = g[None] if squeeze else g
        gx = gb.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))
        if squeeze:
            gx = gx[0]
        return (gx,)

    return _make(out, (x,), bw)


def nll_loss(probs, labels, clamp=1e-12):
    """Mean negative log-likelihood of the labeled class.

    Probabilities below `clamp` are clamped before the log (and contribute
    no gradient).  Returns (loss, number of clamped samples).
    """
    labels = np.asarray(labels)
    if probs.data.ndim != 2:
        raise DimensionError(f"nll_loss expects (N,C) probs, got {probs.shape}")
    n = probs.shape[0]
    if labels.shape != (n,):
        raise DimensionError(f"nll_loss: labels shape {labels.shape} does not match batch {n}")
    rows = np.arange(n)
    p = probs.data[rows, labels]
    clamped = p < clamp
    pc = np.maximum(p, clamp)
    loss = np.asarray(-np.log(pc).mean(), dtype=probs.dtype)

    def bw(g):
        gp = np.zeros_like(probs.data)
        gp[rows, labels] = np.where(clamped, 0.0, -float(g) / (n * pc))
        return (gp,)

    return _make(loss, (probs,), bw), int(clamped.sum())
