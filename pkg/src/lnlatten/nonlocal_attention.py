"""Non-local attention: patch correlation matrix, global weights, and the
mixed global vector.

The bottleneck map feeds three independent 1x1-conv branches (Q, K, V),
each pooled to the n x n attention grid and reshaped so that row i holds
the channel vector of grid cell i.  Raw correlations Q* K* are row-wise
L1-normalized on absolute values (in place of softmax), giving a
nonnegative row-stochastic matrix; its column means are the per-region
global weights.
"""

from .errors import ConfigurationError
from .ops import adaptive_maxpool, conv2d, maxpool2d
from .tensor import (add, flatten, l1_normalize_rows, matmul, mean, relu,
                     reshape, scale, swap_last2)


def correlation(qstar, kstar):
    """Row-stochastic M x M correlation matrix from Q*, K* projections."""
    raw = matmul(qstar, kstar)
    return l1_normalize_rows(raw)


def weights_from_r(r):
    """Global weights: column means of the row-stochastic correlation matrix."""
    return mean(r, axis=-2)


def self_value(r, vstar):
    """Self-attention features: the correlation matrix applied to V*."""
    return matmul(r, vstar)


def mix(g, s, alpha):
    """Trade-off between the global vector and flattened self-attention:
    (1 - alpha) * g + alpha * flat(s)."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    batched = s.data.ndim == 3
    flat_s = reshape(s, (s.shape[0], -1) if batched else (-1,))
    if flat_s.shape != g.shape:
        raise ConfigurationError(
            f"flattened self-attention {flat_s.shape} does not match global vector {g.shape}")
    return add(scale(g, 1.0 - alpha), scale(flat_s, alpha))


class NonLocalAttention:
    def __init__(self, cfg, store, prefix="nonlocal", with_qkv=True):
        self.cfg = cfg
        self.store = store
        self.prefix = prefix
        self.with_qkv = with_qkv
        cb = cfg.bottleneck_channels
        n = cfg.grid_side
        if n > cfg.bottleneck_extent:
            raise ConfigurationError(
                f"attention grid {n} exceeds bottleneck extent {cfg.bottleneck_extent}")
        if with_qkv:
            for branch in ("q", "k", "v"):
                store.conv(f"{prefix}/{branch}", 1, 1, cb, cb)
        store.conv(f"{prefix}/g1", 3, 3, cb, cb)
        store.conv(f"{prefix}/g2", 3, 3, cb, cb)

    def _pool_to_grid(self, x):
        n = self.cfg.grid_side
        if n == self.cfg.bottleneck_extent // 2:
            return maxpool2d(x)
        # non-default grid (M sweep): floor-partitioned adaptive pooling
        return adaptive_maxpool(x, n)

    def _branch(self, name, f5):
        x = relu(add(conv2d(f5, self.store[f"{name}/w"], padding="same"),
                     self.store[f"{name}/b"]))
        pooled = self._pool_to_grid(x)
        m = self.cfg.m
        d = self.cfg.bottleneck_channels
        if pooled.data.ndim == 4:
            return reshape(pooled, (pooled.shape[0], m, d))
        return reshape(pooled, (m, d))

    def project_qkv(self, f5):
        """f5 -> (qstar M x D, kstar D x M, vstar M x D), batch-leading if batched."""
        p = self.prefix
        qstar = self._branch(f"{p}/q", f5)
        kstar = swap_last2(self._branch(f"{p}/k", f5))
        vstar = self._branch(f"{p}/v", f5)
        return qstar, kstar, vstar

    def encode_global(self, f5):
        """Two 3x3 same-padded convs and one 2x2/2 pool, flattened."""
        p = self.prefix
        x = relu(add(conv2d(f5, self.store[f"{p}/g1/w"], padding="same"),
                     self.store[f"{p}/g1/b"]))
        x = relu(add(conv2d(x, self.store[f"{p}/g2/w"], padding="same"),
                     self.store[f"{p}/g2/b"]))
        # same grid rule as the Q/K/V branches so flat(s) and g stay
        # length-compatible for every M (2x2/2 pool at the default grid)
        x = self._pool_to_grid(x)
        return flatten(x, keep_batch=x.data.ndim == 4)

    def forward(self, f5, alpha):
        """Returns dict with r, wg, s, g, g_star (g_star = g when qkv is off)."""
        g = self.encode_global(f5)
        if not self.with_qkv:
            return {"r": None, "wg": None, "s": None, "g": g, "g_star": g}
        qstar, kstar, vstar = self.project_qkv(f5)
        r = correlation(qstar, kstar)
        wg = weights_from_r(r)
        s = self_value(r, vstar)
        g_star = mix(g, s, alpha)
        return {"r": r, "wg": wg, "s": s, "g": g, "g_star": g_star}
