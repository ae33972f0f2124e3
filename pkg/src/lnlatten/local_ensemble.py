"""Patch planning, cropping, per-patch branch networks, and the weighted
combination of local features.

The full-resolution map is cropped into an n x n grid of overlapping
patches (exact integral layout, no partial patches).  Each patch runs
through its own branch: a six-conv/three-pool feature stack and a small
sigmoid gate whose scalar output downweights uninformative patches.  The
M feature vectors are combined as sum_i wg_i * gate_i * f_i.
"""

import math
from dataclasses import dataclass

from .errors import ConfigurationError, DimensionError
from .ops import conv2d, maxpool2d
from .tensor import (add, concat, matmul, mul, relu, reshape, sigmoid,
                     summation)

# Initial pre-activation of every patch gate (sigmoid input).  Zero starts
# the gates half-open so the weighted patch sum carries signal from the
# first step and the gate subnets receive gradient.
GATE_BIAS_INIT = 0.0


@dataclass(frozen=True)
class PatchLayout:
    m: int
    n: int
    patch_size: int
    stride: int
    overlap: int
    image_extent: int

    @property
    def positions(self):
        return [i * self.stride for i in range(self.n)]

    def cells(self):
        """(row, col) offsets of every patch in row-major order."""
        pos = self.positions
        return [(r, c) for r in pos for c in pos]


def _feasible_ratios(extent, n, limit=8):
    """Overlap ratios that yield exact integral layouts, for diagnostics."""
    out = []
    for ov in range(0, extent):
        num = extent + (n - 1) * ov
        if num % n:
            continue
        p = num // n
        if p > extent or p - ov < 1:
            continue
        out.append(round(ov / p, 4))
        if len(out) >= limit:
            break
    return out


def plan_patches(image_extent, m, overlap_ratio=None, overlap_pixels=None):
    """Solve n*P - (n-1)*overlap = image_extent for an exact patch grid.

    Either an overlap ratio (P is rounded to the nearest integer, then the
    stride must come out integral) or an explicit overlap pixel count may
    be given.
    """
    n = math.isqrt(m)
    if n * n != m or m < 1:
        raise ConfigurationError(f"patch count m must be a perfect square, got {m}")
    if n == 1:
        return PatchLayout(m=1, n=1, patch_size=image_extent, stride=0,
                           overlap=0, image_extent=image_extent)

    if overlap_pixels is not None:
        ov = int(overlap_pixels)
        num = image_extent + (n - 1) * ov
        if num % n:
            raise ConfigurationError(
                f"overlap {ov}px is infeasible for extent {image_extent}, n={n}: "
                f"patch size {num}/{n} is not integral")
        p = num // n
        stride = p - ov
    else:
        if overlap_ratio is None:
            raise ConfigurationError("plan_patches needs overlap_ratio or overlap_pixels")
        denom = n - (n - 1) * overlap_ratio
        p = int(round(image_extent / denom))
        rem = image_extent - p
        if rem % (n - 1):
            raise ConfigurationError(
                f"overlap ratio {overlap_ratio} gives patch {p} with non-integral stride "
                f"for extent {image_extent}; nearest feasible ratios: "
                f"{_feasible_ratios(image_extent, n)}")
        stride = rem // (n - 1)
        ov = p - stride
    if stride < 1 or p < 1 or p > image_extent or ov < 0:
        raise ConfigurationError(
            f"degenerate layout: patch {p}, stride {stride}, overlap {ov} "
            f"for extent {image_extent}; nearest feasible ratios: "
            f"{_feasible_ratios(image_extent, n)}")
    assert n * p - (n - 1) * ov == image_extent
    return PatchLayout(m=m, n=n, patch_size=p, stride=stride, overlap=ov,
                       image_extent=image_extent)


def crop_patches(f9, layout):
    """Crop the M patches (row-major); gradients scatter back additively."""
    from .tensor import crop
    spatial = f9.shape[-3:-1]
    if spatial != (layout.image_extent, layout.image_extent):
        raise DimensionError(
            f"feature map extent {spatial} does not match layout {layout.image_extent}")
    p = layout.patch_size
    out = []
    for r, c in layout.cells():
        out.append(crop(f9, (Ellipsis, slice(r, r + p), slice(c, c + p), slice(None))))
    return out


def combine(features, gates, wg):
    """Ensemble feature: sum_i wg_i * gate_i * f_i.

    features: (M, D) or (N, M, D); gates: (M, 1) or (N, M, 1);
    wg: (M,) or (N, M).
    """
    batched = features.data.ndim == 3
    if batched:
        w = reshape(wg, (wg.shape[0], wg.shape[1], 1))
    else:
        w = reshape(wg, (wg.shape[0], 1))
    weighted = mul(mul(features, gates), w)
    return summation(weighted, axis=-2)


def _conv_relu(store, name, x, padding="same"):
    return relu(add(conv2d(x, store[f"{name}/w"], padding=padding), store[f"{name}/b"]))


class LocalEnsemble:
    """The M independent patch branches (no parameter sharing)."""

    def __init__(self, cfg, store, layout, prefix="local", with_gates=True):
        self.cfg = cfg
        self.store = store
        self.layout = layout
        self.prefix = prefix
        self.with_gates = with_gates
        base = cfg.f9_channels
        self.channels = (base, base, 2 * base, 2 * base, 4 * base, 4 * base)
        in_ch = cfg.input_channels if cfg.backbone_bypass else cfg.f9_channels
        self.pooled_extent = layout.patch_size // 8
        if self.pooled_extent < 1:
            raise ConfigurationError(
                f"patch size {layout.patch_size} too small for three pooling stages")
        self.paper_gate = self.pooled_extent >= 5
        for i in range(layout.m):
            prev = in_ch
            for j, c in enumerate(self.channels, start=1):
                store.conv(f"{prefix}/branch{i}/conv{j}", 3, 3, prev, c)
                prev = c
            if with_gates:
                self._build_gate(i, prev)

    def _build_gate(self, i, c):
        name = f"{self.prefix}/gate{i}"
        e = self.pooled_extent
        if self.paper_gate:
            # two no-pad 3x3 convs interleaved with 1x1 channel reductions
            self.store.conv(f"{name}/conv1", 3, 3, c, c)
            self.store.conv(f"{name}/conv2", 1, 1, c, c // 2)
            self.store.conv(f"{name}/conv3", 3, 3, c // 2, c // 2)
            self.store.conv(f"{name}/conv4", 1, 1, c // 2, c // 4)
            flat = (e - 4) * (e - 4) * (c // 4)
        else:
            # reduced chain for tiny pooled maps that cannot take no-pad 3x3s
            self.store.conv(f"{name}/conv1", 1, 1, c, c // 2)
            self.store.conv(f"{name}/conv2", 1, 1, c // 2, c // 4)
            flat = e * e * (c // 4)
        hidden = max(flat // 4, 4)
        self.store.fc(f"{name}/fc1", flat, hidden)
        _, out_bias = self.store.fc(f"{name}/fc2", hidden, 1)
        out_bias.data[:] = GATE_BIAS_INIT
        self.gate_flat = flat

    def simple_net_forward(self, patch, i):
        """Three (conv, conv, pool) blocks; extent halves per block."""
        name = f"{self.prefix}/branch{i}"
        x = patch
        for block in range(3):
            x = _conv_relu(self.store, f"{name}/conv{2 * block + 1}", x)
            x = _conv_relu(self.store, f"{name}/conv{2 * block + 2}", x)
            x = maxpool2d(x)
        e = self.pooled_extent
        assert x.shape[-3:] == (e, e, self.channels[-1]), x.shape
        return x

    def local_gate(self, pooled, i):
        """Scalar gate in (0,1) from the branch's pooled feature map."""
        name = f"{self.prefix}/gate{i}"
        x = pooled
        if self.paper_gate:
            x = _conv_relu(self.store, f"{name}/conv1", x, padding="none")
            x = _conv_relu(self.store, f"{name}/conv2", x)
            x = _conv_relu(self.store, f"{name}/conv3", x, padding="none")
            x = _conv_relu(self.store, f"{name}/conv4", x)
        else:
            x = _conv_relu(self.store, f"{name}/conv1", x)
            x = _conv_relu(self.store, f"{name}/conv2", x)
        batched = x.data.ndim == 4
        flat = reshape(x, (x.shape[0], -1) if batched else (1, -1))
        h = relu(add(matmul(flat, self.store[f"{name}/fc1/w"]), self.store[f"{name}/fc1/b"]))
        z = add(matmul(h, self.store[f"{name}/fc2/w"]), self.store[f"{name}/fc2/b"])
        return sigmoid(z)   # (N,1) or (1,1)

    def forward(self, source):
        """Crop `source` into patches and run every branch.

        Returns (features (N,M,D) or (M,D), gates (N,M,1) or (M,1)).
        Gates are constant 1 when the gate subnetwork is disabled.
        """
        patches = crop_patches(source, self.layout)
        batched = source.data.ndim == 4
        feats, gates = [], []
        for i, patch in enumerate(patches):
            pooled = self.simple_net_forward(patch, i)
            f = reshape(pooled, (pooled.shape[0], 1, -1) if batched else (1, -1))
            feats.append(f)
            if self.with_gates:
                gate = self.local_gate(pooled, i)     # (N,1) / (1,1)
                gates.append(reshape(gate, (gate.shape[0], 1, 1) if batched else (1, 1)))
        features = concat(feats, axis=-2)
        if self.with_gates:
            gate_t = concat(gates, axis=-2)
        else:
            from .tensor import Tensor
            import numpy as np
            shape = (features.shape[0], self.layout.m, 1) if batched else (self.layout.m, 1)
            gate_t = Tensor(np.ones(shape, dtype=source.dtype))
        return features, gate_t
