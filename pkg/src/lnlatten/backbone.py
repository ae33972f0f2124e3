"""Encoder-decoder backbone producing the bottleneck and full-resolution maps.

Each stage is a double 3x3 same-padded conv block with ReLU.  The encoder
pools 2x between stages; the decoder upsamples 2x (nearest) followed by a
3x3 conv, concatenates the matching encoder map, and applies another double
conv.  The two exported maps are the second bottleneck conv (minimum
resolution, maximum receptive field) and the second conv of the last
decoder stage (input resolution).
"""

from .errors import ConfigurationError
from .ops import conv2d, maxpool2d, upsample2x
from .tensor import concat, relu, add, Tensor
import numpy as np


def _conv_relu(store, name, x, padding="same"):
    w = store[f"{name}/w"]
    b = store[f"{name}/b"]
    return relu(add(conv2d(x, w, stride=1, padding=padding), b))


class UNet:
    def __init__(self, cfg, store, prefix="unet"):
        self.cfg = cfg
        self.store = store
        self.prefix = prefix
        enc = cfg.encoder_channels
        cb = cfg.bottleneck_channels
        cin = cfg.input_channels
        prev = cin
        for i, c in enumerate(enc, start=1):
            store.conv(f"{prefix}/enc{i}/conv1", 3, 3, prev, c)
            store.conv(f"{prefix}/enc{i}/conv2", 3, 3, c, c)
            prev = c
        store.conv(f"{prefix}/mid/conv1", 3, 3, prev, cb)
        store.conv(f"{prefix}/mid/conv2", 3, 3, cb, cb)
        prev = cb
        for i, c in enumerate(reversed(enc), start=1):
            store.conv(f"{prefix}/dec{i}/up", 3, 3, prev, c)
            store.conv(f"{prefix}/dec{i}/conv1", 3, 3, 2 * c, c)
            store.conv(f"{prefix}/dec{i}/conv2", 3, 3, c, c)
            prev = c

    def forward(self, image, use_skips=True):
        """image: (H,W,Cin) or (N,H,W,Cin) -> (f5, f9)."""
        cfg = self.cfg
        shp = image.shape
        spatial = shp[-3:-1]
        if spatial != (cfg.image_extent, cfg.image_extent):
            raise ConfigurationError(
                f"backbone expects {cfg.image_extent}x{cfg.image_extent} input, got {spatial}")
        if shp[-1] != cfg.input_channels:
            raise ConfigurationError(
                f"backbone expects {cfg.input_channels} input channels, got {shp[-1]}")

        p = self.prefix
        x = image
        skips = []
        for i in range(1, cfg.stage_count + 1):
            x = _conv_relu(self.store, f"{p}/enc{i}/conv1", x)
            x = _conv_relu(self.store, f"{p}/enc{i}/conv2", x)
            skips.append(x)
            x = maxpool2d(x)
        x = _conv_relu(self.store, f"{p}/mid/conv1", x)
        f5 = _conv_relu(self.store, f"{p}/mid/conv2", x)

        x = f5
        for i in range(1, cfg.stage_count + 1):
            skip = skips[-i]
            x = upsample2x(x)
            x = _conv_relu(self.store, f"{p}/dec{i}/up", x)
            if not use_skips:
                skip = Tensor(np.zeros_like(skip.data))
            x = concat((skip, x), axis=-1)
            x = _conv_relu(self.store, f"{p}/dec{i}/conv1", x)
            x = _conv_relu(self.store, f"{p}/dec{i}/conv2", x)
        f9 = x

        be = cfg.bottleneck_extent
        assert f5.shape[-3:] == (be, be, cfg.bottleneck_channels), f5.shape
        assert f9.shape[-3:] == (cfg.image_extent, cfg.image_extent, cfg.f9_channels), f9.shape
        return f5, f9
