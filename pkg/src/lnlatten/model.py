"""The complete network: backbone, non-local attention, local ensemble, and
fusion head, with the ablation variants wired by construction."""

import numpy as np

from .backbone import UNet
from .config import ModelConfig
from .head import Head
from .local_ensemble import LocalEnsemble, combine, plan_patches
from .nonlocal_attention import NonLocalAttention
from .params import ParamStore
from .tensor import Tensor


class LNLAttenNet:
    """Joint local/non-local attention classifier.

    Variants:
      full           — non-local weights and local gates both active
      model_s        — uniform weights, gates fixed to 1 (attention removed)
      model_local    — local gates only, uniform non-local weights
      model_nonlocal — non-local weights only, gates fixed to 1
    """

    def __init__(self, cfg: ModelConfig, dtype=np.float64, overlap_pixels=None):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(cfg.seed)
        self.store = ParamStore(rng, dtype=dtype)
        if overlap_pixels is not None:
            self.layout = plan_patches(cfg.image_extent, cfg.m, overlap_pixels=overlap_pixels)
        else:
            self.layout = plan_patches(cfg.image_extent, cfg.m, overlap_ratio=cfg.overlap_ratio)

        self.with_qkv = cfg.variant in ("full", "model_nonlocal")
        self.with_gates = cfg.variant in ("full", "model_local")

        self.unet = UNet(cfg, self.store)
        self.nonlocal_net = NonLocalAttention(cfg, self.store, with_qkv=self.with_qkv)
        self.local_net = LocalEnsemble(cfg, self.store, self.layout,
                                       with_gates=self.with_gates)

        self.global_dim = cfg.grid_side ** 2 * cfg.bottleneck_channels
        self.local_dim = self.local_net.pooled_extent ** 2 * self.local_net.channels[-1]
        self.fused_dim = self.global_dim + self.local_dim
        if cfg.profile == "paper" and cfg.m == 16 and self.layout.patch_size == 48:
            # the published dimensions for the default configuration
            assert self.global_dim == 8192 and self.local_dim == 9216
            assert self.fused_dim == 17408
        self.head = Head(cfg, self.store, self.fused_dim)

    def _as_input(self, images):
        if isinstance(images, Tensor):
            return images
        return Tensor(np.asarray(images, dtype=self.dtype))

    def forward(self, images):
        """images: (H,W,Cin) or (N,H,W,Cin) -> dict of tensors.

        Keys: probs, wg, gates, f_en, g_star, g, r, s, f5, f9, features.
        wg/gates are constant uniform/ones tensors in the ablated variants.
        """
        x = self._as_input(images)
        batched = x.data.ndim == 4
        f5, f9 = self.unet.forward(x)
        nl = self.nonlocal_net.forward(f5, self.cfg.alpha)

        source = x if self.cfg.backbone_bypass else f9
        features, gates = self.local_net.forward(source)

        m = self.cfg.m
        if self.with_qkv:
            wg = nl["wg"]
        else:
            shape = (features.shape[0], m) if batched else (m,)
            wg = Tensor(np.full(shape, 1.0 / m, dtype=self.dtype))
        f_en = combine(features, gates, wg)
        probs = self.head.fuse_and_classify(nl["g_star"], f_en)

        gates_flat = gates
        return {
            "probs": probs,
            "wg": wg,
            "gates": gates_flat,
            "f_en": f_en,
            "g_star": nl["g_star"],
            "g": nl["g"],
            "r": nl["r"],
            "s": nl["s"],
            "f5": f5,
            "f9": f9,
            "features": features,
        }

    def predict(self, images):
        out = self.forward(images)
        return out["probs"].data.argmax(axis=-1)
