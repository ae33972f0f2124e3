"""Fusion of the global and ensemble vectors, the classifier stack, and the
training loss (mean cross entropy plus a balanced L2 term over weights)."""

from .errors import ConfigurationError
from .ops import nll_loss
from .tensor import add, concat, matmul, relu, scale, softmax, sum_squares


class Head:
    """concat(g*, f_en) -> fc -> relu -> fc -> relu -> fc -> softmax."""

    def __init__(self, cfg, store, fused_dim, prefix="head"):
        self.cfg = cfg
        self.store = store
        self.prefix = prefix
        self.fused_dim = fused_dim
        h1, h2 = cfg.head_hidden
        store.fc(f"{prefix}/fc1", fused_dim, h1)
        store.fc(f"{prefix}/fc2", h1, h2)
        store.fc(f"{prefix}/fc3", h2, cfg.class_count)

    def fuse_and_classify(self, g_star, f_en):
        if g_star.shape[-1] + f_en.shape[-1] != self.fused_dim:
            raise ConfigurationError(
                f"fused width {g_star.shape[-1]} + {f_en.shape[-1]} does not match "
                f"head input {self.fused_dim}")
        x = concat((g_star, f_en), axis=-1)
        if x.data.ndim == 1:
            from .tensor import reshape
            x = reshape(x, (1, -1))
        p = self.prefix
        x = relu(add(matmul(x, self.store[f"{p}/fc1/w"]), self.store[f"{p}/fc1/b"]))
        x = relu(add(matmul(x, self.store[f"{p}/fc2/w"]), self.store[f"{p}/fc2/b"]))
        logits = add(matmul(x, self.store[f"{p}/fc3/w"]), self.store[f"{p}/fc3/b"])
        return softmax(logits, axis=-1)


def l2_penalty(weight_tensors):
    """Sum of squared entries over weight matrices/kernels (biases excluded)."""
    total = None
    for w in weight_tensors:
        term = sum_squares(w)
        total = term if total is None else add(total, term)
    return total


def classification_loss(probs, labels, weight_tensors, loss_cfg):
    """Total loss, with components.

    Returns (loss, entropy_value, l2_value, clamped_count); the l2 term is
    loss_balance * l2_lambda * sum ||W||^2.
    """
    entropy, clamped = nll_loss(probs, labels)
    coeff = loss_cfg.loss_balance * loss_cfg.l2_lambda
    if coeff > 0 and weight_tensors:
        l2 = scale(l2_penalty(weight_tensors), loss_cfg.l2_lambda)
        total = add(entropy, scale(l2, loss_cfg.loss_balance))
        l2_value = float(l2.data)
    else:
        total = entropy
        l2_value = 0.0
    return total, float(entropy.data), l2_value, clamped
