"""Named parameter storage with Xavier initialization."""

import numpy as np

from .errors import ConfigurationError
from .tensor import Tensor


def xavier(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class ParamStore:
    """Insertion-ordered map of parameter name -> trainable Tensor.

    Weight tensors are registered under names ending in '/w' and take part
    in the L2 term; biases end in '/b' and do not.
    """

    def __init__(self, rng, dtype=np.float64):
        self.rng = rng
        self.dtype = np.dtype(dtype)
        self._params = {}

    def _register(self, name, array):
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def conv(self, name, kh, kw, cin, cout):
        w = self._register(f"{name}/w", xavier(
            self.rng, (kh, kw, cin, cout), kh * kw * cin, kh * kw * cout, self.dtype))
        b = self._register(f"{name}/b", np.zeros(cout, dtype=self.dtype))
        return w, b

    def fc(self, name, din, dout):
        w = self._register(f"{name}/w", xavier(self.rng, (din, dout), din, dout, self.dtype))
        b = self._register(f"{name}/b", np.zeros(dout, dtype=self.dtype))
        return w, b

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def weights(self):
        return [t for name, t in self._params.items() if name.endswith("/w")]

    def zero_grads(self):
        for t in self._params.values():
            t.zero_grad()

    def total_size(self):
        return sum(t.size for t in self._params.values())

    def load_arrays(self, named_arrays):
        """Overwrite parameter values from name -> array, shapes must match."""
        for name, arr in named_arrays.items():
            if name not in self._params:
                raise ConfigurationError(f"unknown parameter {name!r} in checkpoint")
            t = self._params[name]
            if tuple(arr.shape) != t.shape:
                raise ConfigurationError(
                    f"parameter {name!r} shape {arr.shape} does not match model {t.shape}")
            t.data = np.asarray(arr, dtype=self.dtype)
        missing = set(self._params) - set(named_arrays)
        if missing:
            raise ConfigurationError(f"checkpoint is missing parameters: {sorted(missing)[:5]}...")
