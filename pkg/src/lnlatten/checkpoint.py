"""Binary checkpoint format: versioned header, config snapshot, named tensors.

Layout (all integers little-endian uint32 unless noted):

    magic   b"LNLA"
    version uint32 (currently 1)
    config  uint32 length + UTF-8 "key = value" lines
    count   uint32 number of parameter blocks
    blocks  repeated: name (uint32 length + UTF-8), ndim, dims...,
            float32-LE data
    crc     uint32 CRC-32 of everything before it

Parameters are stored as float32 regardless of the in-memory dtype; loading
into a float64 model widens on assignment.
"""

import io
import os
import struct
import zlib

import numpy as np

from .config import ModelConfig, parse_config_text
from .errors import ConfigurationError, DataError

MAGIC = b"LNLA"
VERSION = 1

_CONFIG_KEYS = ("profile", "variant", "image_extent", "input_channels", "m",
                "alpha", "overlap_ratio", "class_count", "seed",
                "loss_balance", "l2_lambda", "backbone_bypass")


def _config_text(cfg):
    lines = [f"{k} = {getattr(cfg, k)!r}".replace("'", "") for k in _CONFIG_KEYS]
    return "\n".join(lines) + "\n"


def _write_str(buf, s):
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def save_checkpoint(path, model):
    """Write model parameters and config atomically."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _write_str(buf, _config_text(model.cfg))
    items = list(model.store.items())
    buf.write(struct.pack("<I", len(items)))
    for name, t in items:
        _write_str(buf, name)
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    payload = buf.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
        f.write(struct.pack("<I", crc))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise DataError(f"truncated checkpoint {self.path!r}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.u32()).decode("utf-8")


def read_checkpoint(path):
    """Returns (ModelConfig, dict name -> float32 array)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12:
        raise DataError(f"checkpoint {path!r} is too short")
    payload, crc_bytes = blob[:-4], blob[-4:]
    if zlib.crc32(payload) & 0xFFFFFFFF != struct.unpack("<I", crc_bytes)[0]:
        raise DataError(f"checkpoint {path!r} failed integrity check")
    r = _Reader(payload, path)
    if r.take(4) != MAGIC:
        raise DataError(f"checkpoint {path!r} has wrong magic bytes")
    version = r.u32()
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    model_kw, _ = parse_config_text(r.string())
    cfg = ModelConfig(**model_kw)
    arrays = {}
    for _ in range(r.u32()):
        name = r.string()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        arrays[name] = arr
    if r.pos != len(payload):
        raise DataError(f"trailing bytes in checkpoint {path!r}")
    return cfg, arrays


def load_checkpoint(path, model):
    """Load parameters into an existing model; configs must match."""
    cfg, arrays = read_checkpoint(path)
    # seed only affects initialization, which the load overwrites
    for key in (k for k in _CONFIG_KEYS if k != "seed"):
        have, want = getattr(model.cfg, key), getattr(cfg, key)
        if have != want:
            raise ConfigurationError(
                f"checkpoint config mismatch: {key} is {want!r} in the file "
                f"but {have!r} in the model")
    model.store.load_arrays(arrays)
    model.cfg.seed = cfg.seed        # keep re-saves byte-identical
    return model
