"""Model/train configuration, profiles, and the key=value config file format."""

from dataclasses import dataclass, field, fields

from .errors import ConfigurationError

VARIANTS = ("full", "model_s", "model_local", "model_nonlocal")
PROFILES = ("paper", "tiny")

# Per-profile structural constants.  The paper profile follows the published
# layer tables; the tiny profile is a structurally identical reduction used
# for tests and gradient checks (one fewer pooling stage so the attention
# grid stays non-degenerate at a 48px input).
_PROFILE = {
    "paper": dict(
        image_extent=144,
        input_channels=3,
        encoder_channels=(64, 128, 256, 512),
        bottleneck_channels=512,
        m=16,
        overlap_ratio=1.0 / 3.0,
        head_hidden=(2048, 1024),
        batch_size=24,
    ),
    "tiny": dict(
        image_extent=48,
        input_channels=1,
        encoder_channels=(8, 16, 32),
        bottleneck_channels=64,
        m=9,
        overlap_ratio=0.3,
        head_hidden=(128, 64),
        batch_size=16,
    ),
}


@dataclass
class ModelConfig:
    profile: str = "paper"
    variant: str = "full"
    image_extent: int = None
    input_channels: int = None
    m: int = None
    alpha: float = 0.7
    overlap_ratio: float = None
    class_count: int = 7
    seed: int = 0
    loss_balance: float = 1.0
    l2_lambda: float = 0.0001
    backbone_bypass: bool = False

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigurationError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        prof = _PROFILE[self.profile]
        for key in ("image_extent", "input_channels", "m", "overlap_ratio"):
            if getattr(self, key) is None:
                setattr(self, key, prof[key])
        self.validate()

    def validate(self):
        prof = _PROFILE[self.profile]
        if self.image_extent != prof["image_extent"]:
            raise ConfigurationError(
                f"profile {self.profile!r} requires image_extent {prof['image_extent']}, "
                f"got {self.image_extent}")
        if self.input_channels not in (1, 3):
            raise ConfigurationError(f"input_channels must be 1 or 3, got {self.input_channels}")
        n = round(self.m ** 0.5)
        if n * n != self.m or self.m < 1:
            raise ConfigurationError(f"m must be a perfect square >= 1, got {self.m}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.overlap_ratio < 1.0:
            raise ConfigurationError(f"overlap_ratio must lie in [0, 1), got {self.overlap_ratio}")
        if self.class_count < 2:
            raise ConfigurationError(f"class_count must be >= 2, got {self.class_count}")
        if self.loss_balance < 0 or self.l2_lambda < 0:
            raise ConfigurationError("loss_balance and l2_lambda must be >= 0")

    # --- structural derivations -------------------------------------------
    @property
    def encoder_channels(self):
        return _PROFILE[self.profile]["encoder_channels"]

    @property
    def bottleneck_channels(self):
        return _PROFILE[self.profile]["bottleneck_channels"]

    @property
    def stage_count(self):
        return len(self.encoder_channels)

    @property
    def bottleneck_extent(self):
        return self.image_extent // (2 ** self.stage_count)

    @property
    def f9_channels(self):
        return self.encoder_channels[0]

    @property
    def grid_side(self):
        return round(self.m ** 0.5)

    @property
    def head_hidden(self):
        return _PROFILE[self.profile]["head_hidden"]

    @property
    def default_batch_size(self):
        return _PROFILE[self.profile]["batch_size"]


@dataclass
class TrainConfig:
    epochs: int = 24
    batch_size: int = None
    learning_rate: float = 0.0003
    lr_decay_per_epoch: float = 0.95
    horizontal_flip: bool = True
    random_crop: bool = True
    patch_blank_fraction: float = 0.0

    def validate(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.patch_blank_fraction <= 1.0:
            raise ConfigurationError(
                "patch_blank_fraction must lie in [0, 1], "
                f"got {self.patch_blank_fraction}")
        if not 0.0 < self.lr_decay_per_epoch <= 1.0:
            raise ConfigurationError(
                f"lr_decay_per_epoch must lie in (0, 1], got {self.lr_decay_per_epoch}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")

    def resolved_batch_size(self, model_cfg):
        return self.batch_size if self.batch_size is not None else model_cfg.default_batch_size


@dataclass
class LossConfig:
    loss_balance: float = 1.0
    l2_lambda: float = 0.0001

    @classmethod
    def from_model(cls, cfg):
        return cls(loss_balance=cfg.loss_balance, l2_lambda=cfg.l2_lambda)


_MODEL_KEYS = {
    "profile": str, "variant": str, "image_extent": int, "input_channels": int,
    "m": int, "alpha": float, "overlap_ratio": float, "class_count": int,
    "seed": int, "loss_balance": float, "l2_lambda": float, "backbone_bypass": bool,
}
_TRAIN_KEYS = {
    "epochs": int, "batch_size": int, "learning_rate": float,
    "lr_decay_per_epoch": float, "horizontal_flip": bool, "random_crop": bool,
    "patch_blank_fraction": float,
}


def _parse_value(raw, typ, key, lineno):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ is float and "/" in raw:
            num, den = raw.split("/")
            return float(num) / float(den)
        return typ(raw)
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigurationError(
            f"cannot parse value {raw!r} for key {key!r} at line {lineno}") from e


def parse_config_text(text):
    """Parse key = value lines into (model kwargs, train kwargs)."""
    model_kw, train_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"expected 'key = value' at line {lineno}: {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key in _MODEL_KEYS:
            model_kw[key] = _parse_value(raw, _MODEL_KEYS[key], key, lineno)
        elif key in _TRAIN_KEYS:
            train_kw[key] = _parse_value(raw, _TRAIN_KEYS[key], key, lineno)
        else:
            raise ConfigurationError(f"unknown key {key!r} at line {lineno}")
    return model_kw, train_kw


def load_config(path, overrides=None):
    """Read a config file and apply CLI overrides on top.

    Returns (ModelConfig, TrainConfig).  `overrides` maps key -> raw value
    (already typed); unknown override keys raise.
    """
    with open(path, encoding="utf-8") as fh:
        model_kw, train_kw = parse_config_text(fh.read())
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in _MODEL_KEYS:
            model_kw[key] = value
        elif key in _TRAIN_KEYS:
            train_kw[key] = value
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    model_cfg = ModelConfig(**model_kw)
    train_cfg = TrainConfig(**train_kw)
    train_cfg.validate()
    return model_cfg, train_cfg


def config_snapshot(model_cfg):
    """Stable dict snapshot of a ModelConfig, for checkpoints."""
    return {f.name: getattr(model_cfg, f.name) for f in fields(ModelConfig)}
