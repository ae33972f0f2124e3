"""Local/non-local joint attention network for region-crucial image
classification, built on a small numpy reverse-mode autodiff core."""

from .config import LossConfig, ModelConfig, TrainConfig, load_config
from .errors import (ConfigurationError, ContractError, DataError,
                     DimensionError, LnlError, NumericalError)
from .model import LNLAttenNet
from .tensor import Tensor, backward, no_grad

__all__ = [
    "LNLAttenNet", "ModelConfig", "TrainConfig", "LossConfig", "load_config",
    "Tensor", "backward", "no_grad",
    "LnlError", "ConfigurationError", "ContractError", "DataError",
    "DimensionError", "NumericalError",
]

__version__ = "0.1.0"
