"""Two-branch speech/noise enhancement with cross-branch interaction."""

from .engine import Adam, ParamStore, Tensor, check_gradients, no_grad
from .model import SNNet, SNNetConfig, desk_config

__all__ = [
    "Adam",
    "ParamStore",
    "SNNet",
    "SNNetConfig",
    "Tensor",
    "check_gradients",
    "desk_config",
    "no_grad",
]

__version__ = "0.1.0"
