"""Guided depth map super-resolution on a self-contained autodiff core."""

from .model import ModelConfig, build, count_params
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "Tensor",
    "backward",
    "build",
    "count_params",
    "no_grad",
    "__version__",
]
