"""From-scratch five-block CNN for ten-class capsule-endoscopy image classification."""

from .model import CLASS_NAMES, Model, ModelSpec, build, load, save
from .tensor import Tensor

__all__ = ["CLASS_NAMES", "Model", "ModelSpec", "Tensor", "build", "load", "save"]
__version__ = "0.1.0"
