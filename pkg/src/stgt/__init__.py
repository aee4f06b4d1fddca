"""Graph transformer over serialized graph tokens."""
from .config import TrainConfig
from .kernels import BACKEND
from .model import build_model

__all__ = ["BACKEND", "TrainConfig", "build_model"]
__version__ = "0.1.0"
