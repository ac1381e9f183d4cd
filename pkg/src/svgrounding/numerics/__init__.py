from . import checkpoint, nn, rng
from .nn import Module, Parameter
from .optim import AdamState, adam_step, zero_grad
from .tensor import DimensionError, Tensor

__all__ = [
    "AdamState",
    "DimensionError",
    "Module",
    "Parameter",
    "Tensor",
    "adam_step",
    "checkpoint",
    "nn",
    "rng",
    "zero_grad",
]
