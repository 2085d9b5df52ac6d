"""Float64 tensors, reverse-mode autodiff and the primitives the model needs."""

from . import ops
from .layers import LayerNorm, Linear, Module
from .tensor import Tape, Tensor, as_tensor, backward, get_tape, no_grad, reset_tape

__all__ = [
    "LayerNorm",
    "Linear",
    "Module",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "get_tape",
    "no_grad",
    "ops",
    "reset_tape",
]
