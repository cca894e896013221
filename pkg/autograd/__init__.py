"""Dense tensors with tape-based reverse-mode differentiation."""

from . import functional
from .gradcheck import grad_check
from .tensor import Tape, Tensor, active_tape, as_tensor, backward, get_default_dtype, no_grad, numeric_mode, zero_grad

__all__ = [
    "Tape",
    "Tensor",
    "active_tape",
    "as_tensor",
    "backward",
    "functional",
    "get_default_dtype",
    "grad_check",
    "no_grad",
    "numeric_mode",
    "zero_grad",
]
