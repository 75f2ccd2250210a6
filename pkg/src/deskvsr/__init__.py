"""Desk-scale recurrent video super-resolution on a from-scratch autograd engine."""
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "no_grad", "__version__"]
