"""Minimal reverse-mode autodiff over numpy, plus layers and optimizer."""

from .autograd import Tensor, Parameter, as_tensor, no_grad, custom_op
from . import ops
from .optim import AdamW

__all__ = ["Tensor", "Parameter", "as_tensor", "no_grad", "custom_op", "ops", "AdamW"]
