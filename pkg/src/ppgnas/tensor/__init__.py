"""Minimal reverse-mode autodiff engine for 1D CNNs."""
from . import ops
from .gradcheck import gradcheck, numeric_grad, relative_error
from .init import kaiming_uniform
from .ops import ShapeError
from .optim import Adam, AdamState, adam_step
from .tensor import (AutogradError, NumericalError, Tensor, as_tensor, default_dtype, float64_mode,
                     grad_enabled, make_result, no_grad)


__all__ = [
    "Adam", "AdamState", "AutogradError", "NumericalError", "ShapeError", "Tensor", "adam_step",
    "as_tensor", "default_dtype", "float64_mode", "grad_enabled", "gradcheck", "kaiming_uniform",
    "make_result", "no_grad", "numeric_grad", "ops", "relative_error",
]
