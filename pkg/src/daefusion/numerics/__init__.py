"""Tensor engine: values, tape, ops, gradient checking, fixtures."""

from .tensor import (AllocationLog, GradError, NonFiniteError, ShapeError,
                     Tape, Tensor, active_tape, as_tensor, rng, trunc_normal)
from . import ops
from .gradcheck import grad_check, grad_check_sampled, run_op_suite
from .fixtures import load_tensor, save_tensor

__all__ = [
    "AllocationLog", "GradError", "NonFiniteError", "ShapeError", "Tape",
    "Tensor", "active_tape", "as_tensor", "rng", "trunc_normal", "ops",
    "grad_check", "grad_check_sampled", "run_op_suite", "load_tensor",
    "save_tensor",
]
