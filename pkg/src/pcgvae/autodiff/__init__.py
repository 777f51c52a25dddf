"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from . import ops
from .checkpoint import load_tensors, save_tensors
from .optim import Adam, AdamState, adam_step
from .tensor import ShapeError, Tape, Tensor, no_grad

__all__ = [
    "Adam", "AdamState", "ShapeError", "Tape", "Tensor",
    "adam_step", "load_tensors", "no_grad", "ops", "save_tensors",
]
