"""Reverse-mode autodiff toolkit and models for index trend prediction."""

from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = ["Tape", "Tensor", "__version__"]
