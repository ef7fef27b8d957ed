"""Dual optimization proxies for parametric bounded linear programs."""

from dualprox.lp_core import DualPoint, ParametricLpInstance, ResidualReport
from dualprox.completion import CompletionOutput, Regularizer

__version__ = "0.1.0"

__all__ = [
    "CompletionOutput",
    "DualPoint",
    "ParametricLpInstance",
    "Regularizer",
    "ResidualReport",
]
