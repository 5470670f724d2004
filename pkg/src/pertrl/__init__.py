"""Perturbation-structured policy evaluation for polynomial dynamical systems."""

from .kernels import BACKEND
from .poly import Polynomial, compose

__version__ = "0.1.0"
__all__ = ["BACKEND", "Polynomial", "compose", "__version__"]
