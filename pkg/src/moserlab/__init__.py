"""Finite-element and spectral experiments on sharp exponential integrability in two dimensions."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
