"""Watchtower incentive protocol laboratory: DCWC, its Lightning-style variant and xD-channels."""
from .kernels import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"
