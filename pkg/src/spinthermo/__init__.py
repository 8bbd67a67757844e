"""Spin-1 defect Ramsey thermometry: dynamics, noise ensembles, fringe fits, temperature inversion."""
from .spinmodel import FieldSample, SpinParams

__version__ = "0.1.0"

__all__ = ["FieldSample", "SpinParams", "__version__"]
