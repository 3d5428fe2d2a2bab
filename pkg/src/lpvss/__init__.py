"""LPV state-space models with built-in contraction or Lipschitz guarantees."""

from .errors import (CorruptFile, DegenerateReference, FormatVersionMismatch, LpvError,
                     NoConvergence, NonFiniteState, NormBoundViolated, ShapeMismatch,
                     SingularMatrix)
from .lpvmodel import LpvLfrModel, LpvSsModel, load_model, save_model

__all__ = [
    "CorruptFile", "DegenerateReference", "FormatVersionMismatch", "LpvError", "NoConvergence",
    "NonFiniteState", "NormBoundViolated", "ShapeMismatch", "SingularMatrix",
    "LpvLfrModel", "LpvSsModel", "load_model", "save_model",
]
