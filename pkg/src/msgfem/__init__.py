"""Multiscale spectral GFEM: optimal local approximation spaces on oversampled patches."""
from .microstructure import (HOLE, CoefficientField, Rect, SymMat2, checkerboard_cell,
                             constant_field, inclusion_field, laminate_cell, periodic_field)

__version__ = "0.1.0"

__all__ = [
    "HOLE", "CoefficientField", "Rect", "SymMat2", "checkerboard_cell", "constant_field",
    "inclusion_field", "laminate_cell", "periodic_field", "__version__",
]
