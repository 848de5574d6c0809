"""Quantized state system solvers."""

from ..polynomial import PolynomialSegment
from .quantum import QUANTUM_MODES, compute_quantum
from .solver import (
    METHODS,
    OdeSystem,
    QssIntegrator,
    QssTrace,
    SolverError,
    first_crossing,
    integrate,
)

__all__ = [
    "METHODS",
    "QUANTUM_MODES",
    "OdeSystem",
    "PolynomialSegment",
    "QssIntegrator",
    "QssTrace",
    "SolverError",
    "compute_quantum",
    "first_crossing",
    "integrate",
]
