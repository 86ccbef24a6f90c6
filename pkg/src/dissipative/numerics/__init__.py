from .autodiff import Gradients, Tape, Var, backward, finite_difference_gradient
from .linalg import (
    ConvergenceError,
    EigenDecomposition,
    SingularMatrixError,
    SolveReport,
    eigenvalues,
    eigenvalues_batch,
    hessenberg,
    lu_solve,
    power_iteration,
    spectral_norm,
)
from .trace import hutchinson_frobenius_sq, rademacher

__all__ = [
    "ConvergenceError",
    "EigenDecomposition",
    "Gradients",
    "SingularMatrixError",
    "SolveReport",
    "Tape",
    "Var",
    "backward",
    "eigenvalues",
    "eigenvalues_batch",
    "finite_difference_gradient",
    "hessenberg",
    "hutchinson_frobenius_sq",
    "lu_solve",
    "power_iteration",
    "rademacher",
    "spectral_norm",
]
