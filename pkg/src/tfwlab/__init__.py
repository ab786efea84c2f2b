"""Quasi-1D orbital-free DFT lab: TFW / TFWD ground states of periodic crystals and defect energetics."""

from .grid import Field, Grid1D, GridMismatchError, integrate, second_derivative
from .nuclear import (
    NuclearDensity,
    gaussian_comb,
    gaussian_perturbation,
    jellium,
    superpose,
    uniform_bump,
    zero_perturbation,
)
from .poisson import solve_periodic_poisson
from .functional import (
    DIRAC_CONSTANT,
    AlmState,
    FieldState,
    ModelParams,
    augmented_lagrangian,
    el_residual,
    energy,
    grad_augmented_lagrangian,
)
from .solver import SolveResult, SolverOptions, minimize_u, staggered_solve, uniqueness_probe

__version__ = "0.1.0"

__all__ = [
    "DIRAC_CONSTANT",
    "AlmState",
    "Field",
    "FieldState",
    "Grid1D",
    "GridMismatchError",
    "ModelParams",
    "NuclearDensity",
    "SolveResult",
    "SolverOptions",
    "augmented_lagrangian",
    "el_residual",
    "energy",
    "gaussian_comb",
    "gaussian_perturbation",
    "grad_augmented_lagrangian",
    "integrate",
    "jellium",
    "minimize_u",
    "second_derivative",
    "solve_periodic_poisson",
    "staggered_solve",
    "superpose",
    "uniform_bump",
    "uniqueness_probe",
    "zero_perturbation",
]
