"""High-order immersed-interface Poisson solvers on uniform 2D grids.

The pieces are layered: :mod:`grid` and :mod:`geometry` describe the mesh
and the embedded surface, :mod:`iim` builds boundary interpolants,
:mod:`operator` assembles the high-order discretisation,
:mod:`shortley_weller` and :mod:`multigrid` provide the low-order
preconditioner, :mod:`krylov` the outer solvers, and :mod:`harness` the
studies and command line.
"""
from .errors import IIMError
from .geometry import Circle, Condition, Line, Star, star_geometry
from .grid import Grid2D, PointClass
from .krylov import SolverConfig, fgmres, gmres, solve_augmented
from .manufactured import CASES, ManufacturedCase
from .multigrid import MGHierarchy
from .operator import ImmersedOperator, extremal_spectrum
from .shortley_weller import SWOperator

__all__ = [
    "CASES",
    "Circle",
    "Condition",
    "Grid2D",
    "IIMError",
    "ImmersedOperator",
    "Line",
    "MGHierarchy",
    "ManufacturedCase",
    "PointClass",
    "SWOperator",
    "SolverConfig",
    "Star",
    "extremal_spectrum",
    "fgmres",
    "gmres",
    "solve_augmented",
    "star_geometry",
]

__version__ = "0.1.0"
