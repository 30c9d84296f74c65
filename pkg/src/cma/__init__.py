"""Viscosity-solution toolkit for the complex Monge-Ampere equation ``det(dd^c u) = f(z, u)``."""
from .errors import CmaError
from .grid_domain import Ball, Box, DomainGrid, GridFunction, build_domain, unit_ball
from .hermitian_core import HermitianForm, QuadraticJet, SymForm, decompose_quadratic
from .rhs import Constant, ExpU, Product, ProblemSpec, Radial, RadialPoly, RadialPower

__all__ = [
    "CmaError", "Ball", "Box", "DomainGrid", "GridFunction", "build_domain", "unit_ball",
    "HermitianForm", "QuadraticJet", "SymForm", "decompose_quadratic",
    "Constant", "ExpU", "Product", "ProblemSpec", "Radial", "RadialPoly", "RadialPower",
]
__version__ = "0.1.0"
