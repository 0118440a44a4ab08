"""Numerical gauge theory for smooth loops: octonion loop algebra,
evolution operators, torsion fields on flat tori, a Newton-Krylov
Coulomb-gauge solver and the G2-structure specialization."""

from .constants import CONSTANTS
from .loops import get_instance

__all__ = ["CONSTANTS", "get_instance"]
__version__ = "0.1.0"
