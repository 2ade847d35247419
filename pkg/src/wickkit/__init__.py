"""wickkit: Wick polynomials, cumulant hierarchies, and a lattice NLS kinetic workbench."""

__version__ = "0.1.0"
