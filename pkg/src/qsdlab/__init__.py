"""Quasi-stationary distributions of branching processes with genealogy and
branching random walks modulo translations: simulation and exact numerics."""

__version__ = "0.1.0"
