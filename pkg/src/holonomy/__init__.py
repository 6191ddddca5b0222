"""Degenerate HJB solvers, holonomic-measure linear programs and duality audits on the torus."""

__version__ = "0.1.0"
