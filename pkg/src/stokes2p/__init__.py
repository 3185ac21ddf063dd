"""Two-phase incompressible Stokes flow in 2D with parametric front tracking."""

__version__ = "0.1.0"
