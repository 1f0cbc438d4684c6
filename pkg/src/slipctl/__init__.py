"""Velocity-tracking boundary control of 2D incompressible flow with
Navier slip walls: staggered-grid state/linearized/adjoint solvers, a
duality-based cost gradient, projected-gradient optimization over an
admissible control set, and a verification harness for the underlying
energy and interpolation estimates."""

__version__ = "0.1.0"
