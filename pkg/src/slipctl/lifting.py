"""Harmonic extension of normal boundary data.

Solves the cell-centered Neumann problem for a potential whose gradient is
the divergence-free lifting of the prescribed wall-normal velocity.  The
potential is determined up to a constant; the mean is pinned through a
bordered row rather than by fixing one cell, which keeps the system
symmetric.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import IncompatibleFlux, SolverDivergence
from .fields import PressureField, VelocityField
from .mesh import integrate_boundary

FLUX_TOL = 1e-10
RESIDUAL_TOL = 1e-10


class LiftingResult:
    """Mean-zero potential h and its staggered gradient."""

    def __init__(self, h: PressureField, grad: VelocityField):
        self.h = h
        self.grad = grad


class _NeumannSolver:
    """Cached factorization of the bordered Neumann Laplacian on one grid."""

    def __init__(self, grid):
        self.grid = grid
        ops = grid.ops
        self.Gint = self._interior_gradient(grid)
        area = grid.cell_area
        L = (area * ops.Dmat) @ self.Gint
        ones_c = np.ones((ops.ncell, 1))
        big = sp.bmat([[L, ones_c], [area * ones_c.T, None]], format="csc")
        self.big = big
        self.lu = spla.splu(big)

    @staticmethod
    def _interior_gradient(grid):
        """Cell potential -> face gradient; zero at the wall faces."""
        ops = grid.ops
        nx, ny = grid.nx, grid.ny
        rows, cols, data = [], [], []
        cell = np.arange(ops.ncell).reshape(nx, ny)
        for i in range(1, nx):
            for j in range(ny):
                r = ops.iu(i, j)
                rows += [r, r]; cols += [cell[i, j], cell[i - 1, j]]
                data += [1.0 / grid.hx, -1.0 / grid.hx]
        for i in range(nx):
            for j in range(1, ny):
                r = ops.iv(i, j)
                rows += [r, r]; cols += [cell[i, j], cell[i, j - 1]]
                data += [1.0 / grid.hy, -1.0 / grid.hy]
        return sp.csr_matrix((data, (rows, cols)), shape=(ops.N, ops.ncell))

    def solve(self, a_nodes):
        grid, ops = self.grid, self.grid.ops
        flux = integrate_boundary(grid, a_nodes)
        scale = max(1.0, float(np.abs(a_nodes).max()))
        if abs(flux) > FLUX_TOL * scale:
            raise IncompatibleFlux(
                "net boundary flux %.3e violates the zero-mean compatibility "
                "condition on the normal data" % flux)
        bc = ops.bc_vec(a_nodes)
        rhs = np.concatenate([-(grid.cell_area * (ops.Dmat @ bc)), [0.0]])
        sol = self.lu.solve(rhs)
        res = np.linalg.norm(self.big @ sol - rhs)
        if not np.isfinite(res) or res > RESIDUAL_TOL * max(1.0, np.linalg.norm(rhs)):
            raise SolverDivergence("Neumann solve residual %.3e above tolerance" % res)
        h = sol[:ops.ncell]
        grad_vec = self.Gint @ h + bc
        return (PressureField(grid, h.reshape(grid.shape_p), mean_zero=True),
                VelocityField.from_vec(grid, grad_vec))


def _solver_for(grid):
    if not hasattr(grid, "_neumann_solver"):
        grid._neumann_solver = _NeumannSolver(grid)
    return grid._neumann_solver


def solve_neumann_lifting(grid, a_nodes) -> LiftingResult:
    """Lift normal data a into a curl-free, divergence-free velocity field.

    The returned gradient has normal trace exactly equal to a on every wall
    face; the interior faces carry the potential differences.
    """
    h, grad = _solver_for(grid).solve(np.asarray(a_nodes, dtype=float))
    return LiftingResult(h, grad)


def time_lifting(grid, a_slices):
    """Slice-wise lifting of time-indexed data; reuses the factorization."""
    solver = _solver_for(grid)
    out = []
    for k, a_k in enumerate(a_slices):
        try:
            h, grad = solver.solve(np.asarray(a_k, dtype=float))
        except (IncompatibleFlux, SolverDivergence) as exc:
            raise type(exc)("time slice %d: %s" % (k, exc))
        out.append(LiftingResult(h, grad))
    return out


def discrete_curl(y: VelocityField):
    """Vorticity samples at interior vertices: dv/dx - du/dy."""
    g = y.grid
    dvdx = (y.v[1:, 1:-1] - y.v[:-1, 1:-1]) / g.hx
    dudy = (y.u[1:-1, 1:] - y.u[1:-1, :-1]) / g.hy
    return dvdx - dudy
