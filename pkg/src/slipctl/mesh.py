"""Rectangular domain, MAC staggered grid and boundary loop geometry.

The domain is the rectangle [0, Lx] x [0, Ly] split into nx x ny cells.
Velocity unknowns live on cell faces (u on vertical faces, v on horizontal
faces), pressure at cell centers.  The boundary is sampled at wall-edge
midpoints, ordered counterclockwise starting at the bottom-left edge, so
every boundary sample coincides with exactly one wall-normal velocity
unknown.  Walls are indexed 0=bottom, 1=right, 2=top, 3=left.
"""

import numpy as np

WALL_BOTTOM, WALL_RIGHT, WALL_TOP, WALL_LEFT = 0, 1, 2, 3
WALL_NAMES = ("bottom", "right", "top", "left")


class Grid:
    """Immutable staggered grid with a counterclockwise boundary loop.

    Boundary frame convention: n is the outward unit normal and tau is n
    rotated by +90 degrees, so (n, tau) is right-handed and tau follows the
    counterclockwise loop direction.
    """

    def __init__(self, nx, ny, Lx, Ly):
        if nx < 4 or ny < 4:
            raise ValueError("cell counts must be at least 4, got %r" % ((nx, ny),))
        if Lx <= 0 or Ly <= 0:
            raise ValueError("domain lengths must be positive, got %r" % ((Lx, Ly),))
        self.nx = int(nx)
        self.ny = int(ny)
        self.Lx = float(Lx)
        self.Ly = float(Ly)
        self.hx = self.Lx / self.nx
        self.hy = self.Ly / self.ny
        self.n_boundary = 2 * (self.nx + self.ny)
        self._build_loop()
        self.corner_cells = (
            (0, 0), (self.nx - 1, 0), (self.nx - 1, self.ny - 1), (0, self.ny - 1))
        self._ops = None

    def _build_loop(self):
        nx, ny, hx, hy = self.nx, self.ny, self.hx, self.hy
        Lx, Ly = self.Lx, self.Ly
        pos, nrm, s, wall, widx, wlen = [], [], [], [], [], []
        # bottom, left to right
        for i in range(nx):
            pos.append(((i + 0.5) * hx, 0.0)); nrm.append((0.0, -1.0))
            s.append((i + 0.5) * hx); wall.append(WALL_BOTTOM); widx.append(i); wlen.append(hx)
        # right, bottom to top
        for j in range(ny):
            pos.append((Lx, (j + 0.5) * hy)); nrm.append((1.0, 0.0))
            s.append(Lx + (j + 0.5) * hy); wall.append(WALL_RIGHT); widx.append(j); wlen.append(hy)
        # top, right to left
        for k in range(nx):
            i = nx - 1 - k
            pos.append(((i + 0.5) * hx, Ly)); nrm.append((0.0, 1.0))
            s.append(Lx + Ly + (k + 0.5) * hx); wall.append(WALL_TOP); widx.append(i); wlen.append(hx)
        # left, top to bottom
        for k in range(ny):
            j = ny - 1 - k
            pos.append((0.0, (j + 0.5) * hy)); nrm.append((-1.0, 0.0))
            s.append(2 * Lx + Ly + (k + 0.5) * hy); wall.append(WALL_LEFT); widx.append(j); wlen.append(hy)
        self.boundary_pos = np.asarray(pos)
        self.boundary_normal = np.asarray(nrm)
        # tau = n rotated by +90 degrees
        self.boundary_tangent = np.column_stack(
            [-self.boundary_normal[:, 1], self.boundary_normal[:, 0]])
        self.boundary_s = np.asarray(s)
        self.boundary_wall = np.asarray(wall, dtype=np.int64)
        self.boundary_wall_index = np.asarray(widx, dtype=np.int64)
        self.boundary_weight = np.asarray(wlen)
        self.loop_length = 2.0 * (self.Lx + self.Ly)

    def wall_slice(self, wall):
        """Index range of a wall's nodes inside the loop ordering."""
        nx, ny = self.nx, self.ny
        starts = (0, nx, nx + ny, 2 * nx + ny)
        sizes = (nx, ny, nx, ny)
        return slice(starts[wall], starts[wall] + sizes[wall])

    @property
    def shape_u(self):
        return (self.nx + 1, self.ny)

    @property
    def shape_v(self):
        return (self.nx, self.ny + 1)

    @property
    def shape_p(self):
        return (self.nx, self.ny)

    @property
    def cell_area(self):
        return self.hx * self.hy

    def cell_centers(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def u_points(self):
        x = np.arange(self.nx + 1) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def v_points(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def vertex_points(self):
        x = np.arange(self.nx + 1) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    @property
    def ops(self):
        """Lazily built discrete operators shared by all solvers."""
        if self._ops is None:
            from . import operators
            self._ops = operators.DiscreteOperators(self)
        return self._ops

    def key(self):
        return (self.nx, self.ny, self.Lx, self.Ly)

    def __repr__(self):
        return "Grid(nx=%d, ny=%d, Lx=%g, Ly=%g)" % (self.nx, self.ny, self.Lx, self.Ly)


class TimeGrid:
    """Uniform partition of [0, T] into nt steps."""

    def __init__(self, T, nt):
        if nt < 1:
            raise ValueError("nt must be at least 1")
        if T <= 0:
            raise ValueError("T must be positive")
        self.T = float(T)
        self.nt = int(nt)
        self.dt = self.T / self.nt

    def times(self):
        return np.linspace(0.0, self.T, self.nt + 1)

    def __repr__(self):
        return "TimeGrid(T=%g, nt=%d)" % (self.T, self.nt)


def build_grid(nx, ny, Lx, Ly):
    return Grid(nx, ny, Lx, Ly)


def integrate_boundary(grid, f):
    """Quadrature of a boundary sample vector over the closed loop.

    Midpoint rule per wall edge; exact for data constant on each edge.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n_boundary,):
        raise ValueError(
            "expected %d boundary samples, got shape %r" % (grid.n_boundary, f.shape))
    return float(np.dot(grid.boundary_weight, f))


def integrate_interior(grid, f):
    """Midpoint-rule integral of a cell-centered sample array."""
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape_p:
        raise ValueError("expected cell array of shape %r, got %r" % (grid.shape_p, f.shape))
    return float(f.sum() * grid.cell_area)
