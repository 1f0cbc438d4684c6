"""Discrete fields, norms and traces on the staggered grid.

Velocity components sit at face midpoints (u on vertical faces, v on
horizontal faces), pressures at cell centers, boundary scalars at wall-edge
midpoints in loop order.  All quadratures here are the same ones used
inside the solvers, so energy identities close to round-off.
"""

import json

import numpy as np

from .errors import IncompatibleFlux
from .mesh import Grid

DEFAULT_ALPHA_MIN = 1e-3


class VelocityField:
    """Staggered velocity: u of shape (nx+1, ny), v of shape (nx, ny+1)."""

    def __init__(self, grid, u=None, v=None):
        self.grid = grid
        self.u = np.zeros(grid.shape_u) if u is None else np.asarray(u, dtype=float)
        self.v = np.zeros(grid.shape_v) if v is None else np.asarray(v, dtype=float)
        if self.u.shape != grid.shape_u or self.v.shape != grid.shape_v:
            raise ValueError("velocity component shapes %r, %r do not match grid %r"
                             % (self.u.shape, self.v.shape, grid))

    def copy(self):
        return VelocityField(self.grid, self.u.copy(), self.v.copy())

    def to_vec(self):
        return np.concatenate([self.u.ravel(), self.v.ravel()])

    @classmethod
    def from_vec(cls, grid, vec):
        nu = (grid.nx + 1) * grid.ny
        u = vec[:nu].reshape(grid.shape_u)
        v = vec[nu:].reshape(grid.shape_v)
        return cls(grid, u.copy(), v.copy())

    @classmethod
    def from_functions(cls, grid, fu, fv):
        """Sample callables fu(x, y), fv(x, y) at the staggered points."""
        xu, yu = grid.u_points()
        xv, yv = grid.v_points()
        return cls(grid, fu(xu, yu), fv(xv, yv))

    def __add__(self, other):
        return VelocityField(self.grid, self.u + other.u, self.v + other.v)

    def __sub__(self, other):
        return VelocityField(self.grid, self.u - other.u, self.v - other.v)

    def __mul__(self, c):
        return VelocityField(self.grid, c * self.u, c * self.v)

    __rmul__ = __mul__


class PressureField:
    """Cell-centered scalar; mean_zero marks the pinned-gauge representative."""

    def __init__(self, grid, q=None, mean_zero=False):
        self.grid = grid
        self.q = np.zeros(grid.shape_p) if q is None else np.asarray(q, dtype=float)
        if self.q.shape != grid.shape_p:
            raise ValueError("pressure shape %r does not match grid" % (self.q.shape,))
        self.mean_zero = mean_zero


class BoundaryControl:
    """Time-indexed boundary pair (a, b) with admissible-set metadata.

    a and b have shape (nt+1, n_boundary); a must have zero boundary mean on
    every time slice.  radius is the admissible-set bound on hp_norm.
    """

    def __init__(self, grid, time_grid, a=None, b=None, p_exponent=4.0, radius=1e6):
        nslice = time_grid.nt + 1
        self.grid = grid
        self.time_grid = time_grid
        self.a = np.zeros((nslice, grid.n_boundary)) if a is None else np.asarray(a, dtype=float)
        self.b = np.zeros((nslice, grid.n_boundary)) if b is None else np.asarray(b, dtype=float)
        if self.a.shape != (nslice, grid.n_boundary) or self.b.shape != (nslice, grid.n_boundary):
            raise ValueError("control arrays must have shape (nt+1, n_boundary)")
        if not (p_exponent > 2.0):
            raise ValueError("p_exponent must exceed 2")
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.p_exponent = float(p_exponent)
        self.radius = float(radius)

    def copy(self):
        return BoundaryControl(self.grid, self.time_grid, self.a.copy(), self.b.copy(),
                               self.p_exponent, self.radius)

    def flux_residuals(self):
        """Net boundary flux of a per time slice (all must vanish)."""
        return self.a @ self.grid.boundary_weight

    def check_flux(self, tol=1e-10):
        res = np.abs(self.flux_residuals()).max()
        scale = max(1.0, np.abs(self.a).max())
        if res > tol * scale:
            raise IncompatibleFlux(
                "normal control violates the zero net flux condition: max |flux| = %.3e" % res)


class FrictionField:
    """Time-indexed boundary friction coefficient, strictly positive."""

    def __init__(self, grid, time_grid, alpha=None, alpha_min=DEFAULT_ALPHA_MIN):
        nslice = time_grid.nt + 1
        if alpha is None:
            alpha = np.ones((nslice, grid.n_boundary))
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape == (grid.n_boundary,):
            alpha = np.tile(alpha, (nslice, 1))
        if alpha.shape != (nslice, grid.n_boundary):
            raise ValueError("alpha must have shape (nt+1, n_boundary)")
        if alpha.min() < alpha_min:
            raise ValueError("friction coefficient below alpha_min=%g" % alpha_min)
        self.grid = grid
        self.time_grid = time_grid
        self.alpha = alpha
        self.alpha_min = alpha_min

    @classmethod
    def constant(cls, grid, time_grid, value=1.0):
        return cls(grid, time_grid, value * np.ones((time_grid.nt + 1, grid.n_boundary)))


class StateTrajectory:
    """Full space-time storage of the state: nt+1 velocity slices, nt pressures."""

    def __init__(self, grid, time_grid, velocities, pressures, config_hash=""):
        if len(velocities) != time_grid.nt + 1 or len(pressures) != time_grid.nt:
            raise ValueError("trajectory slice counts do not match the time grid")
        self.grid = grid
        self.time_grid = time_grid
        self.velocities = velocities
        self.pressures = pressures
        self.config_hash = config_hash

    def velocity_vecs(self):
        return [y.to_vec() for y in self.velocities]


# ---------------------------------------------------------------------------
# differential operators and traces


def divergence(y: VelocityField):
    """MAC cell divergence (u_{i+1,j}-u_{i,j})/hx + (v_{i,j+1}-v_{i,j})/hy."""
    g = y.grid
    return (y.u[1:, :] - y.u[:-1, :]) / g.hx + (y.v[:, 1:] - y.v[:, :-1]) / g.hy


def strain_tensor(y: VelocityField):
    """Strain components: D11, D22 at cell centers, D12 at grid vertices.

    Uses the same one-sided wall stencils as the assembled viscous operator.
    """
    ops = y.grid.ops
    vec = y.to_vec()
    d11 = (ops.Gxu_cell @ vec).reshape(y.grid.shape_p)
    d22 = (ops.Gyv_cell @ vec).reshape(y.grid.shape_p)
    d12 = 0.5 * ((ops.Gyu_vert + ops.Gxv_vert) @ vec).reshape(
        (y.grid.nx + 1, y.grid.ny + 1))
    return d11, d22, d12


def l2_norm(field, grid=None):
    """Quadrature-weighted L2 norm of a velocity, pressure or boundary field."""
    if isinstance(field, VelocityField):
        ops = field.grid.ops
        vec = field.to_vec()
        return float(np.sqrt(np.dot(ops.Wvec, vec * vec)))
    if isinstance(field, PressureField):
        return float(np.sqrt((field.q ** 2).sum() * field.grid.cell_area))
    # boundary scalar as plain array
    f = np.asarray(field, dtype=float)
    if grid is None:
        raise ValueError("boundary scalars need an explicit grid")
    return float(np.sqrt(np.dot(grid.boundary_weight, f * f)))


def h1_seminorm(y: VelocityField):
    """Discrete ||grad y||_{L2} with the staggered gradient samples."""
    ops = y.grid.ops
    vec = y.to_vec()
    acc = np.dot(ops.w_cell, (ops.Gxu_cell @ vec) ** 2)
    acc += np.dot(ops.w_cell, (ops.Gyv_cell @ vec) ** 2)
    acc += np.dot(ops.w_vert, (ops.Gyu_vert @ vec) ** 2)
    acc += np.dot(ops.w_vert, (ops.Gxv_vert @ vec) ** 2)
    return float(np.sqrt(acc))


def strain_l2(y: VelocityField):
    """||D(y)||_{L2}: Frobenius norm of the strain with vertex quadrature."""
    ops = y.grid.ops
    vec = y.to_vec()
    return float(np.sqrt(0.5 * np.dot(vec, ops.A_strain @ vec)))


def tangential_trace(y: VelocityField, grid=None):
    """Wall-parallel velocity dotted with tau at the boundary nodes.

    Linear extrapolation of the parallel component onto the wall, averaged
    onto the edge midpoints; exact for profiles linear in the wall-normal
    coordinate.
    """
    grid = grid or y.grid
    return grid.ops.Ttau @ y.to_vec()


def normal_trace(y: VelocityField, grid=None):
    """y·n at the boundary nodes (reads the wall face unknowns directly)."""
    grid = grid or y.grid
    return grid.ops.Tn @ y.to_vec()


def spatial_mean(y: VelocityField):
    """Component-wise interior integral of the velocity."""
    ops = y.grid.ops
    nu = (y.grid.nx + 1) * y.grid.ny
    vec = y.to_vec()
    wu = np.dot(ops.Wvec[:nu], vec[:nu])
    wv = np.dot(ops.Wvec[nu:], vec[nu:])
    return np.array([wu, wv])


# ---------------------------------------------------------------------------
# control norm


def _gagliardo_kernel(grid, p):
    """Pairwise kernel w_e w_e' / d(e,e')^p with geodesic loop distance."""
    s = grid.boundary_s
    L = grid.loop_length
    ds = np.abs(s[:, None] - s[None, :])
    d = np.minimum(ds, L - ds)
    np.fill_diagonal(d, 1.0)
    w = grid.boundary_weight
    ker = (w[:, None] * w[None, :]) / d ** p
    np.fill_diagonal(ker, 0.0)
    return ker


def _fourier_matrix(grid):
    """Quadrature DFT onto loop modes exp(2 pi i k s / L), k = 0..n//2."""
    s = grid.boundary_s
    L = grid.loop_length
    kmax = grid.n_boundary // 2
    k = np.arange(kmax + 1)
    F = np.exp(-2j * np.pi * np.outer(k, s) / L) * grid.boundary_weight[None, :]
    mu = (1.0 + k) ** (-0.5)
    mult = np.full(kmax + 1, 2.0)
    mult[0] = 1.0
    return F, mu, mult


def boundary_wp_norm(grid, a_slice, p):
    """Discrete W_p^{1-1/p}(Gamma) surrogate: L_p norm plus Gagliardo seminorm.

    For fractional order s = 1-1/p the Gagliardo exponent 1+sp collapses
    to p, so the double sum uses |a_e - a_e'|^p / d^p.
    """
    ops = grid.ops
    ker = ops.gagliardo_kernel(p)
    lp = np.dot(grid.boundary_weight, np.abs(a_slice) ** p) ** (1.0 / p)
    diff = np.abs(a_slice[:, None] - a_slice[None, :]) ** p
    semi = float((ker * diff).sum()) ** (1.0 / p)
    return lp + semi


def boundary_hminus_half_norm(grid, q_slice):
    """Spectrally weighted H^{-1/2}(Gamma) surrogate via loop Fourier modes."""
    F, mu, mult = grid.ops.fourier_matrix()
    c = F @ q_slice
    return float(np.sqrt((mult * mu * np.abs(c) ** 2).sum() / grid.loop_length))


def hp_norm(control: BoundaryControl):
    """Discrete control norm: three-term sum mirroring the admissible space.

    term 1: time-L2 of the W_p^{1-1/p} surrogate of a;
    term 2: time-L2 of the H^{-1/2} surrogate of the forward difference
            quotient of a;
    term 3: space-time L2 norm of b.
    """
    grid, tg = control.grid, control.time_grid
    if control.a.shape[0] < 2:
        raise ValueError("hp_norm needs at least two time slices of a")
    p = control.p_exponent
    dt = tg.dt
    theta = np.full(tg.nt + 1, dt)
    theta[0] *= 0.5
    theta[-1] *= 0.5

    sq1 = sum(theta[k] * boundary_wp_norm(grid, control.a[k], p) ** 2
              for k in range(tg.nt + 1))
    term1 = np.sqrt(sq1)

    da = (control.a[1:] - control.a[:-1]) / dt
    sq2 = sum(dt * boundary_hminus_half_norm(grid, da[k]) ** 2 for k in range(tg.nt))
    term2 = np.sqrt(sq2)

    bsq = (control.b ** 2) @ grid.boundary_weight
    term3 = np.sqrt(float(np.dot(theta, bsq)))
    return float(term1 + term2 + term3)


# ---------------------------------------------------------------------------
# snapshot format: one-line JSON header then raw little-endian float64


def write_snapshot(path, kind, grid, t, arrays):
    header = {"kind": kind, "nx": grid.nx, "ny": grid.ny,
              "Lx": grid.Lx, "Ly": grid.Ly, "t": float(t)}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_snapshot(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    return header, raw


def save_velocity(path, y: VelocityField, t=0.0):
    write_snapshot(path, "velocity", y.grid, t, [y.u, y.v])


def load_velocity(path, grid: Grid):
    header, raw = read_snapshot(path)
    if (header["nx"], header["ny"]) != (grid.nx, grid.ny):
        raise ValueError("snapshot grid %r does not match" % ((header["nx"], header["ny"]),))
    nu = (grid.nx + 1) * grid.ny
    u = raw[:nu].reshape(grid.shape_u)
    v = raw[nu:].reshape(grid.shape_v)
    return VelocityField(grid, u.copy(), v.copy()), header["t"]


def save_pressure(path, p: PressureField, t=0.0):
    write_snapshot(path, "pressure", p.grid, t, [p.q])


def load_pressure(path, grid: Grid):
    header, raw = read_snapshot(path)
    return PressureField(grid, raw.reshape(grid.shape_p).copy()), header["t"]
