"""Forward state solver: semi-implicit slip-Stokes stepping.

Each step freezes the advecting velocity at the previous slice and solves
one linear saddle-point system with the wall-normal faces set from the
injection-suction data.  The step operator is assembled from the symmetric
strain form and the skew-symmetrized advection, so the scheme satisfies a
discrete energy identity exactly; energy_identity_residual evaluates it
term by term.
"""

import hashlib

import numpy as np

from .errors import SolverDivergence
from .fields import (BoundaryControl, FrictionField, PressureField,
                     StateTrajectory, VelocityField, divergence,
                     hp_norm, l2_norm, normal_trace)
from .operators import StepSolver

DIV_TOL = 1e-10


class StateProblem:
    """Data of one forward solve: grid, time grid, initial state, controls."""

    def __init__(self, grid, time_grid, y0: VelocityField, controls: BoundaryControl,
                 friction: FrictionField = None, nu=1.0, validate=True):
        self.grid = grid
        self.time_grid = time_grid
        self.y0 = y0
        self.controls = controls
        self.friction = friction if friction is not None else FrictionField.constant(grid, time_grid)
        self.nu = float(nu)
        if validate:
            self.validate()

    def validate(self):
        scale = max(1.0, float(np.abs(self.y0.u).max()), float(np.abs(self.y0.v).max()))
        div0 = np.abs(divergence(self.y0)).max()
        if div0 > DIV_TOL * scale:
            raise ValueError("initial velocity is not divergence-free: %.3e" % div0)
        tr = normal_trace(self.y0)
        mism = np.abs(tr - self.controls.a[0]).max()
        if mism > 1e-9 * scale:
            raise ValueError("initial normal trace does not match a(0): %.3e" % mism)
        self.controls.check_flux()
        n = hp_norm(self.controls)
        if n > self.controls.radius * (1 + 1e-9):
            raise ValueError("controls leave the admissible ball: %.3e > %.3e"
                             % (n, self.controls.radius))

    def content_hash(self):
        h = hashlib.sha256()
        h.update(repr(self.grid.key()).encode())
        h.update(repr((self.time_grid.T, self.time_grid.nt, self.nu)).encode())
        for arr in (self.y0.u, self.y0.v, self.controls.a, self.controls.b,
                    self.friction.alpha):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def stokes_slip_solve(grid, advecting: VelocityField, y_prev: VelocityField,
                      a_next, b_next, alpha_next, dt, nu=1.0):
    """One implicit step of the linearized (Picard) slip system."""
    ops = grid.ops
    step = StepSolver(ops, dt, nu, np.asarray(alpha_next, dtype=float),
                      advecting.to_vec())
    rhs = ops.Wvec * y_prev.to_vec() / dt + ops.b_load(np.asarray(b_next, dtype=float))
    y_vec, p = step.solve(rhs, np.asarray(a_next, dtype=float))
    return (VelocityField.from_vec(grid, y_vec),
            PressureField(grid, p.reshape(grid.shape_p), mean_zero=True))


def solve_state(problem: StateProblem) -> StateTrajectory:
    """March the state forward; the full trajectory is kept for the adjoint."""
    g, tg = problem.grid, problem.time_grid
    ops = g.ops
    ctrl, fric = problem.controls, problem.friction
    ys = [problem.y0.copy()]
    ps = []
    y_prev = problem.y0
    for k in range(1, tg.nt + 1):
        try:
            y_k, p_k = stokes_slip_solve(g, y_prev, y_prev, ctrl.a[k], ctrl.b[k],
                                         fric.alpha[k], tg.dt, problem.nu)
        except SolverDivergence as exc:
            raise SolverDivergence("state step %d: %s" % (k, exc))
        dv = np.abs(divergence(y_k)).max()
        if dv > 1e-9 * max(1.0, l2_norm(y_k)):
            raise SolverDivergence("state step %d: divergence %.3e" % (k, dv))
        ys.append(y_k)
        ps.append(p_k)
        y_prev = y_k
    return StateTrajectory(g, tg, ys, ps, config_hash=problem.content_hash())


def energy_identity_terms(trajectory: StateTrajectory, problem: StateProblem, k):
    """Named terms of the discrete energy balance over step k (1-based).

    Interior terms are quadratures of the solution (kinetic increment,
    numerical dissipation, strain and friction dissipation, advective
    boundary flux, slip work, pressure work); the boundary supply collects
    the work done through the wall-normal faces.  Their sum vanishes for
    the implemented scheme up to the linear-solve residual.
    """
    g, tg = trajectory.grid, trajectory.time_grid
    ops = g.ops
    dt = tg.dt
    y = trajectory.velocities[k].to_vec()
    yo = trajectory.velocities[k - 1].to_vec()
    p = trajectory.pressures[k - 1].q.ravel()
    w_adv = yo
    alpha = problem.friction.alpha[k]
    b = problem.controls.b[k]

    W = ops.Wvec
    kinetic = (np.dot(W, y * y) - np.dot(W, yo * yo)) / (2 * dt)
    numdiss = np.dot(W, (y - yo) ** 2) / (2 * dt)
    strain = problem.nu * np.dot(y, ops.A_strain @ y)
    fric_mat = ops.fric_matrix(alpha)
    friction = np.dot(y, fric_mat @ y)
    Smat = ops.adv_boundary_matrix(w_adv)
    adv_flux = 0.5 * np.dot(y, Smat @ y)
    Gp = -(g.cell_area) * (ops.Dmat.T @ p)
    pressure_work = np.dot(y, Gp)
    load = ops.b_load(b)
    slip_work = -np.dot(y, load)

    Kmat = ops.adv_matrix(w_adv)
    R = (W * (y - yo) / dt + problem.nu * (ops.A_strain @ y) + fric_mat @ y
         + Kmat @ y + Gp - load)
    C = ops.cons_idx
    boundary_supply = -np.dot(y[C], R[C])

    terms = {
        "kinetic_increment": kinetic,
        "numerical_dissipation": numdiss,
        "strain_dissipation": strain,
        "friction_dissipation": friction,
        "advective_boundary_flux": adv_flux,
        "pressure_work": pressure_work,
        "slip_work": slip_work,
        "boundary_supply": boundary_supply,
    }
    terms["imbalance"] = sum(terms.values())
    return terms


def energy_identity_residual(trajectory: StateTrajectory, problem: StateProblem):
    """Per-step relative imbalance of the discrete energy identity."""
    out = np.zeros(trajectory.time_grid.nt)
    for k in range(1, trajectory.time_grid.nt + 1):
        terms = energy_identity_terms(trajectory, problem, k)
        imbalance = terms.pop("imbalance")
        scale = max(max(abs(v) for v in terms.values()), 1e-30)
        out[k - 1] = abs(imbalance) / scale
    return out


def trajectory_sup_l2(trajectory: StateTrajectory):
    """max over time of the velocity L2 norm (C([0,T];L2) surrogate)."""
    return max(l2_norm(y) for y in trajectory.velocities)


def energy_bound_report(problem: StateProblem, trajectory: StateTrajectory):
    """Measured quantities of the a-priori energy bound.

    Returns the left side (sup kinetic + strain + friction dissipation
    accumulated in time) and the data size (initial energy + control norm),
    from which a stability constant can be fitted across control scalings.
    """
    g, tg = problem.grid, problem.time_grid
    ops = g.ops
    dt = tg.dt
    sup_sq = max(l2_norm(y) ** 2 for y in trajectory.velocities)
    diss = 0.0
    fric = 0.0
    for k in range(1, tg.nt + 1):
        yv = trajectory.velocities[k].to_vec()
        diss += dt * np.dot(yv, ops.A_strain @ yv)
        fr = ops.fric_matrix(problem.friction.alpha[k])
        fric += dt * np.dot(yv, fr @ yv)
    lhs = sup_sq + diss + fric
    hp = hp_norm(problem.controls)
    rhs_base = l2_norm(problem.y0) ** 2 + hp ** 2 + 1.0
    return {"lhs": lhs, "data": rhs_base, "hp": hp}


def save_trajectory(directory, trajectory: StateTrajectory, cadence=1):
    """Persist a trajectory as snapshot files plus a JSON manifest."""
    import json
    import os
    from .fields import save_pressure, save_velocity
    os.makedirs(directory, exist_ok=True)
    g, tg = trajectory.grid, trajectory.time_grid
    times = tg.times()
    saved = []
    for k in range(tg.nt + 1):
        if k % cadence and k != tg.nt:
            continue
        name = "y_%04d.snap" % k
        save_velocity(os.path.join(directory, name), trajectory.velocities[k], times[k])
        saved.append(name)
        if k >= 1:
            pname = "p_%04d.snap" % k
            save_pressure(os.path.join(directory, pname),
                          trajectory.pressures[k - 1], times[k])
    manifest = {
        "kind": "trajectory", "nx": g.nx, "ny": g.ny, "Lx": g.Lx, "Ly": g.Ly,
        "T": tg.T, "nt": tg.nt, "cadence": cadence,
        "config_hash": trajectory.config_hash, "velocity_snapshots": saved,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_trajectory(directory):
    """Read back a trajectory directory written with cadence 1."""
    import json
    import os
    from .fields import load_pressure, load_velocity
    from .mesh import TimeGrid, build_grid
    with open(os.path.join(directory, "manifest.json")) as fh:
        man = json.load(fh)
    grid = build_grid(man["nx"], man["ny"], man["Lx"], man["Ly"])
    tg = TimeGrid(man["T"], man["nt"])
    ys, ps = [], []
    for k in range(tg.nt + 1):
        y, _ = load_velocity(os.path.join(directory, "y_%04d.snap" % k), grid)
        ys.append(y)
        if k >= 1:
            p, _ = load_pressure(os.path.join(directory, "p_%04d.snap" % k), grid)
            ps.append(p)
    return StateTrajectory(grid, tg, ys, ps, config_hash=man.get("config_hash", ""))


def shear_oracle(grid, time_grid, c1=0.4, c2=1.0, alpha_value=1.0, nu=1.0):
    """Slip-consistent linear profile and the matching boundary data.

    y = (c1 + c2*x2, 0) solves the steady problem exactly when the normal
    data equals its wall flux and the tangential stress data is computed
    per wall from 2 nu D(y)n.tau + alpha y.tau.
    """
    from .mesh import WALL_BOTTOM, WALL_RIGHT, WALL_TOP, WALL_LEFT
    y = VelocityField.from_functions(grid, lambda X, Y: c1 + c2 * Y, lambda X, Y: 0.0 * X)
    ops = grid.ops
    a_nodes = ops.Tn @ y.to_vec()
    b_nodes = np.empty(grid.n_boundary)
    sl = grid.wall_slice
    b_nodes[sl(WALL_BOTTOM)] = -nu * c2 + alpha_value * c1
    b_nodes[sl(WALL_TOP)] = -nu * c2 - alpha_value * (c1 + c2 * grid.Ly)
    b_nodes[sl(WALL_RIGHT)] = nu * c2
    b_nodes[sl(WALL_LEFT)] = nu * c2
    nsl = time_grid.nt + 1
    controls = BoundaryControl(grid, time_grid,
                               np.tile(a_nodes, (nsl, 1)), np.tile(b_nodes, (nsl, 1)))
    friction = FrictionField.constant(grid, time_grid, alpha_value)
    return y, controls, friction
