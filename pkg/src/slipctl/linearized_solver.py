"""Linearization of the discrete state map around a stored trajectory.

This is the exact Frechet derivative of the stepping scheme
(differentiate-the-scheme): the implicit matrix of each step is reused
verbatim, and the derivative of the frozen-advection term appears as an
explicit coupling of the previous slice against the stored new state.
Gradients computed against this solver are exact at the discrete level.
"""

import numpy as np

from .errors import BaseTrajectoryMissing, SolverDivergence
from .fields import PressureField, StateTrajectory, VelocityField, l2_norm
from .mesh import integrate_boundary
from .operators import StepSolver
from .state_solver import StateProblem, solve_state


class LinearizedProblem:
    """Direction data (f, g) around a base trajectory."""

    def __init__(self, state_problem: StateProblem, base: StateTrajectory, f, g):
        grid, tg = state_problem.grid, state_problem.time_grid
        self.state_problem = state_problem
        self.base = base
        self.f = np.asarray(f, dtype=float)
        self.g = np.asarray(g, dtype=float)
        if self.f.shape != (tg.nt + 1, grid.n_boundary) or self.g.shape != self.f.shape:
            raise ValueError("direction arrays must have shape (nt+1, n_boundary)")
        if base is None or len(base.velocities) != tg.nt + 1:
            raise BaseTrajectoryMissing("complete base trajectory required")
        for k in range(tg.nt + 1):
            flux = integrate_boundary(grid, self.f[k])
            if abs(flux) > 1e-10 * max(1.0, np.abs(self.f).max()):
                raise ValueError("direction f has net flux %.3e at slice %d" % (flux, k))


def solve_linearized(problem: LinearizedProblem):
    """March the tangent system; returns (velocity slices, pressure slices).

    The first slice is identically zero; slice k satisfies z.n = f(t_k)
    strongly and the same implicit operator as the forward step k.
    """
    sp_, base = problem.state_problem, problem.base
    g, tg = sp_.grid, sp_.time_grid
    ops = g.ops
    dt = tg.dt
    z = [VelocityField(g)]
    pis = []
    z_prev = np.zeros(ops.N)
    yvec = base.velocity_vecs()
    for k in range(1, tg.nt + 1):
        step = StepSolver(ops, dt, sp_.nu, sp_.friction.alpha[k], yvec[k - 1])
        rhs = (ops.Wvec * z_prev / dt - ops.apply_adv_cross(yvec[k], z_prev)
               + ops.b_load(problem.g[k]))
        try:
            z_vec, pi = step.solve(rhs, problem.f[k])
        except SolverDivergence as exc:
            raise SolverDivergence("linearized step %d: %s" % (k, exc))
        z.append(VelocityField.from_vec(g, z_vec))
        pis.append(PressureField(g, pi.reshape(g.shape_p), mean_zero=True))
        z_prev = z_vec
    return z, pis


def linearized_step_apply(ops, dt, nu, alpha_nodes, w_adv_vec, y_new_vec, xi_free):
    """One homogeneous tangent step on the free unknowns: xi -> z_f.

    This is the single-step propagator L whose transpose the adjoint sweep
    applies; used directly by the transpose-exactness checks.
    """
    step = StepSolver(ops, dt, nu, alpha_nodes, w_adv_vec)
    xi_full = np.zeros(ops.N)
    xi_full[ops.free_idx] = xi_free
    rhs = ops.Wvec * xi_full / dt - ops.apply_adv_cross(y_new_vec, xi_full)
    z_vec, _ = step.solve(rhs, np.zeros(ops.grid.n_boundary))
    return z_vec[ops.free_idx]


def adjoint_step_apply(ops, dt, nu, alpha_nodes, w_adv_vec, y_new_vec, eta_free):
    """Transpose of linearized_step_apply under the Euclidean pairing."""
    step = StepSolver(ops, dt, nu, alpha_nodes, w_adv_vec)
    lam_full, _ = step.solve_transpose(eta_free)
    out_full = ops.Wvec * lam_full / dt - ops.apply_adv_cross_T(y_new_vec, lam_full)
    return out_full[ops.free_idx]


def gateaux_discrepancy(state_problem: StateProblem, base: StateTrajectory,
                        f, g, eps_list):
    """sup-in-time L2 distance between (y_eps - y)/eps and the tangent z.

    Re-solves the state at each epsilon; the discrepancies must decrease
    with epsilon down to the round-off floor of the re-solve.
    """
    f = np.asarray(f, dtype=float)
    g_arr = np.asarray(g, dtype=float)
    if np.abs(f[0]).max() > 0:
        raise ValueError("direction must leave the initial slice of a unchanged")
    lp = LinearizedProblem(state_problem, base, f, g_arr)
    z, _ = solve_linearized(lp)
    rows = []
    for eps in eps_list:
        ctrl = state_problem.controls.copy()
        ctrl.a = ctrl.a + eps * f
        ctrl.b = ctrl.b + eps * g_arr
        pert = StateProblem(state_problem.grid, state_problem.time_grid,
                            state_problem.y0, ctrl, state_problem.friction,
                            state_problem.nu, validate=False)
        traj = solve_state(pert)
        disc = 0.0
        for k in range(state_problem.time_grid.nt + 1):
            diff = (traj.velocities[k] - base.velocities[k]) * (1.0 / eps) - z[k]
            disc = max(disc, l2_norm(diff))
        rows.append((float(eps), disc))
    return rows, z
