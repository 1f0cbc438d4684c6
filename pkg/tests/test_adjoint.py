import numpy as np
import pytest

from slipctl.adjoint_solver import (AdjointProblem,
                                    adjoint_energy_check,
                                    continuum_normal_kernel, duality_residual,
                                    solve_adjoint)
from slipctl.fields import BoundaryControl, VelocityField, divergence, l2_norm
from slipctl.linearized_solver import (LinearizedProblem, adjoint_step_apply,
                                       linearized_step_apply, solve_linearized)
from slipctl.mesh import TimeGrid, build_grid
from slipctl.operators import StepSolver
from slipctl.state_solver import StateProblem, solve_state
from slipctl.control_opt import random_admissible_control


@pytest.fixture
def setup():
    grid = build_grid(8, 8, 1.0, 1.0)
    tg = TimeGrid(0.5, 8)
    rng = np.random.default_rng(21)
    ctrl = random_admissible_control(grid, tg, rng, amplitude=0.3)
    prob = StateProblem(grid, tg, VelocityField(grid), ctrl, validate=False)
    traj = solve_state(prob)
    return grid, tg, prob, traj


def random_source(grid, tg, seed):
    rng = np.random.default_rng(seed)
    return [VelocityField(grid, rng.standard_normal(grid.shape_u),
                          rng.standard_normal(grid.shape_v))
            for _ in range(tg.nt + 1)]


def test_zero_source_zero_adjoint(setup):
    grid, tg, prob, traj = setup
    U = [VelocityField(grid) for _ in range(tg.nt + 1)]
    adj = solve_adjoint(AdjointProblem(prob, traj, U))
    assert max(l2_norm(p) for p in adj.p) == 0.0
    assert np.abs(adj.kernel_a).max() == 0.0
    assert np.abs(adj.kernel_b).max() == 0.0


def test_linearity_in_source(setup):
    grid, tg, prob, traj = setup
    U = random_source(grid, tg, 1)
    adj1 = solve_adjoint(AdjointProblem(prob, traj, U))
    U3 = [u * 3.0 for u in U]
    adj3 = solve_adjoint(AdjointProblem(prob, traj, U3))
    for k in range(tg.nt + 1):
        assert l2_norm(adj3.p[k] - adj1.p[k] * 3.0) < 1e-10 * max(1.0, l2_norm(adj3.p[k]))
    assert np.allclose(adj3.kernel_a, 3.0 * adj1.kernel_a, atol=1e-12)


def test_structural_invariants(setup):
    grid, tg, prob, traj = setup
    adj = solve_adjoint(AdjointProblem(prob, traj, random_source(grid, tg, 2)))
    ops = grid.ops
    assert l2_norm(adj.p[tg.nt]) == 0.0                      # terminal condition
    for k in range(tg.nt):
        assert np.abs(ops.Tn @ adj.p[k].to_vec()).max() == 0.0
        assert np.abs(divergence(adj.p[k])).max() < 1e-9
        assert abs(adj.pi[k].q.sum() * grid.cell_area) < 1e-10


def test_transpose_exactness_single_step(setup):
    grid, tg, prob, traj = setup
    ops = grid.ops
    yk = traj.velocity_vecs()
    rng = np.random.default_rng(3)
    alpha = prob.friction.alpha[4]
    for _ in range(20):
        xi = rng.standard_normal(ops.free_idx.size)
        eta = rng.standard_normal(ops.free_idx.size)
        lhs = np.dot(linearized_step_apply(ops, tg.dt, 1.0, alpha, yk[3], yk[4], xi), eta)
        rhs = np.dot(xi, adjoint_step_apply(ops, tg.dt, 1.0, alpha, yk[3], yk[4], eta))
        assert abs(lhs - rhs) <= 1e-10 * (abs(lhs) + abs(rhs) + 1e-30)


def test_duality_relation(setup):
    grid, tg, prob, traj = setup
    for seed in range(3):
        d = random_admissible_control(grid, tg, np.random.default_rng(40 + seed),
                                      amplitude=1.0)
        z, _ = solve_linearized(LinearizedProblem(prob, traj, d.a, d.b))
        U = random_source(grid, tg, 50 + seed)
        adj = solve_adjoint(AdjointProblem(prob, traj, U))
        res = duality_residual(z, adj, U, d.a, d.b, base_hash=traj.config_hash)
        assert res <= 1e-9


def test_duality_zero_over_zero_guarded(setup):
    grid, tg, prob, traj = setup
    zero_f = np.zeros((tg.nt + 1, grid.n_boundary))
    z, _ = solve_linearized(LinearizedProblem(prob, traj, zero_f, zero_f))
    U0 = [VelocityField(grid) for _ in range(tg.nt + 1)]
    adj = solve_adjoint(AdjointProblem(prob, traj, U0))
    assert duality_residual(z, adj, U0, zero_f, zero_f) == 0.0


def test_duality_base_mismatch_detected(setup):
    grid, tg, prob, traj = setup
    d = random_admissible_control(grid, tg, np.random.default_rng(60), amplitude=1.0)
    z, _ = solve_linearized(LinearizedProblem(prob, traj, d.a, d.b))
    U = random_source(grid, tg, 61)
    adj = solve_adjoint(AdjointProblem(prob, traj, U))
    with pytest.raises(ValueError, match="base"):
        duality_residual(z, adj, U, d.a, d.b, base_hash="deadbeef")


def test_constant_pressure_shift_drops_out(setup):
    """f has zero boundary mean, so shifting the adjoint pressure by a
    constant leaves the boundary pairing unchanged."""
    grid, tg, prob, traj = setup
    d = random_admissible_control(grid, tg, np.random.default_rng(70), amplitude=1.0)
    z, _ = solve_linearized(LinearizedProblem(prob, traj, d.a, d.b))
    U = random_source(grid, tg, 71)
    adj = solve_adjoint(AdjointProblem(prob, traj, U))
    rhs0 = sum(np.dot(adj.kernel_a[k], d.a[k]) + np.dot(adj.kernel_b[k], d.b[k])
               for k in range(1, tg.nt + 1))
    shift = 3.7
    rhs_shifted = rhs0
    for k in range(1, tg.nt + 1):
        # a constant pi shift changes the normal kernel by shift * dt * w_e
        kernel_shift = shift * tg.dt * grid.boundary_weight
        rhs_shifted += np.dot(kernel_shift, d.a[k])
    assert abs(rhs_shifted - rhs0) <= 1e-10 * max(1.0, abs(rhs0))


def test_stokes_semigroup_self_adjoint():
    """Around the null state, the backward adjoint sweep with time-reversed
    source equals the forward solve of the reversed problem."""
    grid = build_grid(8, 8, 1.0, 1.0)
    tg = TimeGrid(0.4, 6)
    ops = grid.ops
    prob = StateProblem(grid, tg, VelocityField(grid), BoundaryControl(grid, tg))
    traj = solve_state(prob)
    U = random_source(grid, tg, 5)
    adj = solve_adjoint(AdjointProblem(prob, traj, U))
    x_prev = np.zeros(ops.N)
    for m in range(1, tg.nt + 1):
        step = StepSolver(ops, tg.dt, 1.0, prob.friction.alpha[0], np.zeros(ops.N))
        rhs = ops.Wvec * x_prev / tg.dt + ops.Wvec * U[tg.nt + 1 - m].to_vec()
        x, _ = step.solve(rhs, np.zeros(grid.n_boundary))
        ref = max(1.0, l2_norm(adj.p[tg.nt - m]))
        assert l2_norm(VelocityField.from_vec(grid, x) - adj.p[tg.nt - m]) <= 1e-9 * ref
        x_prev = x


def test_energy_check_homogeneous_and_stable(setup):
    grid, tg, prob, traj = setup
    U = random_source(grid, tg, 6)
    adj = solve_adjoint(AdjointProblem(prob, traj, U))
    r1 = adjoint_energy_check(adj, U, prob.friction)
    U2 = [u * 2.0 for u in U]
    adj2 = solve_adjoint(AdjointProblem(prob, traj, U2))
    r2 = adjoint_energy_check(adj2, U2, prob.friction)
    assert r1 == pytest.approx(r2, rel=1e-9)
    zeroU = [VelocityField(grid) for _ in range(tg.nt + 1)]
    adj0 = solve_adjoint(AdjointProblem(prob, traj, zeroU))
    assert adjoint_energy_check(adj0, zeroU, prob.friction) == 0.0

    ratios = []
    for seed in range(10):
        Us = random_source(grid, tg, 100 + seed)
        adjs = solve_adjoint(AdjointProblem(prob, traj, Us))
        ratios.append(adjoint_energy_check(adjs, Us, prob.friction))
    assert max(ratios) <= 3.0 * min(ratios)


def test_normal_kernel_consistent_with_field_formula(setup):
    """The exact-transpose kernel agrees with the direct discretization of
    the normal-component density at discretization order."""
    grid, tg, prob, traj = setup
    U = []
    for k in range(tg.nt + 1):
        U.append(VelocityField.from_functions(
            grid, lambda X, Y: np.sin(2 * np.pi * X) * np.cos(np.pi * Y),
            lambda X, Y: np.cos(np.pi * X) * np.sin(2 * np.pi * Y)))
    adj = solve_adjoint(AdjointProblem(prob, traj, U))
    k = tg.nt // 2
    direct = continuum_normal_kernel(adj, traj, k)
    kernel = adj.normal_kernel[k]
    scale = np.abs(direct).max() + 1e-30
    assert np.abs(kernel - direct).max() <= 0.1 * scale


def test_export_kernels_csv(tmp_path, setup):
    grid, tg, prob, traj = setup
    adj = solve_adjoint(AdjointProblem(prob, traj, random_source(grid, tg, 7)))
    adj.export_kernels_csv(str(tmp_path / "kernels"))
    for name in ("kernels_normal.csv", "kernels_tangent.csv"):
        lines = (tmp_path / name).read_text().strip().splitlines()
        assert lines[0] == "t,s,value"
        assert len(lines) == 1 + tg.nt * grid.n_boundary
