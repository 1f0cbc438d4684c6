"""Structural identities of the assembled operators.

These are the load-bearing properties: symmetry of the viscous form, exact
skew-reduction of the advection quadratic form, the advection cross
identity, and the wall telescoping that makes linear shear profiles exact.
"""

import numpy as np
import pytest

from slipctl.fields import VelocityField
from slipctl.mesh import build_grid
from slipctl.state_solver import shear_oracle
from slipctl.mesh import TimeGrid


@pytest.fixture
def grid():
    return build_grid(7, 5, 1.2, 0.8)


def test_strain_form_symmetric_psd(grid):
    ops = grid.ops
    A = ops.A_strain
    assert abs(A - A.T).max() == 0.0
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.standard_normal(ops.N)
        assert x @ (A @ x) >= -1e-12


def test_divergence_matrix_matches_field_op(grid):
    ops = grid.ops
    rng = np.random.default_rng(1)
    y = VelocityField(grid, rng.standard_normal(grid.shape_u),
                      rng.standard_normal(grid.shape_v))
    from slipctl.fields import divergence
    assert np.allclose((ops.Dmat @ y.to_vec()).reshape(grid.shape_p), divergence(y))


def test_normal_trace_roundtrip(grid):
    ops = grid.ops
    rng = np.random.default_rng(2)
    a = rng.standard_normal(grid.n_boundary)
    assert np.allclose(ops.Tn @ (ops.Mbc @ a), a)


def test_advection_cross_identity(grid):
    ops = grid.ops
    rng = np.random.default_rng(3)
    for _ in range(4):
        w = rng.standard_normal(ops.N)
        y = rng.standard_normal(ops.N)
        K = ops.adv_matrix(w)
        assert np.abs(K @ y - ops.apply_adv_cross(y, w)).max() < 1e-13
        lam = rng.standard_normal(ops.N)
        X = ops.adv_cross(y)
        assert np.abs(X.T @ lam - ops.apply_adv_cross_T(y, lam)).max() < 1e-13


def test_advection_energy_reduces_to_boundary_flux(grid):
    ops = grid.ops
    rng = np.random.default_rng(4)
    for _ in range(4):
        w = rng.standard_normal(ops.N)
        y = rng.standard_normal(ops.N)
        K = ops.adv_matrix(w)
        S = ops.adv_boundary_matrix(w)
        assert abs(y @ (K @ y) - 0.5 * y @ (S @ y)) < 1e-10


def test_shear_profile_is_exact_steady_state(grid):
    """The wall stencils telescope so the slip-consistent linear profile
    annihilates the steady residual at every free unknown."""
    tg = TimeGrid(1.0, 2)
    alpha = 1.3
    y, ctrl, fric = shear_oracle(grid, tg, c1=0.37, c2=2.1, alpha_value=alpha)
    ops = grid.ops
    yv = y.to_vec()
    resid = (ops.A_strain @ yv + ops.fric_matrix(fric.alpha[0]) @ yv
             + ops.adv_matrix(yv) @ yv - ops.b_load(ctrl.b[0]))
    assert np.abs(resid[ops.free_idx]).max() < 1e-12


def _one_sided_pad(diff):
    """Extend centered differences to the walls by copying the nearest row."""
    return np.concatenate([diff[:1], diff, diff[-1:]], axis=0)


def test_strain_matrices_match_hand_stencils(grid):
    """Independent slicing-based evaluation of every strain sample."""
    rng = np.random.default_rng(9)
    from slipctl.fields import VelocityField, strain_tensor
    y = VelocityField(grid, rng.standard_normal(grid.shape_u),
                      rng.standard_normal(grid.shape_v))
    d11, d22, d12 = strain_tensor(y)
    hx, hy = grid.hx, grid.hy
    u, v = y.u, y.v
    assert np.allclose(d11, (u[1:, :] - u[:-1, :]) / hx)
    assert np.allclose(d22, (v[:, 1:] - v[:, :-1]) / hy)
    # vertex samples: centered inside, nearest-stencil copies on the walls
    dyu = _one_sided_pad(((u[:, 1:] - u[:, :-1]) / hy).T).T
    dxv = _one_sided_pad((v[1:, :] - v[:-1, :]) / hx)
    assert np.allclose(d12, 0.5 * (dyu + dxv))


def test_quadrature_weights_integrate_constants(grid):
    ops = grid.ops
    ones_u = VelocityField(grid, np.ones(grid.shape_u), np.zeros(grid.shape_v))
    area = grid.Lx * grid.Ly
    assert np.dot(ops.Wvec, ones_u.to_vec() ** 2) == pytest.approx(area, rel=1e-14)
    assert ops.w_cell.sum() == pytest.approx(area, rel=1e-14)
    assert ops.w_vert.sum() == pytest.approx(area, rel=1e-14)


def test_step_solver_residual_guard(grid):
    ops = grid.ops
    rng = np.random.default_rng(5)
    from slipctl.operators import StepSolver
    step = StepSolver(ops, 0.05, 1.0, np.ones(grid.n_boundary),
                      rng.standard_normal(ops.N))
    a = rng.standard_normal(grid.n_boundary)
    a -= (a @ grid.boundary_weight) / grid.loop_length
    rhs = rng.standard_normal(ops.N)
    y, p = step.solve(rhs, a)
    assert np.abs(ops.Tn @ y - a).max() < 1e-13
    assert np.abs(ops.Dmat @ y).max() < 1e-9
    assert abs(p.sum() * grid.cell_area) < 1e-9
