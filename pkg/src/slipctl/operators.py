"""Assembled sparse operators for the staggered slip discretization.

Everything downstream (state, linearized and adjoint solves, energy
identities, duality pairings) is expressed through the matrices built here:

* the viscous-plus-friction operator is a symmetric quadrature form
  2 nu int D(y):D(psi) + int_Gamma alpha (y.tau)(psi.tau), so discrete
  energy balances hold by matrix symmetry, not by cancellation of
  truncation errors;
* advection is the skew-symmetrized form
  0.5[(w.grad y, psi) - (w.grad psi, y)] + 0.5 int_Gamma (w.n)(y.psi),
  whose quadratic form reduces exactly to the boundary flux term;
* the pressure gradient is minus the transpose of the cell divergence
  against the quadrature weights, so pressure work telescopes against the
  incompressibility constraint.

Wall-normal face velocities are constrained degrees of freedom, set
strongly from the normal boundary data.  One-sided stencils at the walls
are chosen so that the strain quadrature telescopes exactly to the
extrapolated boundary traces; this makes profiles linear in the
wall-normal coordinate exact steady states of the stepper.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverDivergence

LINEAR_RESIDUAL_TOL = 1e-9


class DiscreteOperators:
    """Per-grid operator cache; built once, shared read-only."""

    def __init__(self, grid):
        self.grid = grid
        nx, ny = grid.nx, grid.ny
        self.NU = (nx + 1) * ny
        self.NV = nx * (ny + 1)
        self.N = self.NU + self.NV
        self.ncell = nx * ny
        self.nvert = (nx + 1) * (ny + 1)
        self._build_indexing()
        self._build_weights()
        self._build_divergence()
        self._build_gradients()
        self._build_traces()
        self._build_advection_stencils()
        self.A_strain = self._assemble_strain_form()
        self._gagliardo = {}
        self._fourier = None

    # -- indexing ----------------------------------------------------------

    def _build_indexing(self):
        nx, ny = self.grid.nx, self.grid.ny
        self._iu = np.arange(self.NU).reshape(nx + 1, ny)
        self._iv = self.NU + np.arange(self.NV).reshape(nx, ny + 1)
        constrained = np.zeros(self.N, dtype=bool)
        constrained[self._iu[0, :]] = True
        constrained[self._iu[nx, :]] = True
        constrained[self._iv[:, 0]] = True
        constrained[self._iv[:, ny]] = True
        self.constrained = constrained
        self.free = ~constrained
        self.free_idx = np.flatnonzero(self.free)
        self.cons_idx = np.flatnonzero(constrained)

    def iu(self, i, j):
        return self._iu[i, j]

    def iv(self, i, j):
        return self._iv[i, j]

    # -- quadrature weights --------------------------------------------------

    def _build_weights(self):
        g = self.grid
        nx, ny = g.nx, g.ny
        area = g.cell_area
        W = np.full(self.N, area)
        W[self._iu[0, :]] *= 0.5
        W[self._iu[nx, :]] *= 0.5
        W[self._iv[:, 0]] *= 0.5
        W[self._iv[:, ny]] *= 0.5
        self.Wvec = W
        self.w_cell = np.full(self.ncell, area)
        fx = np.ones(nx + 1); fx[0] = fx[-1] = 0.5
        fy = np.ones(ny + 1); fy[0] = fy[-1] = 0.5
        self.w_vert = (area * np.outer(fx, fy)).ravel()
        self.w_gamma = g.boundary_weight

    # -- divergence ----------------------------------------------------------

    def _build_divergence(self):
        g = self.grid
        nx, ny = g.nx, g.ny
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        rows = (ii * ny + jj).ravel()
        data, rr, cc = [], [], []
        for col, coef in (
                (self._iu[ii + 1, jj], 1.0 / g.hx), (self._iu[ii, jj], -1.0 / g.hx),
                (self._iv[ii, jj + 1], 1.0 / g.hy), (self._iv[ii, jj], -1.0 / g.hy)):
            rr.append(rows); cc.append(col.ravel()); data.append(np.full(rows.size, coef))
        self.Dmat = sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(rr), np.concatenate(cc))),
            shape=(self.ncell, self.N))

    # -- gradient / strain sample matrices ------------------------------------

    def _build_gradients(self):
        g = self.grid
        nx, ny, hx, hy = g.nx, g.ny, g.hx, g.hy

        # du/dx at cell centers
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        rows = (ii * ny + jj).ravel()
        self.Gxu_cell = sp.csr_matrix(
            (np.concatenate([np.full(rows.size, 1 / hx), np.full(rows.size, -1 / hx)]),
             (np.concatenate([rows, rows]),
              np.concatenate([self._iu[ii + 1, jj].ravel(), self._iu[ii, jj].ravel()]))),
            shape=(self.ncell, self.N))
        # dv/dy at cell centers
        self.Gyv_cell = sp.csr_matrix(
            (np.concatenate([np.full(rows.size, 1 / hy), np.full(rows.size, -1 / hy)]),
             (np.concatenate([rows, rows]),
              np.concatenate([self._iv[ii, jj + 1].ravel(), self._iv[ii, jj].ravel()]))),
            shape=(self.ncell, self.N))

        # du/dy at vertices; one row per vertex (i, j), j = 0..ny
        vi, vj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="ij")
        vrows = (vi * (ny + 1) + vj).ravel()
        jhi = np.clip(vj, 1, ny - 1)          # wall rows copy the nearest interior stencil
        chi = self._iu[vi, jhi]
        clo = self._iu[vi, jhi - 1]
        self.Gyu_vert = sp.csr_matrix(
            (np.concatenate([np.full(vrows.size, 1 / hy), np.full(vrows.size, -1 / hy)]),
             (np.concatenate([vrows, vrows]),
              np.concatenate([chi.ravel(), clo.ravel()]))),
            shape=(self.nvert, self.N))
        # dv/dx at vertices
        ihi = np.clip(vi, 1, nx - 1)
        chi = self._iv[ihi, vj]
        clo = self._iv[ihi - 1, vj]
        self.Gxv_vert = sp.csr_matrix(
            (np.concatenate([np.full(vrows.size, 1 / hx), np.full(vrows.size, -1 / hx)]),
             (np.concatenate([vrows, vrows]),
              np.concatenate([chi.ravel(), clo.ravel()]))),
            shape=(self.nvert, self.N))

    def _assemble_strain_form(self):
        """Symmetric PSD matrix of the form 2 int D(y):D(psi) dx."""
        mix = self.Gyu_vert + self.Gxv_vert
        A = 2.0 * (self.Gxu_cell.T @ sp.diags(self.w_cell) @ self.Gxu_cell)
        A = A + 2.0 * (self.Gyv_cell.T @ sp.diags(self.w_cell) @ self.Gyv_cell)
        A = A + mix.T @ sp.diags(self.w_vert) @ mix
        return A.tocsr()

    # -- boundary traces -------------------------------------------------------

    def _build_traces(self):
        g = self.grid
        nx, ny = g.nx, g.ny
        ngb = g.n_boundary
        # normal trace: one signed face unknown per node
        rows, cols, data = [], [], []

        def put(r, c, v):
            rows.append(r); cols.append(c); data.append(v)

        for k in range(nx):                       # bottom: y.n = -v
            put(k, self._iv[k, 0], -1.0)
        off = nx
        for k in range(ny):                       # right: y.n = +u
            put(off + k, self._iu[nx, k], 1.0)
        off = nx + ny
        for k in range(nx):                       # top: y.n = +v
            put(off + k, self._iv[nx - 1 - k, ny], 1.0)
        off = 2 * nx + ny
        for k in range(ny):                       # left: y.n = -u
            put(off + k, self._iu[0, ny - 1 - k], -1.0)
        self.Tn = sp.csr_matrix((data, (rows, cols)), shape=(ngb, self.N))
        self.Mbc = self.Tn.T.tocsr()              # Tn @ Mbc = identity

        # tangential trace: linear wall extrapolation averaged to midpoints
        rows, cols, data = [], [], []
        for k in range(nx):                       # bottom, tau = (+1, 0)
            for i, s in ((k, 1.0), (k + 1, 1.0)):
                put(k, self._iu[i, 0], 0.75 * s)
                put(k, self._iu[i, 1], -0.25 * s)
        off = nx
        for k in range(ny):                       # right, tau = (0, +1)
            for j in (k, k + 1):
                put(off + k, self._iv[nx - 1, j], 0.75)
                put(off + k, self._iv[nx - 2, j], -0.25)
        off = nx + ny
        for k in range(nx):                       # top, tau = (-1, 0)
            i0 = nx - 1 - k
            for i in (i0, i0 + 1):
                put(off + k, self._iu[i, ny - 1], -0.75)
                put(off + k, self._iu[i, ny - 2], 0.25)
        off = 2 * nx + ny
        for k in range(ny):                       # left, tau = (0, -1)
            j0 = ny - 1 - k
            for j in (j0, j0 + 1):
                put(off + k, self._iv[0, j], -0.75)
                put(off + k, self._iv[1, j], 0.25)
        self.Ttau = sp.csr_matrix((data, (rows, cols)), shape=(ngb, self.N))

    # -- advection -------------------------------------------------------------

    def _build_advection_stencils(self):
        g = self.grid
        nx, ny, hx, hy = g.nx, g.ny, g.hx, g.hy
        rows, cols, data = [], [], []

        def put(r, cs, vs):
            for c, v in zip(cs, vs):
                rows.append(r); cols.append(c); data.append(v)

        # Gx: x-derivative of each component at its own points
        for i in range(nx + 1):
            for j in range(ny):
                r = self._iu[i, j]
                if i == 0:
                    put(r, [self._iu[1, j], self._iu[0, j]], [1 / hx, -1 / hx])
                elif i == nx:
                    put(r, [self._iu[nx, j], self._iu[nx - 1, j]], [1 / hx, -1 / hx])
                else:
                    put(r, [self._iu[i + 1, j], self._iu[i - 1, j]], [0.5 / hx, -0.5 / hx])
        for i in range(nx):
            for j in range(ny + 1):
                r = self._iv[i, j]
                if i == 0:
                    put(r, [self._iv[1, j], self._iv[0, j]], [1 / hx, -1 / hx])
                elif i == nx - 1:
                    put(r, [self._iv[nx - 1, j], self._iv[nx - 2, j]], [1 / hx, -1 / hx])
                else:
                    put(r, [self._iv[i + 1, j], self._iv[i - 1, j]], [0.5 / hx, -0.5 / hx])
        self.Gx = sp.csr_matrix((data, (rows, cols)), shape=(self.N, self.N))

        rows, cols, data = [], [], []
        for i in range(nx + 1):
            for j in range(ny):
                r = self._iu[i, j]
                if j == 0:
                    put(r, [self._iu[i, 1], self._iu[i, 0]], [1 / hy, -1 / hy])
                elif j == ny - 1:
                    put(r, [self._iu[i, ny - 1], self._iu[i, ny - 2]], [1 / hy, -1 / hy])
                else:
                    put(r, [self._iu[i, j + 1], self._iu[i, j - 1]], [0.5 / hy, -0.5 / hy])
        for i in range(nx):
            for j in range(ny + 1):
                r = self._iv[i, j]
                if j == 0:
                    put(r, [self._iv[i, 1], self._iv[i, 0]], [1 / hy, -1 / hy])
                elif j == ny:
                    put(r, [self._iv[i, ny], self._iv[i, ny - 1]], [1 / hy, -1 / hy])
                else:
                    put(r, [self._iv[i, j + 1], self._iv[i, j - 1]], [0.5 / hy, -0.5 / hy])
        self.Gy = sp.csr_matrix((data, (rows, cols)), shape=(self.N, self.N))

        # Px: x-velocity of the advecting field at every unknown's location
        rows, cols, data = [], [], []
        for i in range(nx + 1):
            for j in range(ny):
                r = self._iu[i, j]
                put(r, [r], [1.0])
        for i in range(nx):
            for j in range(ny + 1):
                r = self._iv[i, j]
                if j == 0:
                    put(r, [self._iu[i, 0], self._iu[i + 1, 0]], [0.5, 0.5])
                elif j == ny:
                    put(r, [self._iu[i, ny - 1], self._iu[i + 1, ny - 1]], [0.5, 0.5])
                else:
                    put(r, [self._iu[i, j - 1], self._iu[i + 1, j - 1],
                            self._iu[i, j], self._iu[i + 1, j]], [0.25] * 4)
        self.Px = sp.csr_matrix((data, (rows, cols)), shape=(self.N, self.N))

        rows, cols, data = [], [], []
        for i in range(nx + 1):
            for j in range(ny):
                r = self._iu[i, j]
                if i == 0:
                    put(r, [self._iv[0, j], self._iv[0, j + 1]], [0.5, 0.5])
                elif i == nx:
                    put(r, [self._iv[nx - 1, j], self._iv[nx - 1, j + 1]], [0.5, 0.5])
                else:
                    put(r, [self._iv[i - 1, j], self._iv[i - 1, j + 1],
                            self._iv[i, j], self._iv[i, j + 1]], [0.25] * 4)
        for i in range(nx):
            for j in range(ny + 1):
                r = self._iv[i, j]
                put(r, [r], [1.0])
        self.Py = sp.csr_matrix((data, (rows, cols)), shape=(self.N, self.N))

    def adv_matrix(self, w_vec):
        """Skew-symmetrized advection matrix K(w) in integrated (weighted) form."""
        wx = self.Px @ w_vec
        wy = self.Py @ w_vec
        Nmat = sp.diags(self.Wvec * wx) @ self.Gx + sp.diags(self.Wvec * wy) @ self.Gy
        an = self.w_gamma * (self.Tn @ w_vec)
        S = (self.Tn.T @ sp.diags(an) @ self.Tn
             + self.Ttau.T @ sp.diags(an) @ self.Ttau)
        return (0.5 * (Nmat - Nmat.T) + 0.5 * S).tocsr()

    def apply_adv_cross(self, y_vec, w_vec):
        """Matrix-free X(y) w = K(w) y (derivative of advection in w)."""
        gx_y = self.Gx @ y_vec
        gy_y = self.Gy @ y_vec
        wx = self.Px @ w_vec
        wy = self.Py @ w_vec
        n_wy = self.Wvec * (wx * gx_y + wy * gy_y)
        nt_wy = self.Gx.T @ (self.Wvec * wx * y_vec) + self.Gy.T @ (self.Wvec * wy * y_vec)
        an = self.w_gamma * (self.Tn @ w_vec)
        s_wy = self.Tn.T @ (an * (self.Tn @ y_vec)) + self.Ttau.T @ (an * (self.Ttau @ y_vec))
        return 0.5 * (n_wy - nt_wy) + 0.5 * s_wy

    def apply_adv_cross_T(self, y_vec, lam_vec):
        """Matrix-free X(y)^T lam."""
        gx_y = self.Gx @ y_vec
        gy_y = self.Gy @ y_vec
        x1t = self.Px.T @ (self.Wvec * gx_y * lam_vec) \
            + self.Py.T @ (self.Wvec * gy_y * lam_vec)
        x2t = self.Px.T @ (self.Wvec * y_vec * (self.Gx @ lam_vec)) \
            + self.Py.T @ (self.Wvec * y_vec * (self.Gy @ lam_vec))
        tny = self.w_gamma * (self.Tn @ y_vec)
        tty = self.w_gamma * (self.Ttau @ y_vec)
        xst = self.Tn.T @ (tny * (self.Tn @ lam_vec) + tty * (self.Ttau @ lam_vec))
        return 0.5 * (x1t - x2t) + 0.5 * xst

    def adv_boundary_matrix(self, w_vec):
        """The symmetric boundary-flux part S(w) alone (for energy bookkeeping)."""
        an = self.w_gamma * (self.Tn @ w_vec)
        return (self.Tn.T @ sp.diags(an) @ self.Tn
                + self.Ttau.T @ sp.diags(an) @ self.Ttau).tocsr()

    def adv_cross(self, y_vec):
        """Matrix X(y) with X(y) w = K(w) y: derivative of advection in w."""
        X1 = (sp.diags(self.Wvec * (self.Gx @ y_vec)) @ self.Px
              + sp.diags(self.Wvec * (self.Gy @ y_vec)) @ self.Py)
        X2 = (self.Gx.T @ sp.diags(self.Wvec * y_vec) @ self.Px
              + self.Gy.T @ sp.diags(self.Wvec * y_vec) @ self.Py)
        XS = (self.Tn.T @ sp.diags(self.w_gamma * (self.Tn @ y_vec))
              + self.Ttau.T @ sp.diags(self.w_gamma * (self.Ttau @ y_vec))) @ self.Tn
        return (0.5 * (X1 - X2) + 0.5 * XS).tocsr()

    def fric_matrix(self, alpha_nodes):
        return (self.Ttau.T @ sp.diags(self.w_gamma * alpha_nodes) @ self.Ttau).tocsr()

    @property
    def reduced(self):
        """Free/constrained sub-blocks shared by every step factorization."""
        if not hasattr(self, "_reduced"):
            self._reduced = _ReducedBlocks(self)
        return self._reduced

    def b_load(self, b_nodes):
        """Momentum load of the tangential stress data, integrated form."""
        return self.Ttau.T @ (self.w_gamma * b_nodes)

    def bc_vec(self, a_nodes):
        """Full velocity vector with the wall-normal faces set from a."""
        return self.Mbc @ a_nodes

    # -- control-norm helpers ---------------------------------------------------

    def gagliardo_kernel(self, p):
        if p not in self._gagliardo:
            from .fields import _gagliardo_kernel
            self._gagliardo[p] = _gagliardo_kernel(self.grid, p)
        return self._gagliardo[p]

    def fourier_matrix(self):
        if self._fourier is None:
            from .fields import _fourier_matrix
            self._fourier = _fourier_matrix(self.grid)
        return self._fourier


class _ReducedBlocks:
    """Constant sub-blocks of the step system on the free/constrained split."""

    def __init__(self, ops):
        N = ops.N
        F, C = ops.free_idx, ops.cons_idx
        P_F = sp.csr_matrix((np.ones(F.size), (np.arange(F.size), F)), shape=(F.size, N))
        P_C = sp.csr_matrix((np.ones(C.size), (np.arange(C.size), C)), shape=(C.size, N))
        self.P_F, self.P_C = P_F, P_C
        self.A_s_FF = (P_F @ ops.A_strain @ P_F.T).tocsr()
        self.A_s_FC = (P_F @ ops.A_strain @ P_C.T).tocsr()
        self.GxFF = (P_F @ ops.Gx @ P_F.T).tocsr()
        self.GyFF = (P_F @ ops.Gy @ P_F.T).tocsr()
        self.GxFC = (P_F @ ops.Gx @ P_C.T).tocsr()
        self.GyFC = (P_F @ ops.Gy @ P_C.T).tocsr()
        self.GxCF = (P_C @ ops.Gx @ P_F.T).tocsr()
        self.GyCF = (P_C @ ops.Gy @ P_F.T).tocsr()
        self.TtF = (ops.Ttau @ P_F.T).tocsr()
        self.TtC = (ops.Ttau @ P_C.T).tocsr()
        self.Df = (ops.Dmat @ P_F.T).tocsr()
        self.Dc = (ops.Dmat @ P_C.T).tocsr()
        self.Gf = ((-ops.grid.cell_area) * self.Df.T).tocsr()
        self.ones_c = np.ones((ops.ncell, 1))
        self.mean_row = ops.grid.cell_area * np.ones((1, ops.ncell))
        self._template = None

    def assemble_big(self, A_ff):
        """Bordered saddle matrix; reuses the sparsity template across steps."""
        A = A_ff.tocsc()
        A.sort_indices()
        if self._template is not None:
            indptr, indices, base, amap, pat_indptr, pat_indices = self._template
            if (A.indptr.size == pat_indptr.size
                    and np.array_equal(A.indptr, pat_indptr)
                    and np.array_equal(A.indices, pat_indices)):
                data = base.copy()
                data[amap] = A.data
                return sp.csc_matrix((data, indices, indptr), shape=(indptr.size - 1,
                                                                     indptr.size - 1))
        big = sp.bmat([[A, self.Gf, None],
                       [self.Df, None, self.ones_c],
                       [None, self.mean_row, None]], format="csc")
        big.sort_indices()
        nf = A.shape[0]
        sel = []
        for j in range(nf):
            start, end = big.indptr[j], big.indptr[j + 1]
            rows = big.indices[start:end]
            sel.append(start + np.flatnonzero(rows < nf))
        amap = np.concatenate(sel) if sel else np.empty(0, dtype=np.int64)
        base = big.data.copy()
        self._template = (big.indptr.copy(), big.indices.copy(), base, amap,
                          A.indptr.copy(), A.indices.copy())
        return big


class StepSolver:
    """One implicit slip-Stokes step: bordered saddle system and its LU.

    Solves, for the free face unknowns y_f, pressure p and a mean
    multiplier mu,

        (W/dt + nu*A_strain + Fric(alpha) + K(w)) y + G p = rhs_mom
        div y + mu = 0 per cell,   sum(p) * cell_area = 0

    with the wall-normal faces of y fixed to the supplied data.  The same
    factorization solves the transposed system for adjoint sweeps.
    """

    def __init__(self, ops, dt, nu, alpha_nodes, w_adv_vec):
        self.ops = ops
        self.dt = dt
        rb = ops.reduced
        F, C = ops.free_idx, ops.cons_idx
        self.F, self.C = F, C
        self.nf = F.size

        wx = ops.Px @ w_adv_vec
        wy = ops.Py @ w_adv_vec
        Wwx = ops.Wvec * wx
        Wwy = ops.Wvec * wy
        an = ops.w_gamma * (ops.Tn @ w_adv_vec)
        fric = ops.w_gamma * alpha_nodes

        K1 = sp.diags(Wwx[F]) @ rb.GxFF + sp.diags(Wwy[F]) @ rb.GyFF
        bnd_FF = rb.TtF.T @ sp.diags(0.5 * an + fric) @ rb.TtF
        A_ff = (sp.diags(ops.Wvec[F] / dt) + nu * rb.A_s_FF
                + 0.5 * (K1 - K1.T) + bnd_FF)

        K1_fc = sp.diags(Wwx[F]) @ rb.GxFC + sp.diags(Wwy[F]) @ rb.GyFC
        K2_fc = (sp.diags(Wwx[C]) @ rb.GxCF + sp.diags(Wwy[C]) @ rb.GyCF).T
        self.M_fc = (nu * rb.A_s_FC + 0.5 * (K1_fc - K2_fc)
                     + rb.TtF.T @ sp.diags(0.5 * an + fric) @ rb.TtC).tocsr()
        self.Dc = rb.Dc
        big = rb.assemble_big(A_ff)
        try:
            self.lu = spla.splu(big)
        except RuntimeError as exc:
            raise SolverDivergence("step matrix factorization failed: %s" % exc)
        self._big = big

    def _check(self, sol, rhs):
        res = self._big @ sol - rhs
        scale = max(np.linalg.norm(rhs), 1e-30)
        rel = np.linalg.norm(res) / scale
        if not np.isfinite(rel) or rel > LINEAR_RESIDUAL_TOL:
            raise SolverDivergence("linear step residual %.3e above tolerance" % rel)

    def solve(self, rhs_mom_full, a_nodes):
        """Forward/linearized step.  rhs_mom_full excludes boundary coupling."""
        ops = self.ops
        y_c = (ops.Mbc @ a_nodes)[self.C]
        rhs_f = rhs_mom_full[self.F] - self.M_fc @ y_c
        rhs_div = -(self.Dc @ y_c)
        rhs = np.concatenate([rhs_f, rhs_div, [0.0]])
        sol = self.lu.solve(rhs)
        self._check(sol, rhs)
        y = np.empty(ops.N)
        y[self.F] = sol[:self.nf]
        y[self.C] = y_c
        p = sol[self.nf:self.nf + ops.ncell]
        return y, p

    def solve_transpose(self, rhs_free):
        """Adjoint step: solve Big^T (lam, q, eta) = (rhs_free, 0, 0)."""
        ops = self.ops
        rhs = np.concatenate([rhs_free, np.zeros(ops.ncell), [0.0]])
        sol = self.lu.solve(rhs, trans="T")
        res = self._big.T @ sol - rhs
        scale = max(np.linalg.norm(rhs), 1e-30)
        rel = np.linalg.norm(res) / scale
        if not np.isfinite(rel) or rel > LINEAR_RESIDUAL_TOL:
            raise SolverDivergence("adjoint step residual %.3e above tolerance" % rel)
        lam_full = np.zeros(ops.N)
        lam_full[self.F] = sol[:self.nf]
        q = sol[self.nf:self.nf + ops.ncell]
        return lam_full, q
