"""Cost functional, adjoint gradient, admissible projection and optimizer.

The gradient couples the tracking misfit to the controls through the
boundary kernels of the exact discrete adjoint, so the directional
derivative agrees with central finite differences of the cost up to
truncation of the differences themselves.
"""

import hashlib
import time

import numpy as np

from .adjoint_solver import AdjointProblem, solve_adjoint
from .fields import BoundaryControl, VelocityField, hp_norm
from .state_solver import StateProblem, solve_state


class CostParams:
    """Target trajectory, penalty weights and admissible-set metadata."""

    def __init__(self, y_d=None, lam1=0.0, lam2=0.0, radius=1e6, p_exponent=4.0):
        if lam1 < 0 or lam2 < 0:
            raise ValueError("penalty weights must be nonnegative")
        if radius <= 0:
            raise ValueError("admissible radius must be positive")
        self.y_d = y_d           # list of nt+1 VelocityFields or None (zero target)
        self.lam1 = float(lam1)
        self.lam2 = float(lam2)
        self.radius = float(radius)
        self.p_exponent = float(p_exponent)

    def target_vec(self, grid, k):
        if self.y_d is None:
            return None
        yd = self.y_d[k]
        return yd.to_vec() if isinstance(yd, VelocityField) else np.asarray(yd, float)

    def content_hash(self):
        h = hashlib.sha256()
        h.update(repr((self.lam1, self.lam2, self.radius, self.p_exponent)).encode())
        if self.y_d is not None:
            for yd in self.y_d:
                arr = yd.to_vec() if isinstance(yd, VelocityField) else np.asarray(yd)
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def evaluate_cost(controls: BoundaryControl, trajectory, params: CostParams):
    """Quadrature of the tracking misfit plus the boundary penalties."""
    g, tg = controls.grid, controls.time_grid
    ops = g.ops
    dt = tg.dt
    J = 0.0
    for k in range(1, tg.nt + 1):
        yk = trajectory.velocities[k].to_vec()
        yd = params.target_vec(g, k)
        diff = yk if yd is None else yk - yd
        J += 0.5 * dt * np.dot(ops.Wvec * diff, diff)
        pen = (0.5 * params.lam1 * controls.a[k] ** 2
               + 0.5 * params.lam2 * controls.b[k] ** 2)
        J += dt * np.dot(g.boundary_weight, pen)
    return float(J)


class ControlGradient:
    """Point-valued gradient pair on Gamma_T (slice 0 is structurally zero)."""

    def __init__(self, grid, time_grid, ga, gb):
        self.grid = grid
        self.time_grid = time_grid
        self.ga = ga
        self.gb = gb

    def pair(self, f, g_dir):
        """L2(Gamma_T) pairing of the gradient with a direction."""
        dt = self.time_grid.dt
        wg = self.grid.boundary_weight
        acc = 0.0
        for k in range(1, self.time_grid.nt + 1):
            acc += dt * np.dot(wg, self.ga[k] * f[k] + self.gb[k] * g_dir[k])
        return float(acc)

    def norm(self):
        return float(np.sqrt(self.pair(self.ga, self.gb)))

    def as_control(self, like: BoundaryControl):
        return BoundaryControl(like.grid, like.time_grid, self.ga.copy(), self.gb.copy(),
                               like.p_exponent, like.radius)


class GradientEngine:
    """Caches state/adjoint solves per control content for reuse in line searches."""

    def __init__(self, y0: VelocityField, params: CostParams, friction=None, nu=1.0):
        self.y0 = y0
        self.params = params
        self.friction = friction
        self.nu = float(nu)
        self._cache = {}
        self.state_solves = 0
        self.adjoint_solves = 0

    def _key(self, controls):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(controls.a).tobytes())
        h.update(np.ascontiguousarray(controls.b).tobytes())
        h.update(self.params.content_hash().encode())
        return h.hexdigest()

    def _entry(self, controls):
        key = self._key(controls)
        if key not in self._cache:
            if len(self._cache) > 8:
                self._cache.clear()
            prob = StateProblem(controls.grid, controls.time_grid, self.y0, controls,
                                self.friction, self.nu, validate=False)
            traj = solve_state(prob)
            self.state_solves += 1
            J = evaluate_cost(controls, traj, self.params)
            self._cache[key] = {"problem": prob, "trajectory": traj, "J": J}
        return self._cache[key]

    def cost(self, controls):
        return self._entry(controls)["J"]

    def gradient(self, controls):
        entry = self._entry(controls)
        if "gradient" not in entry:
            prob, traj = entry["problem"], entry["trajectory"]
            g, tg = controls.grid, controls.time_grid
            source = []
            for k in range(tg.nt + 1):
                yk = traj.velocities[k].to_vec()
                yd = self.params.target_vec(g, k)
                source.append(yk if yd is None else yk - yd)
            adj = solve_adjoint(AdjointProblem(prob, traj, source))
            self.adjoint_solves += 1
            dt = tg.dt
            wg = g.boundary_weight
            ga = np.zeros_like(controls.a)
            gb = np.zeros_like(controls.b)
            ga[1:] = adj.kernel_a[1:] / (dt * wg[None, :]) + self.params.lam1 * controls.a[1:]
            gb[1:] = adj.kernel_b[1:] / (dt * wg[None, :]) + self.params.lam2 * controls.b[1:]
            # admissible variations of a carry no boundary mean
            ga[1:] -= (ga[1:] @ wg)[:, None] / g.loop_length
            entry["gradient"] = ControlGradient(g, tg, ga, gb)
            entry["adjoint"] = adj
        return entry["gradient"], entry


def cost_gradient(controls: BoundaryControl, params: CostParams, y0: VelocityField,
                  friction=None, nu=1.0, engine=None):
    """Adjoint gradient of the cost at the given controls."""
    engine = engine or GradientEngine(y0, params, friction, nu)
    grad, _ = engine.gradient(controls)
    return grad


def fd_gradient_oracle(controls, direction, eps_list, params, y0,
                       friction=None, nu=1.0, engine=None):
    """Central-difference directional derivatives with Richardson extrapolation.

    direction is a (f, g) pair of arrays shaped like the controls; f must be
    zero-mean per slice with the initial slice untouched.
    """
    f, g_dir = direction
    engine = engine or GradientEngine(y0, params, friction, nu)
    estimates = []
    for eps in eps_list:
        cp = controls.copy(); cp.a = cp.a + eps * f; cp.b = cp.b + eps * g_dir
        cm = controls.copy(); cm.a = cm.a - eps * f; cm.b = cm.b - eps * g_dir
        d = (engine.cost(cp) - engine.cost(cm)) / (2 * eps)
        estimates.append((float(eps), float(d)))
    est = sorted(estimates, key=lambda t: t[0])
    if len(est) >= 2:
        e2, d2 = est[0]
        e1, d1 = est[1]
        r = (e1 / e2) ** 2
        richardson = (r * d2 - d1) / (r - 1.0)
    else:
        richardson = est[0][1]
    best_eps = min(estimates, key=lambda t: abs(t[1] - richardson))[0]
    return {"estimates": estimates, "richardson": float(richardson), "best_eps": best_eps}


def project_admissible(controls: BoundaryControl) -> BoundaryControl:
    """Closest admissible point: per-slice zero-mean a, then radial ball scaling."""
    g = controls.grid
    out = controls.copy()
    out.a = out.a - (out.a @ g.boundary_weight)[:, None] / g.loop_length
    n = hp_norm(out)
    if n > out.radius:
        scale = out.radius / n
        out.a *= scale
        out.b *= scale
    return out


def random_admissible_control(grid, time_grid, rng, p_exponent=4.0, radius=1e6,
                              kmax=3, amplitude=1.0, zero_initial_a=True):
    """Band-limited random control pair, zero-mean a, inside the ball."""
    s = grid.boundary_s / grid.loop_length
    t = time_grid.times()[:, None] / time_grid.T
    a = np.zeros((time_grid.nt + 1, grid.n_boundary))
    b = np.zeros_like(a)
    for k in range(1, kmax + 1):
        ck = 1.0 / k
        a += ck * (rng.normal() * np.sin(2 * np.pi * k * s)[None, :]
                   + rng.normal() * np.cos(2 * np.pi * k * s)[None, :]) \
            * (t * np.cos(0.5 * np.pi * k * t) if zero_initial_a else np.cos(np.pi * k * t))
        b += ck * (rng.normal() * np.sin(2 * np.pi * k * s)[None, :]
                   + rng.normal() * np.cos(2 * np.pi * k * s)[None, :]) * np.sin(np.pi * k * t + k)
    a *= amplitude
    b *= amplitude
    a -= (a @ grid.boundary_weight)[:, None] / grid.loop_length
    if zero_initial_a:
        a[0] = 0.0
    ctrl = BoundaryControl(grid, time_grid, a, b, p_exponent, radius)
    return project_admissible(ctrl)


def balanced_direction(grid, time_grid, rng, p_exponent=4.0):
    """Random control direction with equal injection and stress content.

    Each component is normalized to unit contribution in the control norm,
    so measured estimate constants are not dominated by the component mix.
    """
    raw = random_admissible_control(grid, time_grid, rng, p_exponent=p_exponent,
                                    amplitude=1.0)
    fa = BoundaryControl(grid, time_grid, raw.a, np.zeros_like(raw.b), p_exponent)
    fb = BoundaryControl(grid, time_grid, np.zeros_like(raw.a), raw.b, p_exponent)
    na, nb = hp_norm(fa), hp_norm(fb)
    a = raw.a / na if na > 0 else raw.a
    b = raw.b / nb if nb > 0 else raw.b
    return BoundaryControl(grid, time_grid, a, b, p_exponent, raw.radius)


def optimality_parts(controls, grad: ControlGradient, probe_count=8, seed=1234):
    """Projected-step norm and worst probe value of the variational inequality."""
    trial = controls.copy()
    trial.a = trial.a - grad.ga
    trial.b = trial.b - grad.gb
    proj = project_admissible(trial)
    diff = BoundaryControl(controls.grid, controls.time_grid,
                           controls.a - proj.a, controls.b - proj.b,
                           controls.p_exponent, controls.radius)
    step_norm = hp_norm(diff)
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(probe_count):
        probe = random_admissible_control(controls.grid, controls.time_grid, rng,
                                          controls.p_exponent, controls.radius,
                                          amplitude=min(1.0, controls.radius))
        val = grad.pair(probe.a - controls.a, probe.b - controls.b)
        worst = min(worst, val)
    violation = max(0.0, -worst) if probe_count > 0 else 0.0
    return {"step_norm": float(step_norm), "worst_probe": float(worst),
            "violation": float(violation),
            "residual": float(max(step_norm, violation))}


def optimality_residual(controls, params, y0, friction=None, nu=1.0,
                        probe_count=8, seed=1234, engine=None):
    grad = cost_gradient(controls, params, y0, friction, nu, engine)
    return optimality_parts(controls, grad, probe_count, seed)["residual"]


class OptimizationReport:
    """Per-iteration history plus the final controls and phase timings."""

    def __init__(self):
        self.iterations = []
        self.final_controls = None
        self.status = "running"
        self.wall_clock = {"state": 0.0, "adjoint": 0.0, "total": 0.0}
        self.remainder_log = []

    def record(self, **kw):
        self.iterations.append(kw)

    def history_rows(self):
        cols = ("iter", "J", "grad_norm", "residual", "step")
        rows = [cols]
        for it in self.iterations:
            rows.append(tuple(it.get(c) for c in cols))
        return rows

    def to_dict(self):
        return {
            "status": self.status,
            "iterations": [
                {k: (bool(v) if isinstance(v, (bool, np.bool_)) else
                     (int(v) if isinstance(v, (int, np.integer)) else float(v)))
                 for k, v in it.items()} for it in self.iterations],
            "n_iterations": len(self.iterations),
            "remainder_log": self.remainder_log,
        }


def optimize(y0, params: CostParams, controls0=None, friction=None, nu=1.0,
             tol=1e-8, max_iters=100, armijo_c1=1e-4, max_backtracks=30,
             sigma0=None, probe_count=8, seed=1234,
             grid=None, time_grid=None, iterate_callback=None) -> OptimizationReport:
    """Projected gradient with Armijo backtracking over the admissible set.

    The initial trial step doubles after each accepted iterate and falls
    back to a secant (Barzilai-Borwein) estimate when that is available;
    Armijo halving enforces monotone decrease either way.
    """
    t_start = time.perf_counter()
    if controls0 is None:
        controls0 = BoundaryControl(grid, time_grid, p_exponent=params.p_exponent,
                                    radius=params.radius)
    c = project_admissible(controls0)
    engine = GradientEngine(y0, params, friction, nu)
    report = OptimizationReport()
    sigma_prev = None
    prev = None  # (a, b, ga, gb) of previous accepted iterate

    for it in range(max_iters):
        J = engine.cost(c)
        grad, _ = engine.gradient(c)
        parts = optimality_parts(c, grad, probe_count, seed)
        gnorm = grad.norm()
        report.record(iter=it, J=J, grad_norm=gnorm, residual=parts["residual"],
                      step=0.0 if sigma_prev is None else sigma_prev,
                      projected=False)
        if parts["residual"] <= tol:
            report.status = "converged"
            break

        # initial trial step
        if sigma_prev is None:
            sigma = sigma0 if sigma0 is not None else (
                2.0 * J / max(gnorm ** 2, 1e-300))
        else:
            sigma = 2.0 * sigma_prev
            if prev is not None:
                da = c.a - prev[0]; db = c.b - prev[1]
                dga = grad.ga - prev[2]; dgb = grad.gb - prev[3]
                wg = c.grid.boundary_weight
                ss = float(((da * da + db * db) @ wg).sum())
                sy = float(((da * dga + db * dgb) @ wg).sum())
                yy = float(((dga * dga + dgb * dgb) @ wg).sum())
                # alternate the two secant step lengths
                bb = ss / sy if (it % 2 == 0 and sy > 0) else (
                    sy / yy if yy > 0 else np.nan)
                if np.isfinite(bb) and bb > 0:
                    sigma = bb
        prev = (c.a.copy(), c.b.copy(), grad.ga.copy(), grad.gb.copy())

        accepted = False
        for _ in range(max_backtracks + 1):
            trial = c.copy()
            trial.a = trial.a - sigma * grad.ga
            trial.b = trial.b - sigma * grad.gb
            trial = project_admissible(trial)
            pred = grad.pair(trial.a - c.a, trial.b - c.b)
            if pred >= 0.0:
                sigma *= 0.5
                continue
            J_trial = engine.cost(trial)
            if J_trial <= J + armijo_c1 * pred:
                # first-order remainder of the accepted step, for monitoring
                report.remainder_log.append(
                    float(abs(J_trial - J - pred) / max(abs(pred), 1e-300)))
                projected_flag = hp_norm(trial) >= trial.radius * (1 - 1e-12)
                c = trial
                if iterate_callback is not None:
                    iterate_callback(it, c)
                sigma_prev = sigma
                report.iterations[-1]["step"] = sigma
                report.iterations[-1]["projected"] = projected_flag
                accepted = True
                break
            sigma *= 0.5
        if not accepted:
            report.status = "line_search_failure"
            break
    else:
        report.status = "max_iters"

    report.final_controls = c
    report.wall_clock["total"] = time.perf_counter() - t_start
    report.wall_clock["state_solves"] = engine.state_solves
    report.wall_clock["adjoint_solves"] = engine.adjoint_solves
    return report
