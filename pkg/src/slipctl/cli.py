"""Batch front end: config parsing, run orchestration, artifact persistence.

Config files are INI-style with sections [domain], [time], [physics],
[control], [target], [optimizer], [output], [run].  Boundary data are
per-wall term lists (polynomial/trigonometric in the normalized wall
coordinate, with an optional time factor), so runs are reproducible
bit-for-bit from the file plus the seed.

Exit codes: 0 ok, 1 config error, 2 solver failure, 3 budget exhausted,
4 check failed.
"""

import argparse
import concurrent.futures
import configparser
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .adjoint_solver import duality_residual
from .control_opt import (CostParams, GradientEngine, fd_gradient_oracle,
                          optimize, random_admissible_control)
from .errors import ConfigError, IncompatibleFlux, SlipctlError, SolverDivergence
from .fields import (BoundaryControl, FrictionField, VelocityField,
                     save_pressure, save_velocity)
from .lifting import solve_neumann_lifting
from .linearized_solver import LinearizedProblem, solve_linearized
from .mesh import TimeGrid, build_grid, integrate_boundary
from .state_solver import (StateProblem, energy_identity_residual,
                           load_trajectory, save_trajectory, solve_state)
from .verify import format_table, reports_to_json, run_estimate_suite

log = logging.getLogger("slipctl")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_BUDGET, EXIT_CHECK = 0, 1, 2, 3, 4

WALL_KEYS = ("bottom", "right", "top", "left")


def _eval_terms(spec, xi):
    """Evaluate a '+'-separated term list at normalized coordinates xi."""
    out = np.zeros_like(xi)
    for raw in spec.split("+"):
        term = raw.strip()
        if not term:
            continue
        parts = term.split(":")
        kind = parts[0]
        try:
            if kind == "const":
                out += float(parts[1])
            elif kind == "sin":
                out += float(parts[2]) * np.sin(2 * np.pi * float(parts[1]) * xi)
            elif kind == "cos":
                out += float(parts[2]) * np.cos(2 * np.pi * float(parts[1]) * xi)
            elif kind == "poly":
                coeffs = [float(c) for c in parts[1:]]
                acc = np.zeros_like(xi)
                for c in reversed(coeffs):
                    acc = acc * xi + c
                out += acc
            else:
                raise ConfigError("unknown term kind %r" % kind)
        except (IndexError, ValueError) as exc:
            raise ConfigError("malformed term %r: %s" % (term, exc))
    return out


def _wall_profile(cfg, section, prefix, grid):
    """Per-wall spatial profile at the boundary nodes (loop order)."""
    vals = np.zeros(grid.n_boundary)
    for wall, name in enumerate(WALL_KEYS):
        key = "%s.%s" % (prefix, name)
        if cfg.has_option(section, key):
            sl = grid.wall_slice(wall)
            n = sl.stop - sl.start
            xi = (grid.boundary_wall_index[sl] + 0.5) / n
            vals[sl] = _eval_terms(cfg.get(section, key), xi)
    return vals


def _time_factor(cfg, section, prefix, time_grid):
    key = "%s.tmod" % prefix
    tau = time_grid.times() / time_grid.T
    if cfg.has_option(section, key):
        return _eval_terms(cfg.get(section, key), tau)
    return np.ones_like(tau)


class RunConfig:
    """Parsed and validated run configuration."""

    def __init__(self, path, out_override=None, seed_override=None, workers=None):
        if not os.path.exists(path):
            raise ConfigError("config file %r does not exist" % path)
        cfg = configparser.ConfigParser(inline_comment_prefixes=("#",))
        cfg.read(path)
        self._cfg = cfg
        self.path = path
        try:
            self.nx = cfg.getint("domain", "nx", fallback=16)
            self.ny = cfg.getint("domain", "ny", fallback=16)
            self.Lx = cfg.getfloat("domain", "Lx", fallback=1.0)
            self.Ly = cfg.getfloat("domain", "Ly", fallback=1.0)
            self.T = cfg.getfloat("time", "T", fallback=1.0)
            self.nt = cfg.getint("time", "nt", fallback=32)
            self.nu = cfg.getfloat("physics", "nu", fallback=1.0)
            self.alpha_min = cfg.getfloat("physics", "alpha_min", fallback=1e-3)
            self.radius = cfg.getfloat("control", "R", fallback=1e6)
            self.p_exponent = cfg.getfloat("control", "p_exponent", fallback=4.0)
            self.lam1 = cfg.getfloat("control", "lambda1", fallback=0.0)
            self.lam2 = cfg.getfloat("control", "lambda2", fallback=0.0)
            self.tol = cfg.getfloat("optimizer", "tol", fallback=1e-6)
            self.max_iters = cfg.getint("optimizer", "max_iters", fallback=100)
            self.armijo_c1 = cfg.getfloat("optimizer", "armijo_c1", fallback=1e-4)
            self.max_backtracks = cfg.getint("optimizer", "max_backtracks", fallback=30)
            self.probe_count = cfg.getint("optimizer", "probe_count", fallback=8)
            self.out_dir = out_override or cfg.get("output", "directory", fallback="out")
            self.cadence = cfg.getint("output", "snapshot_cadence", fallback=1)
            self.seed = int(seed_override if seed_override is not None
                            else cfg.getint("run", "seed", fallback=1234))
            self.workers = int(workers if workers is not None
                               else cfg.getint("run", "workers", fallback=1))
            self.samples = cfg.getint("run", "samples", fallback=5)
            self.refine = cfg.getboolean("run", "refine", fallback=False)
        except ValueError as exc:
            raise ConfigError("invalid numeric value: %s" % exc)
        if self.nt < 1:
            raise ConfigError("nt must be at least 1")
        if self.radius <= 0:
            raise ConfigError("R must be positive")
        if not self.p_exponent > 2:
            raise ConfigError("p_exponent must exceed 2")
        if self.lam1 < 0 or self.lam2 < 0:
            raise ConfigError("penalty weights must be nonnegative")
        try:
            self.grid = build_grid(self.nx, self.ny, self.Lx, self.Ly)
            self.time_grid = TimeGrid(self.T, self.nt)
        except ValueError as exc:
            raise ConfigError(str(exc))
        self.target_spec = cfg.get("target", "y_d", fallback="zero")
        if self.target_spec.startswith("file:"):
            tpath = self.target_spec[5:]
            if not os.path.exists(os.path.join(tpath, "manifest.json")):
                raise ConfigError("target trajectory %r does not exist" % tpath)
        self.initial_spec = cfg.get("initial", "state", fallback="zero")

    def resolved_text(self, with_output=True):
        """Canonical serialization of every option, for hashing and records.

        The output directory is excluded from the hash basis: it locates the
        artifacts but does not change their content.
        """
        lines = []
        for section in sorted(self._cfg.sections()):
            opts = [k for k in sorted(self._cfg.options(section))
                    if not (section == "output" and k == "directory")]
            if not opts and section == "output":
                continue
            lines.append("[%s]" % section)
            for key in opts:
                lines.append("%s = %s" % (key, self._cfg.get(section, key)))
        lines.append("[resolved]")
        lines.append("seed = %d" % self.seed)
        if with_output:
            lines.append("out = %s" % self.out_dir)
        return "\n".join(lines) + "\n"

    def config_hash(self):
        return hashlib.sha256(self.resolved_text(with_output=False).encode()
                              ).hexdigest()[:16]

    def controls(self):
        a_prof = _wall_profile(self._cfg, "control", "a", self.grid)
        b_prof = _wall_profile(self._cfg, "control", "b", self.grid)
        a_t = _time_factor(self._cfg, "control", "a", self.time_grid)
        b_t = _time_factor(self._cfg, "control", "b", self.time_grid)
        a = a_t[:, None] * a_prof[None, :]
        b = b_t[:, None] * b_prof[None, :]
        ctrl = BoundaryControl(self.grid, self.time_grid, a, b,
                               self.p_exponent, self.radius)
        flux = np.abs(ctrl.flux_residuals()).max()
        if flux > 1e-10 * max(1.0, np.abs(a).max()):
            raise ConfigError(
                "normal control a has net boundary flux %.3e: the injection-"
                "suction data must integrate to zero over the boundary at "
                "every time (zero-mean flux compatibility condition)" % flux)
        return ctrl

    def friction(self):
        spec = self._cfg.get("physics", "alpha", fallback="constant:1.0")
        nslice = self.nt + 1
        if spec.startswith("constant:"):
            val = float(spec.split(":")[1])
            alpha = np.full((nslice, self.grid.n_boundary), val)
        elif spec.startswith("walls:"):
            vals = [float(v) for v in spec[6:].split(",")]
            if len(vals) != 4:
                raise ConfigError("walls: friction needs 4 values (bottom,right,top,left)")
            alpha = np.empty((nslice, self.grid.n_boundary))
            for wall in range(4):
                alpha[:, self.grid.wall_slice(wall)] = vals[wall]
        elif spec == "table":
            prof = _wall_profile(self._cfg, "physics", "alpha", self.grid)
            tmod = _time_factor(self._cfg, "physics", "alpha", self.time_grid)
            alpha = tmod[:, None] * prof[None, :]
        else:
            raise ConfigError("unknown friction specification %r" % spec)
        if alpha.min() < self.alpha_min:
            raise ConfigError("friction coefficient below alpha_min=%g" % self.alpha_min)
        return FrictionField(self.grid, self.time_grid, alpha, self.alpha_min)

    def target(self):
        spec = self.target_spec
        g, tg = self.grid, self.time_grid
        if spec == "zero":
            return [VelocityField(g) for _ in range(tg.nt + 1)]
        if spec.startswith("uniform:"):
            cx, cy = (float(v) for v in spec[8:].split(":"))
            fld = VelocityField(g, cx * np.ones(g.shape_u), cy * np.ones(g.shape_v))
            return [fld for _ in range(tg.nt + 1)]
        if spec.startswith("stream:"):
            k, amp = (float(v) for v in spec[7:].split(":"))
            X, Y = g.vertex_points()
            psi = amp * np.sin(np.pi * k * X / g.Lx) * np.sin(np.pi * k * Y / g.Ly)
            u = (psi[:, 1:] - psi[:, :-1]) / g.hy
            v = -(psi[1:, :] - psi[:-1, :]) / g.hx
            fld = VelocityField(g, u, v)
            return [fld for _ in range(tg.nt + 1)]
        if spec.startswith("file:"):
            traj = load_trajectory(spec[5:])
            if traj.grid.key() != g.key() or traj.time_grid.nt != tg.nt:
                raise ConfigError("target trajectory does not match the run grids")
            return traj.velocities
        raise ConfigError("unknown target specification %r" % spec)

    def initial_state(self):
        spec = self.initial_spec
        if spec == "zero":
            return VelocityField(self.grid)
        if spec.startswith("shear:"):
            try:
                c1, c2 = (float(v) for v in spec[6:].split(":"))
            except ValueError as exc:
                raise ConfigError("malformed initial state %r: %s" % (spec, exc))
            return VelocityField.from_functions(self.grid,
                                                lambda X, Y: c1 + c2 * Y,
                                                lambda X, Y: 0.0 * X)
        raise ConfigError("unknown initial state %r" % spec)

    def state_problem(self):
        ctrl = self.controls()
        try:
            return StateProblem(self.grid, self.time_grid, self.initial_state(),
                                ctrl, self.friction(), self.nu)
        except ValueError as exc:
            raise ConfigError(
                "%s (the initial state must be divergence-free with normal "
                "trace matching a at t = 0; with the rest state use a time "
                "factor vanishing at 0, e.g. poly:0:1)" % exc)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return "%.17g" % v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return str(v)


def _prepare_out(rc: RunConfig):
    os.makedirs(rc.out_dir, exist_ok=True)
    with open(os.path.join(rc.out_dir, "config.resolved"), "w") as fh:
        fh.write(rc.resolved_text())
        fh.write("config_hash = %s\n" % rc.config_hash())


def cmd_solve(rc: RunConfig):
    _prepare_out(rc)
    try:
        prob = rc.state_problem()
    except (ValueError, IncompatibleFlux) as exc:
        log.error("configuration rejected: %s", exc)
        return EXIT_CONFIG
    try:
        traj = solve_state(prob)
    except SolverDivergence as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    tdir = os.path.join(rc.out_dir, "trajectory")
    save_trajectory(tdir, traj, rc.cadence)
    res = energy_identity_residual(traj, prob)
    rows = [("step", "relative_imbalance")]
    rows += [(k + 1, float(r)) for k, r in enumerate(res)]
    _write_csv(os.path.join(rc.out_dir, "energy_residual.csv"), rows)
    _write_json(os.path.join(rc.out_dir, "solve.json"), {
        "config_hash": rc.config_hash(), "trajectory_hash": traj.config_hash,
        "max_energy_residual": float(res.max()) if res.size else 0.0,
        "snapshots": rc.time_grid.nt + 1})
    log.info("state solve complete, max energy imbalance %.3e", res.max())
    return EXIT_OK


def cmd_optimize(rc: RunConfig):
    _prepare_out(rc)
    try:
        y_d = rc.target()
        friction = rc.friction()
        ctrl0 = rc.controls()
        y0 = rc.initial_state()
        from .fields import normal_trace
        if np.abs(normal_trace(y0) - ctrl0.a[0]).max() > 1e-9:
            raise ConfigError("initial controls are incompatible with the "
                              "initial state's normal trace at t = 0")
    except ConfigError:
        raise
    except (ValueError, IncompatibleFlux) as exc:
        log.error("configuration rejected: %s", exc)
        return EXIT_CONFIG
    params = CostParams(y_d=y_d, lam1=rc.lam1, lam2=rc.lam2,
                        radius=rc.radius, p_exponent=rc.p_exponent)
    try:
        report = optimize(y0, params, controls0=ctrl0,
                          friction=friction, nu=rc.nu, tol=rc.tol,
                          max_iters=rc.max_iters, armijo_c1=rc.armijo_c1,
                          max_backtracks=rc.max_backtracks,
                          probe_count=rc.probe_count, seed=rc.seed,
                          grid=rc.grid, time_grid=rc.time_grid)
    except SolverDivergence as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER

    payload = report.to_dict()
    payload["config_hash"] = rc.config_hash()
    _write_json(os.path.join(rc.out_dir, "report.json"), payload)
    _write_json(os.path.join(rc.out_dir, "timings.json"), report.wall_clock)
    _write_csv(os.path.join(rc.out_dir, "history.csv"), report.history_rows())
    final = report.final_controls
    rows_a = [("t", "s", "a")]
    rows_b = [("t", "s", "b")]
    times = rc.time_grid.times()
    for k in range(rc.nt + 1):
        for e in range(rc.grid.n_boundary):
            rows_a.append((float(times[k]), float(rc.grid.boundary_s[e]), float(final.a[k, e])))
            rows_b.append((float(times[k]), float(rc.grid.boundary_s[e]), float(final.b[k, e])))
    _write_csv(os.path.join(rc.out_dir, "controls_a.csv"), rows_a)
    _write_csv(os.path.join(rc.out_dir, "controls_b.csv"), rows_b)
    log.info("optimizer finished: %s after %d iterations",
             report.status, len(report.iterations))
    if report.status == "converged":
        return EXIT_OK
    return EXIT_BUDGET


def cmd_grad_check(rc: RunConfig, corrupt_adjoint=False):
    _prepare_out(rc)
    try:
        prob = rc.state_problem()
        y_d = rc.target()
    except (ConfigError, ValueError, IncompatibleFlux) as exc:
        log.error("configuration rejected: %s", exc)
        return EXIT_CONFIG
    params = CostParams(y_d=y_d, lam1=rc.lam1, lam2=rc.lam2,
                        radius=rc.radius, p_exponent=rc.p_exponent)
    engine = GradientEngine(prob.y0, params, prob.friction, rc.nu)
    ctrl = prob.controls
    try:
        grad, entry = engine.gradient(ctrl)
        traj = entry["trajectory"]
        rng = np.random.default_rng(rc.seed)
        dirs = [random_admissible_control(rc.grid, rc.time_grid, rng, amplitude=1.0)
                for _ in range(rc.samples)]

        def one_direction(d):
            adj_dd = grad.pair(d.a, d.b)
            if corrupt_adjoint:
                adj_dd *= 1.01  # test hook: deliberately broken pairing
            fd = fd_gradient_oracle(ctrl, (d.a, d.b), [2e-3, 1e-3], params,
                                    prob.y0, prob.friction, rc.nu,
                                    engine=engine)
            denom = max(abs(adj_dd), abs(fd["richardson"]), 1e-300)
            return adj_dd, fd["richardson"], abs(adj_dd - fd["richardson"]) / denom

        if rc.workers > 1:
            with concurrent.futures.ThreadPoolExecutor(rc.workers) as ex:
                results = list(ex.map(one_direction, dirs))
        else:
            results = [one_direction(d) for d in dirs]

        source = []
        for k in range(rc.nt + 1):
            yd = params.target_vec(rc.grid, k)
            yk = traj.velocities[k].to_vec()
            source.append(yk if yd is None else yk - yd)
        adj = entry["adjoint"]
        dres = []
        for d in dirs[:3]:
            z, _ = solve_linearized(LinearizedProblem(prob, traj, d.a, d.b))
            dres.append(duality_residual(z, adj, source, d.a, d.b,
                                         base_hash=traj.config_hash))
    except SolverDivergence as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER

    entry["adjoint"].export_kernels_csv(os.path.join(rc.out_dir, "kernels"))
    rows = [("direction", "adjoint", "fd_richardson", "rel_error")]
    for i, (ad, fd, err) in enumerate(results):
        rows.append((i, float(ad), float(fd), float(err)))
    _write_csv(os.path.join(rc.out_dir, "gradcheck.csv"), rows)
    max_err = max(r[2] for r in results)
    max_dres = max(dres)
    _write_json(os.path.join(rc.out_dir, "gradcheck.json"), {
        "config_hash": rc.config_hash(), "max_rel_error": float(max_err),
        "max_duality_residual": float(max_dres),
        "directions": len(results)})
    print("%-10s %22s %22s %12s" % ("direction", "adjoint", "fd", "rel_error"))
    for i, (ad, fd, err) in enumerate(results):
        print("%-10d %22.15e %22.15e %12.3e" % (i, ad, fd, err))
    print("max duality residual: %.3e" % max_dres)
    ok = max_err <= 1e-6 and max_dres <= 1e-9
    return EXIT_OK if ok else EXIT_CHECK


def cmd_verify(rc: RunConfig):
    _prepare_out(rc)
    reports = run_estimate_suite({
        "nx": rc.nx, "ny": rc.ny, "Lx": rc.Lx, "Ly": rc.Ly, "T": rc.T,
        "nt": rc.nt, "samples": rc.samples, "seed": rc.seed,
        "workers": rc.workers, "refine": rc.refine,
        "config_hash": rc.config_hash()})
    with open(os.path.join(rc.out_dir, "verify.json"), "w") as fh:
        fh.write(reports_to_json(reports))
        fh.write("\n")
    print(format_table(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


def cmd_lift(rc: RunConfig):
    _prepare_out(rc)
    try:
        ctrl = rc.controls()
    except ConfigError:
        raise
    a_final = ctrl.a[-1]
    try:
        res = solve_neumann_lifting(rc.grid, a_final)
    except IncompatibleFlux as exc:
        log.error("lifting rejected: %s", exc)
        return EXIT_CONFIG
    except SolverDivergence as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    save_pressure(os.path.join(rc.out_dir, "potential.snap"), res.h, rc.T)
    save_velocity(os.path.join(rc.out_dir, "lifting.snap"), res.grad, rc.T)
    from .fields import divergence
    from .lifting import discrete_curl
    _write_json(os.path.join(rc.out_dir, "lift.json"), {
        "config_hash": rc.config_hash(),
        "flux": float(integrate_boundary(rc.grid, a_final)),
        "max_divergence": float(np.abs(divergence(res.grad)).max()),
        "max_curl": float(np.abs(discrete_curl(res.grad)).max())})
    log.info("lifting solve complete")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="slipctl",
        description="forward/adjoint solves and boundary-control optimization "
                    "for slip-wall incompressible flow")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "optimize", "grad-check", "verify", "lift"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--log-level", default="INFO")
        if name == "grad-check":
            p.add_argument("--corrupt-adjoint", action="store_true",
                           help=argparse.SUPPRESS)
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, args.log_level.upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = RunConfig(args.config, args.out, args.seed, args.workers)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        if args.command == "solve":
            return cmd_solve(rc)
        if args.command == "optimize":
            return cmd_optimize(rc)
        if args.command == "grad-check":
            return cmd_grad_check(rc, corrupt_adjoint=args.corrupt_adjoint)
        if args.command == "verify":
            return cmd_verify(rc)
        if args.command == "lift":
            return cmd_lift(rc)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except SlipctlError as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
