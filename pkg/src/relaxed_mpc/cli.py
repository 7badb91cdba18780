"""Command-line interface.

Exit codes: 0 success, 1 other library error, 2 configuration error,
3 solver failure, 4 algorithm non-termination.
"""
from __future__ import annotations

import argparse
import csv
import sys as _sys

import numpy as np

from . import analysis
from .config import DesignConfig, bundled_config_path, load_config
from .errors import (ConfigError, DimensionMismatch, NotTerminated, RelaxedMpcError,
                     SolverFailure, StrategyError)
from .linsys import solve_dare, spectral_radius
from .ocp import newton_solve
from .sim import Disturbance, lyapunov_audit, simulate, write_csv
from .terminal import STRATEGY_SUMMARY, verify_terminal_cost

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_SOLVER, EXIT_NOT_TERMINATED = 0, 1, 2, 3, 4
_VALUE_FLAGS = ("--x0", "--vertices", "--w-bound", "--kappa")


def _vector(text: str, name: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"{name}: expected a comma-separated list of numbers") from exc


def _points(text: str) -> np.ndarray:
    rows = [_vector(r, "--vertices") for r in text.split(";") if r.strip()]
    if not rows or len({r.size for r in rows}) != 1:
        raise ConfigError("--vertices: rows separated by ';' must have equal length")
    return np.array(rows)


def _fmt(M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return "\n".join("  [" + ", ".join(f"{v: .10g}" for v in row) + "]" for row in M)


def _vec(v) -> str:
    return "[" + ", ".join(f"{x:.10g}" for x in np.ravel(v)) + "]"


def _state(cfg: DesignConfig, text: str | None) -> np.ndarray:
    if text is None:
        raise ConfigError("--x0 is required for this command")
    x0 = _vector(text, "--x0")
    if x0.size != cfg.n:
        raise ConfigError(f"--x0 needs {cfg.n} entries, got {x0.size}")
    return x0


def _emit(text: str, out: str | None) -> None:
    print(text)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")


def _require_eps(cfg: DesignConfig) -> None:
    if cfg.eps <= 0:
        raise ConfigError("eps must be positive for this command (eps = 0 is design-only)")


# --- commands -------------------------------------------------------------

def cmd_design(cfg: DesignConfig, args) -> int:
    design = cfg.design()
    term = design.terminal
    lines = [f"design: {cfg.name or 'unnamed'}", f"strategy: {cfg.strategy}",
             f"N = {cfg.N}, eps = {cfg.eps:g}, delta = {cfg.delta:g}, "
             f"recentering = {cfg.recentering}, relaxing = {cfg.relaxing}"
             + (f" (k = {cfg.k})" if cfg.relaxing == "polynomial" else "")]
    row = STRATEGY_SUMMARY[cfg.strategy]
    lines += ["strategy summary:",
              f"  terminal cost: {row[0]}", f"  terminal set: {row[1]}",
              f"  requires (A, B): {row[2]}", f"  relaxing functions: {row[3]}",
              f"  region of attraction: {row[4]}", f"  constraint violation: {row[5]}"]
    lines += ["K =", _fmt(term.K), "P =", _fmt(term.P)]
    P_uc = solve_dare(design.sys, cfg.Q, cfg.R)[0]
    lines += ["P_uc (unconstrained LQR) =", _fmt(P_uc),
              f"max |P - P_uc| = {np.abs(term.P - P_uc).max():.3e}"]
    if term.strategy == "quadratic":
        lines += ["M_x =", _fmt(term.M[0]), "M_u =", _fmt(term.M[1])]
    elif term.M is not None:
        lines += ["M (local bound on X_f) =", _fmt(term.M)]
    if term.terminal_set is not None:
        lines += ["P_f (X_f = {x : x' P_f x <= 1}) =", _fmt(term.terminal_set.P_f)]
    if term.tail is not None:
        lines.append(f"tail length T = {term.tail.T}")
    ocp = cfg.ocp()
    levels = analysis.boundary_levels(ocp)
    lines.append("boundary barrier levels: "
                 + ", ".join(f"beta_bar_{k} = {v:.10g}" for k, v in levels.items()))
    checks = verify_terminal_cost(design.sys, term)
    lines.append("checks:")
    lines += [f"  [{'pass' if c.passed else 'FAIL'}] {c.name} ({c.value:.3g})" for c in checks]
    _emit("\n".join(lines), args.out)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_ERROR


def cmd_solve(cfg: DesignConfig, args) -> int:
    _require_eps(cfg)
    x0 = _state(cfg, args.x0)
    ocp = cfg.ocp()
    res = newton_solve(ocp, x0)
    X = ocp.predict(res.U, x0)
    U = res.U.reshape(cfg.N, cfg.m)
    print(f"value = {res.value:.17g}")
    print(f"u0 = {_vec(U[0])}")
    print(f"newton iterations = {res.iterations}, gradient norm = {res.grad_norm:.3e}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k"] + [f"x_{i + 1}" for i in range(cfg.n)]
                        + [f"u_{j + 1}" for j in range(cfg.m)])
            for k, x in enumerate(X):
                u = [""] * cfg.m if k == cfg.N else ["%.17g" % v for v in U[k]]
                wr.writerow([k] + ["%.17g" % v for v in x] + u)
        print(f"prediction written to {args.out}")
    return EXIT_OK


def cmd_simulate(cfg: DesignConfig, args) -> int:
    _require_eps(cfg)
    x0 = _state(cfg, args.x0)
    if args.steps < 0:
        raise ConfigError("--steps must be nonnegative")
    bound = _vector(args.w_bound, "--w-bound") if args.w_bound else cfg.disturbance_bound
    decay = cfg.disturbance_decay if args.w_decay is None else args.w_decay
    seed = cfg.seed if args.seed is None else args.seed
    dist = None if bound is None else Disturbance(bound=bound, seed=seed, decay=decay)
    traj = simulate(cfg.ocp(), x0, args.steps, dist)
    out = args.out or "trajectory.csv"
    write_csv(traj, out)
    print(out)
    print(f"final |x| = {np.linalg.norm(traj.states[-1]):.3e}, "
          f"max violation = {traj.max_violation():.3e}")
    if dist is None:
        print(f"lyapunov audit = {lyapunov_audit(traj):.3e}")
    return EXIT_OK


def cmd_bounds(cfg: DesignConfig, args) -> int:
    _require_eps(cfg)
    x0 = _state(cfg, args.x0)
    ocp = cfg.ocp()
    a = analysis.alpha(ocp, x0)
    rep = analysis.violation_bounds(ocp.design.state_spec, ocp.design.input_spec, a, cfg.eps)
    levels = analysis.boundary_levels(ocp)
    lines = [f"alpha = {a:.10g}", f"alpha / eps = {a / cfg.eps:.10g}",
             "boundary levels: " + ", ".join(f"{k} = {v:.10g}" for k, v in levels.items()),
             "row  set  bound  signed_margin"]
    for name, z, mg in (("x", rep.z_x, rep.margin_x), ("u", rep.z_u, rep.margin_u)):
        lines += [f"{i:3d}  {name}  {zi:.6e}  {mi:.6e}" for i, (zi, mi) in enumerate(zip(z, mg))]
    lines.append(f"max violation bound = {rep.max_bound:.6e}")
    _emit("\n".join(lines), args.out)
    return EXIT_OK


def cmd_tune_delta(cfg: DesignConfig, args) -> int:
    _require_eps(cfg)
    factory = cfg.ocp
    if args.vertices:
        sets = [("vertices", _points(args.vertices))]
        if sets[0][1].shape[1] != cfg.n:
            raise ConfigError(f"--vertices rows need {cfg.n} entries")
    else:
        pts = analysis.feasible_set_rays(cfg.ocp(), n_dirs=args.n_dirs, seed=cfg.seed)
        kappas = _vector(args.kappa, "--kappa") if args.kappa else np.array([1.0])
        sets = [(f"kappa={k:g}", k * pts) for k in kappas]
    lines = ["set  delta_bar_0  halvings  max_bound"]
    status = EXIT_OK
    for label, pts in sets:
        try:
            r = analysis.tune_delta(factory, pts, args.z_tol, max_halvings=args.max_halvings)
            lines.append(f"{label}  {r.delta:.6e}  {r.halvings}  {r.report.max_bound:.6e}")
        except NotTerminated as exc:
            last = exc.result
            tail = "" if last is None else f"  last delta {last.delta:.3e}, " \
                f"bound {last.report.max_bound:.3e}"
            lines.append(f"{label}  not terminated ({exc}){tail}")
            status = EXIT_NOT_TERMINATED
    _emit("\n".join(lines), args.out)
    return status


def cmd_compare(cfg: DesignConfig, args) -> int:
    _require_eps(cfg)
    x0 = _state(cfg, args.x0)
    c = analysis.compare_schemes(cfg.design(), x0)
    lines = ["scheme       value                 u0",
             f"relaxed      {c.relaxed_value:<21.14g} {_vec(c.relaxed_input)}",
             f"exact        {c.exact_value:<21.14g} {_vec(c.exact_input)}",
             f"constrained  {c.qp_value:<21.14g} {_vec(c.qp_input)}",
             f"relaxed min slack = {c.min_slack:.6e}",
             f"exact min slack = {c.exact_min_slack:.6e}"]
    if np.isfinite(c.exact_value):
        lines.append(f"relaxed - exact value = {c.relaxed_value - c.exact_value:.6e}")
    if c.qp_in_terminal_set is not None:
        lines.append(f"constrained terminal state in X_f: {c.qp_in_terminal_set}")
    _emit("\n".join(lines), args.out)
    return EXIT_OK


COMMANDS = {"design": cmd_design, "solve": cmd_solve, "simulate": cmd_simulate,
            "bounds": cmd_bounds, "tune-delta": cmd_tune_delta, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="relaxed-mpc",
        description="Relaxed logarithmic barrier MPC: design, solve, simulate and analyze.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True,
                   help="JSON design config, or 'bundled' for the double integrator")
    p.add_argument("--x0", help="initial state, comma separated")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output file (CSV for simulate/solve, report otherwise)")
    p.add_argument("--strategy", help="overrides the config strategy")
    p.add_argument("--delta", type=float, help="overrides the config delta")
    p.add_argument("--eps", type=float, help="overrides the config eps")
    p.add_argument("--w-bound", help="disturbance box half-widths, comma separated")
    p.add_argument("--w-decay", type=float, help="geometric decay of the disturbance")
    p.add_argument("--z-tol", type=float, default=0.0, help="tolerated violation for tune-delta")
    p.add_argument("--kappa", help="scalings of the feasible set for tune-delta")
    p.add_argument("--vertices", help="tune-delta initial set as points 'a,b;c,d'")
    p.add_argument("--n-dirs", type=int, default=32, help="ray directions for the feasible set")
    p.add_argument("--max-halvings", type=int, default=60)
    return p


def _join_negative_values(argv):
    """Let ``--x0 -1.75,-1`` work by gluing such values to their flag."""
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in _VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-") \
                and argv[i + 1][1:2] in "0123456789.":
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def main(argv=None) -> int:
    argv = _join_negative_values(list(_sys.argv[1:] if argv is None else argv))
    args = build_parser().parse_args(argv)
    try:
        path = bundled_config_path() if args.config == "bundled" else args.config
        cfg = load_config(path)
        cfg = cfg.replace(strategy=args.strategy, delta=args.delta, eps=args.eps)
        if spectral_radius(cfg.A) > 1.2 and cfg.N > 30:
            print("warning: spectral radius of A exceeds 1.2 with N > 30; the condensed "
                  "problem may be badly conditioned", file=_sys.stderr)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, StrategyError, DimensionMismatch) as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=_sys.stderr)
        return EXIT_SOLVER
    except NotTerminated as exc:
        print(f"not terminated: {exc}", file=_sys.stderr)
        return EXIT_NOT_TERMINATED
    except RelaxedMpcError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
