"""A-priori closed-loop guarantees.

The key quantity is ``alpha(x0) = J*(x0) - x0' P_uc x0``: along any
undisturbed closed loop started at ``x0`` each stage barrier value stays below
``alpha / eps``. Sublevel sets of the barriers then bound how far any
constraint can be violated.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .barriers import (BarrierSpec, Polytope, barrier_boundary_level, barrier_eval,
                       relax_eval)
from .errors import Infeasible, NoRoot, NotTerminated, SolverFailure
from .linsys import solve_dare
from .ocp import CondensedOcp, OcpDesign, condense, newton_solve
from .qp import solve_qp

__all__ = [
    "ViolationReport", "RegionCertificate", "unconstrained_cost_matrix", "alpha",
    "alpha_max", "beta2_closed_form", "gradient_row_root", "weight_violation",
    "violation_bounds", "boundary_levels", "region_certificate", "polytope_vertices",
    "feasible_set_rays", "tune_delta", "default_initial_delta", "TuneResult",
    "SchemeComparison", "constrained_reference", "compare_schemes", "stage_slacks",
]


def unconstrained_cost_matrix(ocp: CondensedOcp) -> np.ndarray:
    d = ocp.design
    return solve_dare(d.sys, d.Q, d.R)[0]


def alpha(ocp: CondensedOcp, x0, P_uc=None, warm_start=None) -> float:
    """``J*(x0) - x0' P_uc x0``; nonnegative for the stabilizing designs."""
    x0 = np.asarray(x0, dtype=float).ravel()
    P_uc = unconstrained_cost_matrix(ocp) if P_uc is None else P_uc
    return float(newton_solve(ocp, x0, warm_start).value - x0 @ P_uc @ x0)


def alpha_max(ocp: CondensedOcp, points, P_uc=None) -> float:
    """Largest ``alpha`` over a set of points (e.g. polytope vertices)."""
    P_uc = unconstrained_cost_matrix(ocp) if P_uc is None else P_uc
    return max(alpha(ocp, v, P_uc) for v in np.atleast_2d(points))


# --- scalar bounds -------------------------------------------------------

def beta2_closed_form(d, delta, level):
    """Smallest slack ``s`` with ``beta_2(s) + ln d + s/d - 1 = level``.

    Only valid when that slack lies in the quadratic branch (``s <= delta``);
    returns ``nan`` when the discriminant is negative.
    """
    d, delta, level = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                            for a in (d, delta, level)))
    g1 = 2.0 - delta / d
    g2 = 1.0 + 2.0 * np.log(d / delta) - 2.0 * level
    disc = g1 ** 2 - g2
    with np.errstate(invalid="ignore"):
        out = delta * (g1 - np.sqrt(disc))
    out = np.where(disc >= 0, out, np.nan)
    return float(out) if out.ndim == 0 else out


def _gradient_row(rf, d, s):
    return relax_eval(rf, s)[0] + np.log(d) + s / d - 1.0


def gradient_row_root(rf, d: float, level: float) -> float:
    """Smallest slack at which one gradient-recentered row reaches ``level``.

    The row term is convex in the slack with minimum 0 at ``s = d``. Uses the
    closed form for the quadratic relaxing function when the root lies in its
    branch, and bracketing root finding otherwise.

    Raises
    ------
    NoRoot
        If ``level < 0`` (below the minimum of the row term).
    """
    if level < 0:
        raise NoRoot(f"level {level:.6g} is below the minimum 0 of the barrier row")
    if level == 0:
        return float(d)
    delta = rf.delta
    at_delta = _gradient_row(rf, d, delta) if delta < d else 0.0
    if level >= at_delta:
        if rf.kind == "polynomial" and rf.k == 2:
            return beta2_closed_form(d, delta, level)
        hi, lo = delta, delta - max(d, 1.0)
        while _gradient_row(rf, d, lo) < level:
            lo = delta - 2.0 * (delta - lo)
    else:
        lo, hi = delta, d
    return float(brentq(lambda s: _gradient_row(rf, d, s) - level, lo, hi,
                        xtol=1e-15, rtol=1e-15, maxiter=500))


def _minimize_tilted(spec, c, mu, z0, tol=1e-12, max_iter=200):
    """Newton on ``B(z) - mu c'z``."""
    z = z0.copy()
    f, g, h = barrier_eval(spec, z)
    f, g = f - mu * c @ z, g - mu * c
    for _ in range(max_iter):
        step = -np.linalg.solve(h, g)
        dec = -g @ step
        if dec / 2 <= tol * max(1.0, abs(f)):
            return z
        t = 1.0
        while True:
            zn = z + t * step
            fn, gn, hn = barrier_eval(spec, zn)
            fn -= mu * c @ zn
            if fn <= f - 1e-4 * t * dec or t < 1e-14:
                break
            t *= 0.5
        if fn >= f:
            return z
        z, f, g, h = zn, fn, gn - mu * c, hn
    raise SolverFailure("tilted barrier minimization did not converge")


def weight_violation(spec: BarrierSpec, i: int, level: float, tol: float = 1e-10) -> float:
    """``max C_i z - d_i`` over ``{z : B(z) <= level}`` (signed).

    The maximizer satisfies ``grad B(z) = mu C_i'`` for a multiplier
    ``mu >= 0``; ``mu`` is found by root finding on ``B(z(mu)) = level``.
    Requires a bounded polytope (positive definite barrier Hessian).
    """
    P = spec.polytope
    c, d = P.C[i], P.d[i]
    if level < 0:
        raise NoRoot("negative level")
    if level == 0:
        return -float(d)
    z_cache = {0.0: np.zeros(P.r)}

    def h(mu):
        start = z_cache[max(k for k in z_cache if k <= mu)]
        z = _minimize_tilted(spec, c, mu, start)
        z_cache[mu] = z
        return barrier_eval(spec, z)[0] - level

    hi = 1.0
    while h(hi) < 0:
        hi *= 2.0
        if hi > 1e300:
            raise NoRoot("sublevel set appears unbounded")
    mu = brentq(h, 0.0, hi, xtol=1e-14, rtol=tol, maxiter=300)
    z = _minimize_tilted(spec, c, mu, z_cache[max(k for k in z_cache if k <= mu)])
    return float(c @ z - d)


def _spec_bounds(spec: BarrierSpec, level: float) -> np.ndarray:
    P = spec.polytope
    if spec.recentering == "gradient":
        return np.array([-gradient_row_root(spec.relaxing, di, level) for di in P.d])
    return np.array([weight_violation(spec, i, level) for i in range(P.q)])


@dataclass(frozen=True)
class ViolationReport:
    """Per-row bounds on the closed-loop constraint violation.

    ``z_x``/``z_u`` are clipped at zero (a violation cannot be negative);
    ``margin_x``/``margin_u`` keep the sign, negative values being a
    guaranteed distance to the constraint.
    """

    z_x: np.ndarray
    z_u: np.ndarray
    margin_x: np.ndarray
    margin_u: np.ndarray
    alpha: float
    delta: float
    eps: float

    @property
    def max_bound(self) -> float:
        return float(max(self.z_x.max(), self.z_u.max()))

    @property
    def max_margin(self) -> float:
        return float(max(self.margin_x.max(), self.margin_u.max()))


def violation_bounds(state_spec: BarrierSpec, input_spec: BarrierSpec, alpha_hat: float,
                     eps: float, alpha_tol: float = 1e-9) -> ViolationReport:
    """Worst-case violations implied by ``B(z) <= alpha_hat / eps``.

    Gradient-recentered barriers are bounded row by row (each row term is
    nonnegative); weight-recentered barriers use the exact convex program.

    Raises
    ------
    NoRoot
        If ``alpha_hat`` is negative beyond ``alpha_tol``.
    """
    if alpha_hat < -alpha_tol:
        raise NoRoot(f"alpha = {alpha_hat:.3g} < 0: the predicted cost is below the LQR cost")
    level = max(alpha_hat, 0.0) / eps
    mx = _spec_bounds(state_spec, level)
    mu = _spec_bounds(input_spec, level)
    return ViolationReport(np.maximum(mx, 0.0), np.maximum(mu, 0.0), mx, mu,
                           float(alpha_hat), state_spec.relaxing.delta, float(eps))


# --- certified regions ---------------------------------------------------

def boundary_levels(ocp: CondensedOcp) -> dict:
    """Boundary barrier levels of the state, input and (relaxed) terminal sets."""
    d = ocp.design
    out = {"x": barrier_boundary_level(d.state_spec).value,
           "u": barrier_boundary_level(d.input_spec).value}
    if d.strategy == "relaxed-xf":
        out["f"] = float(relax_eval(d.state_spec.relaxing, 0.0)[0])
    return out


@dataclass(frozen=True)
class RegionCertificate:
    """Sublevel-set region with a membership test.

    ``kind="value"``: ``J*(x) <= eps * beta_bar``.
    ``kind="alpha"``: ``x`` in X and ``alpha(x) <= eps * beta_bar'``.
    """

    kind: str
    threshold: float
    levels: dict
    membership: Callable

    def contains(self, x) -> bool:
        return bool(self.membership(x))


def region_certificate(ocp: CondensedOcp, kind: str = "value") -> RegionCertificate:
    """Region of initial states with guaranteed constraint satisfaction."""
    d = ocp.design
    levels = boundary_levels(ocp)
    if kind == "value":
        thr = d.eps * min(levels.values())

        def member(x):
            return newton_solve(ocp, x).value <= thr
    elif kind == "alpha":
        thr = d.eps * min(levels["x"], levels["u"])
        P_uc = unconstrained_cost_matrix(ocp)

        def member(x):
            x = np.asarray(x, dtype=float).ravel()
            return d.state_spec.polytope.contains(x) and alpha(ocp, x, P_uc) <= thr
    else:
        raise ValueError(f"unknown region kind {kind!r}")
    return RegionCertificate(kind, float(thr), levels, member)


# --- initial-condition sets ----------------------------------------------

def polytope_vertices(P: Polytope, tol: float = 1e-9) -> np.ndarray:
    """Vertices of a bounded H-polytope by enumerating row subsets (small n)."""
    C, d = P.C, P.d
    r = P.r
    verts = []
    for rows in itertools.combinations(range(P.q), r):
        A = C[list(rows)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        v = np.linalg.solve(A, d[list(rows)])
        if np.all(C @ v <= d + tol * np.maximum(1.0, np.abs(d))):
            if not any(np.linalg.norm(v - w) < 1e-9 * max(1.0, np.linalg.norm(v)) for w in verts):
                verts.append(v)
    return np.array(verts)


def feasible_set_rays(ocp: CondensedOcp, n_dirs: int = 32, seed: int = 0) -> np.ndarray:
    """Boundary points of the exact-MPC feasible set along ``n_dirs`` rays.

    The feasible set contains every state steerable within ``N`` steps into
    the terminal region (the terminal ellipsoid for ``*-xf``, the origin for
    ``quadratic``, the tail constraints for ``tail-*``) while meeting state
    and input constraints. Its convex hull of the returned points is an inner
    approximation.
    """
    import cvxpy as cp

    design = ocp.design
    sys, N, n, m = design.sys, design.N, design.sys.n, design.sys.m
    if n == 2:
        th = np.linspace(0.0, 2 * np.pi, n_dirs, endpoint=False)
        dirs = np.column_stack([np.cos(th), np.sin(th)])
    else:
        dirs = np.random.default_rng(seed).standard_normal((n_dirs, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    px, pu = design.state_spec.polytope, design.input_spec.polytope
    term = design.terminal
    t = cp.Variable()
    X = cp.Variable((N + 1, n))
    U = cp.Variable((N, m))
    direction = cp.Parameter(n)
    cons = [X[0] == t * direction]
    for k in range(N):
        cons += [X[k + 1] == sys.A @ X[k] + sys.B @ U[k],
                 px.C @ X[k] <= px.d, pu.C @ U[k] <= pu.d]
    if term.terminal_set is not None:
        L = np.linalg.cholesky(term.terminal_set.P_f)
        cons += [cp.norm(L.T @ X[N]) <= 1.0]
    elif term.tail is not None:
        for Z, G in zip(term.tail.state_maps[:-1], term.tail.gains):
            cons += [px.C @ Z @ X[N] <= px.d, pu.C @ G @ X[N] <= pu.d]
    else:
        cons += [X[N] == 0]
    prob = cp.Problem(cp.Maximize(t), cons)
    pts = []
    for dvec in dirs:
        direction.value = dvec
        prob.solve(solver=cp.CLARABEL)
        if prob.status not in ("optimal", "optimal_inaccurate"):
            raise SolverFailure(f"feasible-set ray problem failed ({prob.status})")
        pts.append(t.value * dvec)
    return np.array(pts)


# --- relaxation tuning ---------------------------------------------------

def default_initial_delta(state_spec: BarrierSpec, input_spec: BarrierSpec) -> float:
    dmin = min(state_spec.polytope.d.min(), input_spec.polytope.d.min())
    return min(1.0, dmin) / 2.0


@dataclass(frozen=True)
class TuneResult:
    delta: float
    report: ViolationReport
    halvings: int
    history: tuple


def tune_delta(ocp_factory: Callable[[float], CondensedOcp], X0, z_tol: float,
               gamma: float = 0.5, delta0: float | None = None,
               max_halvings: int = 60, delta_floor: float | None = None) -> TuneResult:
    """Largest ``delta`` in ``delta0 * gamma**k`` whose violation bounds meet ``z_tol``.

    ``ocp_factory(delta)`` builds the problem for a relaxation parameter.
    ``X0`` is a polytope or an array of points (vertices); ``alpha`` over
    ``X0`` is taken as the maximum over these points, which is exact only if
    ``alpha`` is convex in ``x``.

    Trials below ``delta_floor`` (default ``1e3 * machine eps * max d``) are
    not attempted: a level set that close to the boundary cannot be told
    apart from it in double precision, so a zero bound there is round-off.

    Raises
    ------
    NotTerminated
        If ``max_halvings`` reductions or the floor are reached first; the
        last result is attached.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    pts = polytope_vertices(X0) if isinstance(X0, Polytope) else np.atleast_2d(
        np.asarray(X0, dtype=float))
    if delta0 is None:
        probe = ocp_factory(1e-6).design
        delta0 = default_initial_delta(probe.state_spec, probe.input_spec)
    else:
        probe = None
    if delta_floor is None:
        probe = probe or ocp_factory(delta0).design
        dmax = max(probe.state_spec.polytope.d.max(), probe.input_spec.polytope.d.max())
        delta_floor = 1e3 * np.finfo(float).eps * dmax
    history = []
    last = None
    for k in range(max_halvings + 1):
        trial = delta0 * gamma ** k
        if trial < delta_floor:
            raise NotTerminated(f"no admissible delta above the floor {delta_floor:.3g} "
                                f"after {k} reductions", last)
        ocp = ocp_factory(trial)
        a = alpha_max(ocp, pts)
        rep = violation_bounds(ocp.design.state_spec, ocp.design.input_spec, a, ocp.eps)
        history.append((trial, rep.max_bound))
        last = TuneResult(trial, rep, k, tuple(history))
        if rep.max_bound <= z_tol:
            return last
    raise NotTerminated(f"no admissible delta after {max_halvings} reductions", last)


# --- comparison with conventional MPC --------------------------------------

def stage_slacks(ocp: CondensedOcp, U, x, terminal: bool = False) -> np.ndarray:
    """Slacks of all stage (and tail) constraint rows for inputs ``U`` at ``x``.

    ``terminal=True`` appends ``1 - x_N' P_f x_N`` when there is a terminal set.
    """
    U = np.asarray(U, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    s = [blk.d - blk.Gu @ U - blk.Gx @ x for blk in ocp.blocks]
    if terminal and ocp.terminal_P_f is not None:
        x_N = ocp.terminal_state(U, x)
        s.append([1.0 - x_N @ ocp.terminal_P_f @ x_N])
    return np.concatenate(s)


def constrained_reference(ocp: CondensedOcp, x):
    """Conventional MPC solution: the quadratic cost under hard linear constraints.

    Stage and tail rows become inequalities; an ellipsoidal terminal set is
    left out (it is not polyhedral), so the result is only comparable when
    the terminal constraint is inactive.

    Raises
    ------
    Infeasible
        If no input sequence satisfies the hard constraints.
    """
    x = np.asarray(x, dtype=float).ravel()
    rows = [(blk.Gu, blk.d - blk.Gx @ x) for blk in ocp.blocks]
    A = np.vstack([G for G, _ in rows])
    b = np.concatenate([r for _, r in rows])
    fixed = np.all(A == 0.0, axis=1)
    if np.any(b[fixed] < 0):
        raise Infeasible("the initial state violates the state constraints")
    res = solve_qp(ocp.H, ocp.F.T @ x, A[~fixed], b[~fixed])
    return res.x, float(res.value + x @ ocp.Y @ x)


@dataclass(frozen=True)
class SchemeComparison:
    """Relaxed, exact barrier and hard-constrained solutions at one state.

    Unavailable entries (exact barrier outside its domain, infeasible QP)
    are ``nan``. ``min_slack`` is the smallest constraint slack of the
    relaxed solution (negative means the relaxed prediction violates a
    constraint); ``qp_in_terminal_set`` reports whether the QP terminal
    state lies in the ellipsoid left out of the QP.
    """

    x0: np.ndarray
    relaxed_value: float
    relaxed_input: np.ndarray
    exact_value: float
    exact_input: np.ndarray
    qp_value: float
    qp_input: np.ndarray
    min_slack: float
    exact_min_slack: float
    qp_in_terminal_set: bool | None


def compare_schemes(design: OcpDesign, x0) -> SchemeComparison:
    """Solve the relaxed, the exact barrier and the hard-constrained problem at ``x0``."""
    x0 = np.asarray(x0, dtype=float).ravel()
    m = design.sys.m
    relaxed = condense(design)
    r = newton_solve(relaxed, x0)
    nan_u = np.full(m, np.nan)
    exact = condense(design, exact=True)
    try:
        warm = r.U if np.all(stage_slacks(exact, r.U, x0) > 0) else None
        e = newton_solve(exact, x0, warm)
        exact_value, exact_u = e.value, e.U[:m]
        exact_slack = float(stage_slacks(exact, e.U, x0, terminal=True).min())
    except SolverFailure:
        exact_value, exact_u, exact_slack = np.nan, nan_u, np.nan
    try:
        U_qp, qp_value = constrained_reference(relaxed, x0)
        qp_u = U_qp[:m]
        ts = design.terminal.terminal_set
        in_xf = None if ts is None else bool(ts.contains(relaxed.terminal_state(U_qp, x0)))
    except Infeasible:
        qp_value, qp_u, in_xf = np.nan, nan_u, None
    return SchemeComparison(x0, r.value, r.U[:m], exact_value, exact_u, qp_value, qp_u,
                            float(stage_slacks(relaxed, r.U, x0, terminal=True).min()),
                            exact_slack, in_xf)
