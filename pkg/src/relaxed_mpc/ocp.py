"""Condensed open-loop problem and its damped Newton solver.

The horizon cost is written purely in the stacked input ``U``::

    J(U, x) = 0.5 U'HU + x'FU + x'Yx + eps * (stage and tail barriers) + eps * B_f(x_N)

where every stage or tail barrier row is affine in ``(U, x)`` and the terminal
set barrier (if any) acts on the predicted terminal state.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .barriers import BarrierSpec, RelaxingFunction, relax_eval, row_terms
from .errors import DimensionMismatch, DomainEscape, MaxIterations, SolverFailure
from .linsys import LtiSystem
from .terminal import (TerminalCost, build_terminal_cost, stage_cost,
                       terminal_barrier_exact, terminal_barrier_relaxed)

__all__ = [
    "OcpDesign", "CondensedOcp", "SolveResult", "SolverOptions", "prediction_matrices",
    "condense", "eval_cost", "newton_solve", "mpc_feedback", "shift_warm_start",
]


@dataclass(frozen=True)
class OcpDesign:
    """Everything that defines the relaxed barrier MPC problem."""

    sys: LtiSystem
    Q: np.ndarray
    R: np.ndarray
    N: int
    eps: float
    state_spec: BarrierSpec
    input_spec: BarrierSpec
    terminal: TerminalCost

    @property
    def strategy(self) -> str:
        return self.terminal.strategy

    @property
    def delta(self) -> float:
        return self.state_spec.relaxing.delta

    @classmethod
    def build(cls, sys: LtiSystem, Q, R, N: int, eps: float, state_spec: BarrierSpec,
              input_spec: BarrierSpec, strategy: str, **terminal_options) -> "OcpDesign":
        """Synthesize the terminal cost for ``strategy`` and bundle the design."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        R = np.atleast_2d(np.asarray(R, dtype=float))
        if N < 1:
            raise DimensionMismatch("horizon N must be at least 1")
        term = build_terminal_cost(strategy, sys, Q, R, eps, state_spec, input_spec,
                                   **terminal_options)
        return cls(sys, Q, R, int(N), float(eps), state_spec, input_spec, term)

    def stage_cost(self, x, u, exact: bool = False):
        return stage_cost(x, u, self.Q, self.R, self.eps, self.state_spec,
                          self.input_spec, exact)


@dataclass(frozen=True)
class SolverOptions:
    grad_tol: float = 1e-10
    decrement_tol: float = 1e-20
    max_iter: int = 200
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 60
    boundary_fraction: float = 0.995


@dataclass(frozen=True)
class _RowBlock:
    """Barrier rows with slack ``s = d - Gu U - Gx x``."""

    Gu: np.ndarray
    Gx: np.ndarray
    d: np.ndarray
    scale: np.ndarray
    linear: np.ndarray
    relaxing: RelaxingFunction | None


@dataclass(frozen=True)
class CondensedOcp:
    """Condensed problem data; see the module docstring for the cost."""

    design: OcpDesign
    H: np.ndarray
    F: np.ndarray
    Y: np.ndarray
    Omega: np.ndarray
    Phi: np.ndarray
    blocks: tuple
    terminal_P_f: np.ndarray | None
    terminal_exact: bool
    exact: bool
    options: SolverOptions = field(default_factory=SolverOptions)

    @property
    def N(self) -> int:
        return self.design.N

    @property
    def n(self) -> int:
        return self.design.sys.n

    @property
    def m(self) -> int:
        return self.design.sys.m

    @property
    def eps(self) -> float:
        return self.design.eps

    @property
    def globally_defined(self) -> bool:
        return not (self.exact or self.terminal_exact)

    def predict(self, U, x):
        """Predicted states ``x_0 .. x_N`` as an ``(N+1, n)`` array."""
        U = np.asarray(U, dtype=float)
        x = np.asarray(x, dtype=float)
        xs = (self.Omega @ x + self.Phi @ U).reshape(self.N, self.n)
        return np.vstack([x, xs])

    def terminal_state(self, U, x):
        n = self.n
        return self.Omega[-n:] @ x + self.Phi[-n:] @ U


def prediction_matrices(sys: LtiSystem, N: int):
    """``Omega = [A; ...; A^N]`` and block lower-triangular ``Phi``, so that
    ``[x_1; ...; x_N] = Omega x_0 + Phi U``."""
    n, m = sys.n, sys.m
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(sys.A @ powers[-1])
    Omega = np.vstack(powers[1:])
    Phi = np.zeros((N * n, N * m))
    for i in range(N):
        for j in range(i + 1):
            Phi[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - j] @ sys.B
    return Omega, Phi


def _tile(spec: BarrierSpec, times: int):
    p = spec.polytope
    return (np.tile(p.d, times), np.tile(spec.scale, times), np.tile(spec.linear, times))


def condense(design: OcpDesign, exact: bool = False,
             options: SolverOptions | None = None) -> CondensedOcp:
    """Build the condensed problem for ``design``.

    ``exact=True`` replaces every relaxed barrier by the exact logarithm; the
    resulting problem is only defined on strictly feasible inputs and serves
    as a reference.
    """
    sys, N, n, m = design.sys, design.N, design.sys.n, design.sys.m
    term = design.terminal
    if design.Q.shape != (n, n) or design.R.shape != (m, m):
        raise DimensionMismatch("weights do not match the system dimensions")
    Omega, Phi = prediction_matrices(sys, N)
    Qt = sla.block_diag(*([design.Q] * (N - 1) + [term.P]))
    Rt = np.kron(np.eye(N), design.R)
    H = 2.0 * (Rt + Phi.T @ Qt @ Phi)
    H = 0.5 * (H + H.T)
    F = 2.0 * Omega.T @ Qt @ Phi
    Y = design.Q + Omega.T @ Qt @ Omega

    # stage k state rows act on x_k = Omega_k x + Phi_k U (x_0 = x)
    Om_stage = np.vstack([np.eye(n), Omega[:-n]])
    Ph_stage = np.vstack([np.zeros((n, N * m)), Phi[:-n]])
    Cx, Cu = design.state_spec.polytope.C, design.input_spec.polytope.C
    Gx_state = np.kron(np.eye(N), Cx) @ Om_stage
    Gu_state = np.kron(np.eye(N), Cx) @ Ph_stage
    Gu_input = np.kron(np.eye(N), Cu)
    Gx_input = np.zeros((Gu_input.shape[0], n))
    n_state, n_input = N, N
    if term.tail is not None:
        T = term.tail.T
        Om_N, Ph_N = Omega[-n:], Phi[-n:]
        Z = term.tail.state_maps[:-1].reshape(T * n, n)
        V = term.tail.gains.reshape(T * m, n)
        CZ = np.kron(np.eye(T), Cx) @ Z
        CV = np.kron(np.eye(T), Cu) @ V
        Gx_state = np.vstack([Gx_state, CZ @ Om_N])
        Gu_state = np.vstack([Gu_state, CZ @ Ph_N])
        Gx_input = np.vstack([Gx_input, CV @ Om_N])
        Gu_input = np.vstack([Gu_input, CV @ Ph_N])
        n_state += T
        n_input += T

    rf_x = None if exact else design.state_spec.relaxing
    rf_u = None if exact else design.input_spec.relaxing
    blocks = (
        _RowBlock(Gu_state, Gx_state, *_tile(design.state_spec, n_state), rf_x),
        _RowBlock(Gu_input, Gx_input, *_tile(design.input_spec, n_input), rf_u),
    )
    P_f = term.terminal_set.P_f if term.terminal_set is not None else None
    terminal_exact = term.strategy == "nonrelaxed-xf" or (exact and P_f is not None)
    return CondensedOcp(design, H, F, Y, Omega, Phi, blocks, P_f, terminal_exact,
                        exact, options or SolverOptions())


def _terminal_term(ocp: CondensedOcp):
    if ocp.terminal_P_f is None:
        return None
    ts = ocp.design.terminal.terminal_set
    if ocp.terminal_exact:
        return terminal_barrier_exact(ts)
    return terminal_barrier_relaxed(ts, ocp.design.state_spec.relaxing)


def _evaluate(ocp: CondensedOcp, U, x, need_hessian=True, exact_weight=None):
    """Cost pieces: value, gradient, dense Hessian part and a rank-one term.

    The full Hessian is ``dense + c * v v'``; the rank-one part comes from the
    terminal set barrier and can be huge close to its boundary, so it is kept
    apart for a stable Newton solve. ``exact_weight`` overrides ``eps`` on
    the exact (unrelaxed) barrier terms only.
    """
    U = np.asarray(U, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    if U.size != ocp.N * ocp.m or x.size != ocp.n:
        raise DimensionMismatch(f"expected U of size {ocp.N * ocp.m} and x of size {ocp.n}")
    eps = ocp.eps
    mu = eps if exact_weight is None else exact_weight
    HU = ocp.H @ U
    value = 0.5 * U @ HU + x @ ocp.F @ U + x @ ocp.Y @ x
    grad = HU + ocp.F.T @ x
    dense = ocp.H.copy() if need_hessian else None
    rank_one = None
    for blk in ocp.blocks:
        w = mu if blk.relaxing is None else eps
        s = blk.d - blk.Gu @ U - blk.Gx @ x
        psi, d1, d2 = row_terms(blk.scale, blk.linear, blk.d, blk.relaxing, s)
        value += w * psi.sum()
        if not np.isfinite(value):
            return np.inf, grad, dense, None
        grad = grad - w * (blk.Gu.T @ d1)
        if need_hessian:
            dense += w * (blk.Gu.T * d2) @ blk.Gu
    B_f = _terminal_term(ocp)
    if B_f is not None:
        w = mu if ocp.terminal_exact else eps
        n = ocp.n
        Ph_N = ocp.Phi[-n:]
        x_N = ocp.terminal_state(U, x)
        s_f = 1.0 - x_N @ (ocp.terminal_P_f @ x_N)  # same rounding as B_f
        v, g_f, _ = B_f(x_N)
        value += w * v
        if not np.isfinite(value):
            return np.inf, grad, dense, None
        grad = grad + w * (Ph_N.T @ g_f)
        if need_hessian:
            if ocp.terminal_exact:
                if s_f <= 0:
                    return np.inf, grad, dense, None
                f1, f2 = -1.0 / s_f, 1.0 / s_f ** 2
            else:
                _, f1, f2 = relax_eval(ocp.design.state_spec.relaxing, s_f)
            PfPh = ocp.terminal_P_f @ Ph_N
            dense += w * (-2.0 * f1) * (Ph_N.T @ PfPh)
            rank_one = (w * 4.0 * f2, PfPh.T @ x_N)
    return float(value), grad, dense, rank_one


def eval_cost(ocp: CondensedOcp, U, x, need_hessian: bool = True):
    """Value, gradient and Hessian of the condensed cost with respect to ``U``.

    Outside the domain of an exact barrier the value is ``inf``.
    """
    f, g, dense, rank_one = _evaluate(ocp, U, x, need_hessian)
    return f, g, _full(dense, rank_one) if need_hessian else None


def _newton_direction(dense, rank_one, g):
    """Solve ``(dense + c v v') p = -g`` by Sherman-Morrison on a Cholesky factor."""
    try:
        cho = sla.cho_factor(dense)
        solve = lambda b: sla.cho_solve(cho, b)  # noqa: E731
    except np.linalg.LinAlgError:
        solve = _spectral_solver(dense)
    p = -solve(g)
    if rank_one is not None:
        c, v = rank_one
        Av = solve(v)
        p = p - Av * (c * (v @ p)) / (1.0 + c * (v @ Av))
    return p


def _spectral_solver(M):
    """Solver for a positive definite matrix whose Cholesky factorization failed
    through round-off; tiny or negative eigenvalues are lifted to a floor."""
    lam, V = np.linalg.eigh(0.5 * (M + M.T))
    floor = max(lam.max(), 1.0) * 1e-15
    if lam.max() <= 0:
        raise np.linalg.LinAlgError("Newton matrix is not positive definite")
    lam = np.maximum(lam, floor)
    return lambda b: V @ ((V.T @ b) / lam)


@dataclass
class SolveResult:
    U: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    backtracks: int
    hessian: np.ndarray | None = None


def _max_step(ocp: CondensedOcp, U, x, p):
    """Largest ``t`` keeping exact barriers finite, times the boundary fraction."""
    t_max = np.inf
    if ocp.exact:
        for blk in ocp.blocks:
            s = blk.d - blk.Gu @ U - blk.Gx @ x
            rate = blk.Gu @ p
            hit = rate > 0
            if hit.any():
                t_max = min(t_max, np.min(s[hit] / rate[hit]))
    if ocp.terminal_exact:
        P_f = ocp.terminal_P_f
        n = ocp.n
        xN = ocp.terminal_state(U, x)
        dN = ocp.Phi[-n:] @ p
        a, b = dN @ P_f @ dN, 2.0 * xN @ P_f @ dN
        s = max(1.0 - xN @ (P_f @ xN), 0.0)
        if a > 0:
            # positive root of a t^2 + b t - s, written without cancellation
            root = np.sqrt(b * b + 4.0 * a * s)
            t_max = min(t_max, 2.0 * s / (b + root) if b > 0 else (root - b) / (2.0 * a))
    return ocp.options.boundary_fraction * t_max


def _terminal_hull(P_f, seed=0):
    """Points on ``0.99 * boundary(X_f)``; their convex hull lies inside ``X_f``."""
    n = P_f.shape[0]
    rng = np.random.default_rng(seed)
    dirs = np.vstack([np.eye(n), -np.eye(n), rng.standard_normal((16 * n, n))])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    L = np.linalg.cholesky(P_f)
    return 0.99 * sla.solve_triangular(L.T, dirs.T, lower=False)


def _feasible_start(ocp: CondensedOcp, x):
    """Start maximizing the smallest stage slack (an LP).

    With a terminal set the terminal state is a convex combination of points
    inside the ellipsoid. Falls back to the minimum-norm inputs with
    ``x_N = 0`` if the LP fails.
    """
    from scipy.optimize import linprog

    n, nU = ocp.n, ocp.N * ocp.m
    Ph_N, Om_N = ocp.Phi[-n:], ocp.Omega[-n:]
    V = _terminal_hull(ocp.terminal_P_f) if ocp.terminal_P_f is not None else None
    nl = 0 if V is None else V.shape[1]
    A_ub = np.vstack([np.hstack([blk.Gu, np.ones((blk.Gu.shape[0], 1)),
                                 np.zeros((blk.Gu.shape[0], nl))]) for blk in ocp.blocks])
    b_ub = np.concatenate([blk.d - blk.Gx @ x for blk in ocp.blocks])
    A_eq = b_eq = None
    if V is not None:
        # x_N = V lam, lam >= 0, sum(lam) = 1
        A_eq = np.vstack([np.hstack([Ph_N, np.zeros((n, 1)), -V]),
                          np.concatenate([np.zeros(nU + 1), np.ones(nl)])])
        b_eq = np.concatenate([-Om_N @ x, [1.0]])
    cost = np.zeros(nU + 1 + nl)
    cost[nU] = -1.0
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * nU + [(None, 1.0)] + [(0.0, None)] * nl,
                  method="highs")
    if res.status == 0:
        return res.x[:nU]
    U = -np.linalg.pinv(Ph_N) @ (Om_N @ x)
    if np.linalg.norm(ocp.terminal_state(U, x)) > 1e-8 * max(1.0, np.linalg.norm(x)):
        raise DomainEscape("terminal state cannot be pinned to the origin "
                           "(horizon too short or system not controllable)")
    return U


def _full(dense, rank_one):
    if rank_one is None:
        return dense
    c, v = rank_one
    return dense + c * np.outer(v, v)


def _newton(ocp, x, U, opt, weight=None, stage_tol=None):
    """Damped Newton iterations from ``U``; returns ``(U, f, g, H, iters, backtracks)``."""
    dec_tol = opt.decrement_tol if stage_tol is None else stage_tol
    f, g, Hs, r1 = _evaluate(ocp, U, x, exact_weight=weight)
    backtracks = 0
    for it in range(opt.max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if stage_tol is None and gnorm <= opt.grad_tol * max(1.0, np.linalg.norm(U)):
            return U, f, g, _full(Hs, r1), it, backtracks
        if it == opt.max_iter:
            break
        try:
            p = _newton_direction(Hs, r1, g)
        except np.linalg.LinAlgError as exc:
            raise SolverFailure("Newton system is not positive definite", gnorm) from exc
        slope = float(g @ p)
        if -slope / 2 <= dec_tol * max(1.0, abs(f)):
            return U, f, g, _full(Hs, r1), it, backtracks
        t0 = t = min(1.0, _max_step(ocp, U, x, p))
        for _ in range(opt.max_backtracks):
            f_new, g_new, H_new, r1_new = _evaluate(ocp, U + t * p, x, exact_weight=weight)
            if f_new <= f + opt.armijo * t * slope and f_new < f:
                break
            t *= opt.shrink
            backtracks += 1
        else:
            # at the round-off floor of f the gradient norm is the only merit left
            if -slope / 2 > 1e-9 * max(1.0, abs(f)):
                raise SolverFailure("line search failed", gnorm)
            t = t0
            f_new, g_new, H_new, r1_new = _evaluate(ocp, U + t * p, x, exact_weight=weight)
            if not (np.isfinite(f_new) and np.linalg.norm(g_new) < 0.5 * gnorm):
                return U, f, g, _full(Hs, r1), it, backtracks
        U, f, g, Hs, r1 = U + t * p, f_new, g_new, H_new, r1_new
    raise MaxIterations(f"Newton did not converge in {opt.max_iter} iterations",
                        float(np.linalg.norm(g)))


def newton_solve(ocp: CondensedOcp, x, warm_start=None,
                 options: SolverOptions | None = None) -> SolveResult:
    """Minimize the condensed cost over ``U`` by damped Newton with Armijo search.

    For problems with an exact barrier (bounded domain) a cold start follows
    the barrier path: the barrier weight starts large and is reduced tenfold
    per stage until it reaches ``eps``; each stage is warm-started from the
    previous one. Warm-started solves go straight to the final weight and
    fall back to path following if that fails.

    Raises
    ------
    DomainEscape
        When an exact barrier is involved and no strictly feasible start exists.
    MaxIterations
        If the iteration cap is reached.
    SolverFailure
        If the line search fails far from a minimizer.
    """
    opt = options or ocp.options
    x = np.asarray(x, dtype=float).ravel()
    U = np.zeros(ocp.N * ocp.m) if warm_start is None else \
        np.asarray(warm_start, dtype=float).ravel().copy()
    cold = warm_start is None
    if not np.isfinite(eval_cost(ocp, U, x, need_hessian=False)[0]):
        U = _feasible_start(ocp, x)
        cold = True
        if not np.isfinite(eval_cost(ocp, U, x, need_hessian=False)[0]):
            raise DomainEscape("no strictly feasible start for the exact barriers")
    total_it = total_bt = 0
    if not ocp.globally_defined and not cold:
        try:
            quick = dataclasses.replace(opt, max_iter=min(opt.max_iter, 30))
            U1, f, g, Hs, it, bt = _newton(ocp, x, U, quick)
            return SolveResult(U1, f, float(np.linalg.norm(g)), it, bt, Hs)
        except SolverFailure as exc:
            total_it += quick.max_iter if isinstance(exc, MaxIterations) else 0
    if not ocp.globally_defined:
        # start with the exact barriers dominating the rest of the cost
        start = abs(eval_cost(ocp, U, x, need_hessian=False)[0])
        stages = int(np.ceil(np.log10(max(start / ocp.eps, 10.0))))
        for k in range(stages, 0, -1):
            weight = ocp.eps * 10.0 ** k
            U, f, g, Hs, it, bt = _newton(ocp, x, U, opt, weight, stage_tol=1e-8)
            total_it += it
            total_bt += bt
    U, f, g, Hs, it, bt = _newton(ocp, x, U, opt)
    return SolveResult(U, f, float(np.linalg.norm(g)), total_it + it, total_bt + bt, Hs)


def mpc_feedback(ocp: CondensedOcp, x, warm_start=None):
    """First input of the optimal sequence."""
    return newton_solve(ocp, x, warm_start).U[:ocp.m]


def shift_warm_start(ocp: CondensedOcp, U, x):
    """Drop the first input and append the terminal policy at the predicted ``x_N``."""
    m = ocp.m
    x_N = ocp.terminal_state(U, x)
    return np.concatenate([np.asarray(U, dtype=float)[m:],
                           ocp.design.terminal.terminal_input(x_N)])
