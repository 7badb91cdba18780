"""Terminal ingredients: ellipsoidal invariant sets and the terminal costs.

Five recipes are supported (``strategy`` tags):

``relaxed-xf``
    ``x'Px + eps * relaxed(-ln(1 - phi(x)))`` with an invariant ellipsoid ``phi``.
``nonrelaxed-xf``
    Same ``P`` but the exact terminal-set barrier.
``tail-deadbeat``
    Cost of a dead-beat continuation of length ``T`` (default ``n``).
``tail-lqr``
    Cost of the zero-terminal-state LQR continuation (default ``T = 2n``).
``quadratic``
    ``x'Px`` from the Riccati equation whose weights absorb a global
    quadratic upper bound of the barriers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .barriers import (BarrierSpec, RelaxingFunction, barrier_value, log_eval,
                       quadratic_upper_bound, relax_eval)
from .errors import StrategyError, Unstable, WrongRelaxing
from .linsys import (LtiSystem, TailSequenceGains, controllability_index, deadbeat_gain,
                     solve_constrained_lyapunov,
                     solve_dare, solve_modified_riccati, spectral_radius,
                     zero_terminal_lqr)

__all__ = [
    "STRATEGIES", "TerminalSet", "TerminalCost", "build_terminal_set",
    "terminal_barrier_relaxed", "terminal_barrier_exact", "build_terminal_cost",
    "stage_cost", "constraint_rows", "deadbeat_tail", "STRATEGY_SUMMARY",
    "DesignCheck", "verify_terminal_cost",
]

STRATEGIES = ("relaxed-xf", "nonrelaxed-xf", "tail-deadbeat", "tail-lqr", "quadratic")

# terminal cost, terminal set, system requirement, relaxing functions,
# region of attraction, closed-loop constraint violation
STRATEGY_SUMMARY = {
    "relaxed-xf": ("x'Px + eps*relaxed B_f(x)", "ellipsoid", "stabilizable",
                   "polynomial or exponential", "sublevel region (local)", "none"),
    "nonrelaxed-xf": ("x'Px + eps*B_f(x)", "ellipsoid", "controllable",
                      "polynomial or exponential", "whole state space",
                      "adjustable by delta"),
    "tail-deadbeat": ("sum of stage costs along a dead-beat tail", "none", "controllable",
                      "polynomial or exponential", "whole state space",
                      "adjustable by delta"),
    "tail-lqr": ("sum of stage costs along a zero-terminal LQR tail", "none",
                 "controllable", "polynomial or exponential", "whole state space",
                 "adjustable by delta"),
    "quadratic": ("x'Px", "none", "stabilizable", "quadratic (polynomial, k=2)",
                  "whole state space", "adjustable by delta"),
}


def stage_cost(x, u, Q, R, eps, state_spec: BarrierSpec, input_spec: BarrierSpec,
               exact: bool = False):
    """Stage cost ``x'Qx + u'Ru + eps (B_x(x) + B_u(u))``; batched over rows."""
    x = np.atleast_2d(x)
    u = np.atleast_2d(u)
    quad = np.einsum("ij,jk,ik->i", x, Q, x) + np.einsum("ij,jk,ik->i", u, R, u)
    bar = barrier_value(state_spec, x, exact) + barrier_value(input_spec, u, exact)
    out = quad + eps * bar
    return float(out[0]) if out.size == 1 else out


def constraint_rows(state_spec: BarrierSpec, input_spec: BarrierSpec, K):
    """State rows and input rows mapped through ``u = Kx``, stacked.

    Returns ``(C, d, scale)`` where ``scale`` holds ``1 + w_i``.
    """
    C = np.vstack([state_spec.polytope.C, input_spec.polytope.C @ K])
    d = np.concatenate([state_spec.polytope.d, input_spec.polytope.d])
    scale = np.concatenate([state_spec.scale, input_spec.scale])
    return C, d, scale


@dataclass(frozen=True)
class TerminalSet:
    """Ellipsoid ``X_f = {x : x' P_f x <= 1}``."""

    P_f: np.ndarray

    def phi(self, x):
        x = np.atleast_2d(x)
        v = np.einsum("ij,jk,ik->i", x, self.P_f, x)
        return float(v[0]) if v.size == 1 else v

    def contains(self, x, tol: float = 0.0) -> bool:
        return bool(np.all(np.atleast_1d(self.phi(x)) <= 1.0 + tol))

    def support(self, C):
        """``max_{x in X_f} C_i x`` for each row of ``C``."""
        C = np.atleast_2d(C)
        return np.sqrt(np.einsum("ij,jk,ik->i", C, np.linalg.inv(self.P_f), C))


def _max_volume_ellipsoid(A_K, C, d, contraction=1.0 - 1e-6):
    import cvxpy as cp

    n = A_K.shape[0]
    E = cp.Variable((n, n), symmetric=True)
    # A_K E A_K' <= contraction * E, written as a linear matrix inequality
    lmi = cp.bmat([[contraction * E, E @ A_K.T], [A_K @ E, E]])
    cons = [0.5 * (lmi + lmi.T) >> 0]
    cons += [C[i] @ E @ C[i] <= d[i] ** 2 for i in range(C.shape[0])]
    prob = cp.Problem(cp.Maximize(cp.log_det(E)), cons)
    prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate") or E.value is None:
        raise Unstable(f"invariant ellipsoid LMI failed ({prob.status})")
    P_f = np.linalg.inv(0.5 * (E.value + E.value.T))
    P_f = 0.5 * (P_f + P_f.T)
    gap = np.linalg.eigvalsh(A_K.T @ P_f @ A_K - P_f).max()
    if gap > 1e-9 * np.linalg.norm(P_f):
        raise Unstable(f"invariant ellipsoid LMI solved inaccurately (gap {gap:.3g})")
    # containment up to solver tolerance; rescale so it holds exactly
    cont = np.einsum("ij,jk,ik->i", C, np.linalg.inv(P_f), C) / d ** 2
    return P_f * max(cont.max(), 1.0)


def build_terminal_set(sys: LtiSystem, K, state_spec: BarrierSpec, input_spec: BarrierSpec,
                       shape: str = "max-volume", margin: float = 0.95) -> TerminalSet:
    """Positively invariant ellipsoid for ``x+ = (A + BK) x`` inside ``margin * X_K``.

    ``X_K`` is the set of states satisfying the state constraints and the input
    constraints under ``u = Kx``. ``shape="lyapunov"`` scales the solution of
    ``A_K' P A_K - P = -I`` with the smallest factor meeting containment;
    ``shape="max-volume"`` maximizes the volume of an invariant ellipsoid
    (semidefinite program). ``margin < 1`` keeps the set strictly inside
    ``X_K``, which the local quadratic bound of the terminal cost needs.

    Raises
    ------
    Unstable
        If ``A + BK`` is not Schur stable.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    A_K = sys.A + sys.B @ K
    if spectral_radius(A_K) >= 1.0:
        raise Unstable(f"closed loop spectral radius {spectral_radius(A_K):.6g} >= 1")
    if not 0 < margin <= 1:
        raise ValueError("margin must lie in (0, 1]")
    C, d, _ = constraint_rows(state_spec, input_spec, K)
    keep = np.linalg.norm(C, axis=1) > 0
    C, d = C[keep], margin * d[keep]
    if shape == "lyapunov":
        P_lyap = solve_constrained_lyapunov(A_K, np.eye(sys.n))
        c = np.max(np.einsum("ij,jk,ik->i", C, np.linalg.inv(P_lyap), C) / d ** 2)
        P_f = c * P_lyap
    elif shape == "max-volume":
        P_f = _max_volume_ellipsoid(A_K, C, d)
    else:
        raise ValueError(f"unknown terminal set shape {shape!r}")
    return TerminalSet(0.5 * (P_f + P_f.T))


def _terminal_barrier(ts, f):
    def B_f(x):
        x = np.asarray(x, dtype=float).ravel()
        Px = ts.P_f @ x
        s = 1.0 - x @ Px
        v, d1, d2 = f(s)
        grad = -2.0 * d1 * Px
        hess = 4.0 * d2 * np.outer(Px, Px) - 2.0 * d1 * ts.P_f
        return float(v), grad, hess
    return B_f


def terminal_barrier_relaxed(ts: TerminalSet, rf: RelaxingFunction):
    """``x -> (B_f, grad, hess)`` for the relaxed ``-ln(1 - phi(x))``."""
    if rf.delta > 1:
        raise ValueError("terminal barrier needs delta <= 1")
    return _terminal_barrier(ts, lambda s: relax_eval(rf, s))


def terminal_barrier_exact(ts: TerminalSet):
    """``x -> (B_f, grad, hess)`` for ``-ln(1 - phi(x))``; ``inf`` outside ``X_f``."""
    return _terminal_barrier(ts, lambda s: tuple(float(a) for a in log_eval(s)))


def deadbeat_tail(sys: LtiSystem, K, T: int, Q, R) -> TailSequenceGains:
    """Tail ``v_l = K A_K^l x`` with its quadratic cost matrix."""
    A_K = sys.A + sys.B @ K
    maps = [np.eye(sys.n)]
    for _ in range(T):
        maps.append(A_K @ maps[-1])
    maps = np.array(maps)
    gains = np.array([K @ Z for Z in maps[:-1]])
    P_V = sum(Z.T @ Q @ Z + G.T @ R @ G for Z, G in zip(maps[:-1], gains))
    return TailSequenceGains(gains, maps, gains.reshape(T * sys.m, sys.n),
                             0.5 * (P_V + P_V.T), T)


@dataclass(frozen=True)
class TerminalCost:
    """Synthesized terminal cost ``F(x)`` of one of :data:`STRATEGIES`.

    Attributes
    ----------
    P : quadratic part of ``F``.
    K : local (or first tail) feedback gain.
    terminal_set : ellipsoid for the ``*-xf`` strategies.
    tail : continuation gains for the ``tail-*`` strategies.
    M : bound matrix used to build ``P`` (local for ``*-xf``; ``(M_x, M_u)``
        for ``quadratic``).
    """

    strategy: str
    P: np.ndarray
    K: np.ndarray
    eps: float
    state_spec: BarrierSpec
    input_spec: BarrierSpec
    Q: np.ndarray
    R: np.ndarray
    terminal_set: TerminalSet | None = None
    tail: TailSequenceGains | None = None
    M: object = None

    @property
    def globally_defined(self) -> bool:
        return self.strategy != "nonrelaxed-xf"

    def terminal_input(self, x):
        """Input appended when shifting a warm start."""
        G = self.tail.gains[0] if self.tail is not None else self.K
        return G @ np.asarray(x, dtype=float)

    def barrier(self, x, exact_stages: bool = False):
        """Barrier part of ``F`` (without the factor ``eps``)."""
        x = np.asarray(x, dtype=float).ravel()
        if self.tail is not None:
            Z, V = self.tail.rollout(x)
            return float(np.sum(barrier_value(self.state_spec, Z, exact_stages))
                         + np.sum(barrier_value(self.input_spec, V, exact_stages)))
        if self.strategy == "relaxed-xf":
            rf = self.state_spec.relaxing
            return terminal_barrier_relaxed(self.terminal_set, rf)(x)[0]
        if self.strategy == "nonrelaxed-xf":
            return terminal_barrier_exact(self.terminal_set)(x)[0]
        return 0.0

    def value(self, x, exact_stages: bool = False) -> float:
        x = np.asarray(x, dtype=float).ravel()
        return float(x @ self.P @ x) + self.eps * self.barrier(x, exact_stages)


def _local_bound(state_spec, input_spec, K, ts):
    """Quadratic bound ``B(x) <= x'Mx`` of the closed-loop stage barriers on ``X_f``.

    With ``a_i = C_i x / d_i`` every recentered row is at most
    ``scale_i * h(a_i)``, ``h(a) = -ln(1 - a) - a``, and ``h(a)/a**2`` is
    increasing, so evaluating it at the largest ``a_i`` over the ellipsoid
    gives a valid bound. This is never larger than the curvature bound
    ``scale_i / (2 s_i**2)`` at the smallest slack.
    """
    C, d, scale = constraint_rows(state_spec, input_spec, K)
    a = ts.support(C) / d
    if np.any(a >= 1):
        raise StrategyError("terminal set touches the constraint boundary; "
                            "use margin < 1")
    ratio = (-np.log1p(-a) - a) / a ** 2
    return (C.T * (scale * ratio / d ** 2)) @ C


def build_terminal_cost(strategy: str, sys: LtiSystem, Q, R, eps: float,
                        state_spec: BarrierSpec, input_spec: BarrierSpec,
                        K=None, T: int | None = None, terminal_set: TerminalSet | None = None,
                        deadbeat_radius: float = 0.0, set_shape: str = "max-volume",
                        set_margin: float = 0.95) -> TerminalCost:
    """Synthesize the terminal cost for ``strategy``.

    Parameters
    ----------
    K : optional local gain for the ``*-xf`` strategies (default: LQR gain)
        or dead-beat gain for ``tail-deadbeat``.
    T : tail length (``n`` for dead-beat, ``2n`` for LQR by default).

    Raises
    ------
    StrategyError
        Unknown strategy or violated preconditions.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    common = dict(eps=eps, state_spec=state_spec, input_spec=input_spec, Q=Q, R=R)
    if strategy in ("relaxed-xf", "nonrelaxed-xf"):
        if K is None:
            K = solve_dare(sys, Q, R)[1]
        K = np.atleast_2d(np.asarray(K, dtype=float))
        ts = terminal_set or build_terminal_set(sys, K, state_spec, input_spec,
                                                shape=set_shape, margin=set_margin)
        if strategy == "relaxed-xf" and state_spec.relaxing.delta > 1:
            raise StrategyError("relaxed terminal barrier needs delta <= 1")
        M = _local_bound(state_spec, input_spec, K, ts)
        A_K = sys.A + sys.B @ K
        P = solve_constrained_lyapunov(A_K, Q + K.T @ R @ K + eps * M)
        return TerminalCost(strategy, P, K, terminal_set=ts, M=M, **common)
    if strategy == "tail-deadbeat":
        if K is None:
            K = deadbeat_gain(sys, radius=deadbeat_radius).K
        K = np.atleast_2d(np.asarray(K, dtype=float))
        tail = deadbeat_tail(sys, K, T or sys.n, Q, R)
        return TerminalCost(strategy, tail.P_V, K, tail=tail, **common)
    if strategy == "tail-lqr":
        tail = zero_terminal_lqr(sys, Q, R, T or 2 * sys.n)
        return TerminalCost(strategy, tail.P_V, tail.gains[0], tail=tail, **common)
    if strategy == "quadratic":
        try:
            M_x = quadratic_upper_bound(state_spec)
            M_u = quadratic_upper_bound(input_spec)
        except WrongRelaxing as exc:
            raise StrategyError(str(exc)) from exc
        K, P = solve_modified_riccati(sys, Q, R, M_x, M_u, eps)
        return TerminalCost(strategy, P, K, M=(M_x, M_u), **common)
    raise StrategyError(f"unknown terminal strategy {strategy!r}; choose from {STRATEGIES}")


@dataclass(frozen=True)
class DesignCheck:
    name: str
    passed: bool
    value: float

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))
        object.__setattr__(self, "value", float(self.value))


def verify_terminal_cost(sys: LtiSystem, term: TerminalCost, tol: float = 1e-8) -> list:
    """Re-check the synthesis invariants of ``term``; one :class:`DesignCheck` each."""
    out = []
    P, K = term.P, term.K
    dmin = min(term.state_spec.polytope.d.min(), term.input_spec.polytope.d.min())
    out.append(DesignCheck("delta <= min d", term.state_spec.relaxing.delta <= dmin,
                           term.state_spec.relaxing.delta))
    if term.strategy in ("nonrelaxed-xf", "tail-deadbeat", "tail-lqr"):
        out.append(DesignCheck("(A, B) controllable", controllability_index(sys)[1],
                               controllability_index(sys)[0]))
    A_K = sys.A + sys.B @ K
    if term.strategy != "tail-lqr":  # time-varying tail gains
        rho = spectral_radius(A_K)
        out.append(DesignCheck("A + BK Schur stable", rho < 1, rho))
    lam = float(np.linalg.eigvalsh(0.5 * (P + P.T)).min())
    out.append(DesignCheck("P positive definite", lam > 0, lam))
    scale = max(1.0, np.abs(P).max())
    if term.terminal_set is not None:
        res = A_K.T @ P @ A_K - P + term.Q + K.T @ term.R @ K + term.eps * term.M
        out.append(DesignCheck("Lyapunov equation residual", np.abs(res).max() <= tol * scale,
                               float(np.abs(res).max())))
        P_f = term.terminal_set.P_f
        L = np.linalg.cholesky(P_f)
        # invariance: ||L' A_K L^-T|| <= 1
        G = L.T @ A_K @ np.linalg.inv(L.T)
        gain = float(np.linalg.norm(G, 2))
        out.append(DesignCheck("terminal set invariant", gain <= 1 + 1e-12, gain))
        C, d, _ = constraint_rows(term.state_spec, term.input_spec, K)
        worst = float((term.terminal_set.support(C) / d).max())
        out.append(DesignCheck("terminal set inside constraints", worst < 1, worst))
    if term.tail is not None:
        end = float(np.abs(term.tail.state_maps[-1]).max())
        out.append(DesignCheck("tail reaches the origin", end <= 1e-8, end))
    if term.strategy == "quadratic":
        M_x, M_u = term.M
        Qe, Re = term.Q + term.eps * M_x, term.R + term.eps * M_u
        S = Re + sys.B.T @ P @ sys.B
        res = (sys.A.T @ P @ sys.A - P + Qe
               - sys.A.T @ P @ sys.B @ np.linalg.solve(S, sys.B.T @ P @ sys.A))
        out.append(DesignCheck("modified Riccati residual", np.abs(res).max() <= tol * scale,
                               float(np.abs(res).max())))
    return out
