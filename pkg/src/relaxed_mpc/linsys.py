"""Linear-system algebra: LTI models, Riccati and Lyapunov solvers, dead-beat
gains and the zero-terminal-state LQR tail.

All functions are pure; inputs are never modified.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (DimensionMismatch, NonStabilizable, NotControllable,
                     RankDeficient, Unstable)

__all__ = [
    "LtiSystem", "StateFeedback", "TailSequenceGains", "double_integrator",
    "controllability_matrix", "controllability_index", "solve_dare",
    "solve_modified_riccati", "solve_constrained_lyapunov", "deadbeat_gain",
    "zero_terminal_lqr", "spectral_radius",
]


def _as_matrix(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix, got shape {M.shape}")
    return M


@dataclass(frozen=True)
class LtiSystem:
    """Discrete-time system ``x(k+1) = A x(k) + B u(k)``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionMismatch(
                f"B must have {A.shape[0]} rows, got {B.shape}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x, u, w=None):
        x_next = self.A @ x + self.B @ u
        if w is not None:
            x_next = x_next + w
        return x_next


def double_integrator(Ts: float = 0.1) -> LtiSystem:
    """The sampled double integrator with input map ``[Ts**2, Ts]``."""
    return LtiSystem(np.array([[1.0, Ts], [0.0, 1.0]]),
                     np.array([[Ts ** 2], [Ts]]))


@dataclass(frozen=True)
class StateFeedback:
    """Linear feedback ``u = K x`` with the closed-loop map cached.

    ``tag`` is one of ``"stabilizing"``, ``"dead-beat"`` or ``"none"``.
    """

    K: np.ndarray
    A_K: np.ndarray
    tag: str = "none"
    nilpotency_residual: float = float("nan")


@dataclass(frozen=True)
class TailSequenceGains:
    """Linear tail ``v_l(x) = K_l x``, ``z_l(x) = Z_l x`` for ``l < T``.

    ``state_maps`` holds ``Z_0 .. Z_T`` (``Z_T`` is zero up to round-off),
    ``K_V`` stacks the gains and ``P_V`` is the quadratic cost of the tail.
    """

    gains: np.ndarray
    state_maps: np.ndarray
    K_V: np.ndarray
    P_V: np.ndarray
    T: int = field(default=0)

    def rollout(self, x):
        x = np.asarray(x, dtype=float)
        return self.state_maps[:-1] @ x, self.gains @ x


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if np.size(M) else 0.0


def controllability_matrix(sys: LtiSystem) -> np.ndarray:
    blocks = [sys.B]
    for _ in range(sys.n - 1):
        blocks.append(sys.A @ blocks[-1])
    return np.hstack(blocks)


def controllability_index(sys: LtiSystem) -> tuple[int, bool]:
    """Rank of ``[B, AB, ..., A^(n-1) B]`` and whether it equals ``n``."""
    ctrb = controllability_matrix(sys)
    rank = int(np.linalg.matrix_rank(ctrb)) if np.any(ctrb) else 0
    return rank, rank == sys.n


def _check_weights(sys, Q, R):
    Q = _as_matrix(Q, "Q")
    R = _as_matrix(R, "R")
    if Q.shape != (sys.n, sys.n) or R.shape != (sys.m, sys.m):
        raise DimensionMismatch(
            f"Q must be {sys.n}x{sys.n} and R {sys.m}x{sys.m}, "
            f"got {Q.shape} and {R.shape}")
    return 0.5 * (Q + Q.T), 0.5 * (R + R.T)


def _lqr_gain(sys, P, R):
    A, B = sys.A, sys.B
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def solve_dare(sys: LtiSystem, Q, R, tol: float = 1e-12,
               max_iter: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Stabilizing DARE solution by fixed-point (value) iteration from ``P = Q``.

    Returns ``(P, K)`` with ``K = -(R + B'PB)^-1 B'PA``.

    Raises
    ------
    NonStabilizable
        If the iteration diverges, does not converge, or the resulting gain
        does not make ``A + BK`` Schur stable.
    """
    Q, R = _check_weights(sys, Q, R)
    A, B = sys.A, sys.B
    P = Q.copy()
    for _ in range(max_iter):
        BtPA = B.T @ P @ A
        P_next = A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise NonStabilizable("Riccati iteration diverged")
        step = np.linalg.norm(P_next - P)
        P = P_next
        if step <= tol * max(1.0, np.linalg.norm(P)):
            break
    else:
        raise NonStabilizable(f"Riccati iteration did not converge in {max_iter} steps")
    K = _lqr_gain(sys, P, R)
    if spectral_radius(A + B @ K) >= 1.0:
        raise NonStabilizable("Riccati fixed point is not stabilizing "
                              "(check stabilizability and detectability)")
    return P, K


def solve_modified_riccati(sys: LtiSystem, Q, R, M_x, M_u, eps: float,
                           **kwargs) -> tuple[np.ndarray, np.ndarray]:
    """Solve the Riccati pair with barrier bound matrices folded into the weights.

    ``K = -(R + B'PB + eps M_u)^-1 B'PA`` and
    ``P = A_K' P A_K + K'(R + eps M_u) K + Q + eps M_x``; this is the ordinary
    DARE for weights ``(Q + eps M_x, R + eps M_u)``. Returns ``(K, P)``.
    """
    Q, R = _check_weights(sys, Q, R)
    M_x, M_u = _check_weights(sys, M_x, M_u)
    P, K = solve_dare(sys, Q + eps * M_x, R + eps * M_u, **kwargs)
    return K, P


def solve_constrained_lyapunov(A_K, Q_eff) -> np.ndarray:
    """Solve ``P = A_K' P A_K + Q_eff`` for Schur stable ``A_K``."""
    A_K = _as_matrix(A_K, "A_K")
    Q_eff = _as_matrix(Q_eff, "Q_eff")
    if spectral_radius(A_K) >= 1.0:
        raise Unstable(f"spectral radius {spectral_radius(A_K):.6g} >= 1")
    P = sla.solve_discrete_lyapunov(A_K.T, 0.5 * (Q_eff + Q_eff.T))
    return 0.5 * (P + P.T)


def _spread_poles(n, radius):
    poles = [0.0]
    j = 1
    while len(poles) < n:
        poles.extend([j * radius, -j * radius])
        j += 1
    return np.array(poles[:n])


def _ackermann(A, b, poles):
    """Single-input pole placement via the controllable canonical form."""
    n = A.shape[0]
    ctrb = np.hstack([np.linalg.matrix_power(A, i) @ b for i in range(n)])
    coeffs = np.poly(poles).real
    pA = sum(c * np.linalg.matrix_power(A, n - i) for i, c in enumerate(coeffs))
    last_row = np.linalg.solve(ctrb.T, np.eye(n)[:, -1])
    return -(last_row @ pA)[None, :]


def deadbeat_gain(sys: LtiSystem, radius: float = 0.0,
                  seed: int = 0) -> StateFeedback:
    """Gain ``K`` making ``A + BK`` nilpotent (all poles at the origin).

    With ``radius > 0`` the poles are spread over ``{0, +-radius, +-2 radius, ...}``
    instead. Multi-input systems are reduced to a single input direction
    ``B g``; if no such direction is controllable the poles are placed with
    :func:`scipy.signal.place_poles`, which needs distinct poles.
    """
    rank, controllable = controllability_index(sys)
    if not controllable:
        raise NotControllable(f"controllability rank {rank} < {sys.n}")
    A, B, n = sys.A, sys.B, sys.n
    poles = _spread_poles(n, radius) if radius > 0 else np.zeros(n)

    K = None
    rng = np.random.default_rng(seed)
    candidates = [np.eye(sys.m)[:, [j]] for j in range(sys.m)]
    candidates += [rng.standard_normal((sys.m, 1)) for _ in range(10)]
    for g in candidates:
        b = B @ g
        if np.linalg.matrix_rank(controllability_matrix(LtiSystem(A, b))) == n:
            K = g @ _ackermann(A, b, poles)
            break
    if K is None:
        from scipy.signal import place_poles
        spread = _spread_poles(n, radius if radius > 0 else 1e-3)
        K = -place_poles(A, B, spread).gain_matrix
    A_K = A + B @ K
    residual = float(np.linalg.norm(np.linalg.matrix_power(A_K, n)))
    return StateFeedback(K, A_K, tag="dead-beat", nilpotency_residual=residual)


def _stacked_prediction(A, B, T):
    """``Omega = [A; ...; A^T]`` and block lower-triangular ``Phi``."""
    n, m = B.shape
    powers = [np.eye(n)]
    for _ in range(T):
        powers.append(A @ powers[-1])
    Omega = np.vstack(powers[1:])
    Phi = np.zeros((T * n, T * m))
    for i in range(T):
        for j in range(i + 1):
            Phi[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - j] @ B
    return Omega, Phi, powers


def zero_terminal_lqr(sys: LtiSystem, Q, R, T: int,
                      rcond: float = 1e-10) -> TailSequenceGains:
    """Finite-horizon LQR with ``z_T = 0`` solved without Riccati equations.

    The last ``n`` inputs are eliminated through the pseudoinverse of
    ``S_2 = [A^(n-1) B, ..., B]``; for ``m > 1`` the null space of ``S_2`` is
    kept as additional free coordinates so the reduced problem stays
    equivalent to the original one.
    """
    Q, R = _check_weights(sys, Q, R)
    A, B, n, m = sys.A, sys.B, sys.n, sys.m
    if T < n:
        raise ValueError(f"tail horizon T={T} must be at least n={n}")
    rank, controllable = controllability_index(sys)
    if not controllable:
        raise NotControllable(f"controllability rank {rank} < {n}")

    Omega, Phi, powers = _stacked_prediction(A, B, T)
    Qt = np.kron(np.eye(T), Q)
    Qt[-n:, -n:] = 0.0  # z_T is pinned to zero
    Rt = np.kron(np.eye(T), R)
    H = 2.0 * (Rt + Phi.T @ Qt @ Phi)
    F = 2.0 * Omega.T @ Qt @ Phi
    Y = 2.0 * (Q + Omega.T @ Qt @ Omega)

    S1 = np.hstack([powers[T - 1 - l] @ B for l in range(T - n)]) \
        if T > n else np.zeros((n, 0))
    S2 = np.hstack([powers[n - 1 - j] @ B for j in range(n)])
    U_s, sv, Vt = np.linalg.svd(S2)
    keep = sv > rcond * sv[0]
    if keep.sum() < n:
        raise RankDeficient("S_2 = [A^(n-1)B ... B] lost rank")
    S2_pinv = (Vt[:n].T / sv) @ U_s.T
    null_S2 = Vt[n:].T  # empty for single-input systems

    n1 = (T - n) * m
    Gamma_V = np.zeros((T * m, n1 + null_S2.shape[1]))
    Gamma_V[:n1, :n1] = np.eye(n1)
    Gamma_V[n1:, :n1] = -S2_pinv @ S1
    Gamma_V[n1:, n1:] = null_S2
    Gamma_x = np.vstack([np.zeros((n1, n)), -S2_pinv @ powers[T]])

    Ht = Gamma_V.T @ H @ Gamma_V
    Ft = Gamma_x.T @ H @ Gamma_V + F @ Gamma_V
    Yt = Y + Gamma_x.T @ H @ Gamma_x + Gamma_x.T @ F.T + F @ Gamma_x
    if Ht.size:
        try:
            cho = sla.cho_factor(Ht)
        except np.linalg.LinAlgError as exc:
            raise RankDeficient("reduced tail Hessian is not positive definite") from exc
        HinvFt = sla.cho_solve(cho, Ft.T)
        K_V = Gamma_x - Gamma_V @ HinvFt
        P_V = 0.5 * (Yt - Ft @ HinvFt)
    else:
        K_V = Gamma_x
        P_V = 0.5 * Yt
    P_V = 0.5 * (P_V + P_V.T)

    gains = K_V.reshape(T, m, n)
    maps = [np.eye(n)]
    for l in range(T):
        maps.append(A @ maps[-1] + B @ gains[l])
    return TailSequenceGains(gains, np.array(maps), K_V, P_V, T)
