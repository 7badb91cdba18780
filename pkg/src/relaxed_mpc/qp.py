"""Small dense convex QP solver (primal active-set method).

Used as a reference oracle for the exact constrained MPC problem and for the
minimum-norm nonnegative weight vector of weight-recentered barriers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import Infeasible, MaxIterations

__all__ = ["QpResult", "solve_qp"]


@dataclass
class QpResult:
    x: np.ndarray
    value: float
    active: np.ndarray
    multipliers: np.ndarray
    iterations: int


def _feasible_point(n, A, b, E, e):
    """Feasible point maximizing the smallest inequality slack (capped at 1).

    An interior start keeps the initial working set small and avoids the
    degenerate vertices an arbitrary LP solution tends to sit on.
    """
    m = A.shape[0]
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    A_ub = np.hstack([A, np.ones((m, 1))]) if m else None
    A_eq = np.hstack([E, np.zeros((E.shape[0], 1))]) if len(E) else None
    res = linprog(cost, A_ub=A_ub, b_ub=b if m else None, A_eq=A_eq,
                  b_eq=e if len(E) else None,
                  bounds=[(None, None)] * n + [(None, 1.0 if m else 0.0)], method="highs")
    if res.status != 0 or (m and res.x[-1] < -1e-9 * max(1.0, np.abs(b).max())):
        raise Infeasible(f"QP constraints are infeasible: {res.message}")
    return res.x[:n]


def _independent(rows, candidate, tol=1e-10):
    if not len(rows):
        return np.linalg.norm(candidate) > tol
    M = np.vstack(rows + [candidate])
    return np.linalg.matrix_rank(M, tol=tol * max(1.0, np.abs(M).max())) == len(rows) + 1


def solve_qp(H, f, A=None, b=None, E=None, e=None, x0=None, tol: float = 1e-10,
             max_iter: int = 500) -> QpResult:
    """Minimize ``0.5 x'Hx + f'x`` subject to ``A x <= b`` and ``E x = e``.

    ``H`` must be positive definite on the null space of the working
    constraints. A feasible starting point is obtained with an LP when
    ``x0`` is not given.

    Raises
    ------
    Infeasible
        If the constraint set is empty.
    MaxIterations
        If the working-set iteration does not settle.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    f = np.asarray(f, dtype=float).ravel()
    n = f.size
    A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
    E = np.zeros((0, n)) if E is None else np.atleast_2d(np.asarray(E, dtype=float))
    e = np.zeros(0) if e is None else np.asarray(e, dtype=float).ravel()
    n_eq = E.shape[0]

    x = _feasible_point(n, A, b, E, e) if x0 is None else np.asarray(x0, float).copy()
    scale = max(1.0, np.abs(b).max(initial=0.0))

    rows = [r for r in E]
    work = []
    for i in np.flatnonzero(A @ x >= b - 1e-9 * scale):
        if _independent(rows, A[i]):
            rows.append(A[i])
            work.append(int(i))

    for it in range(max_iter):
        W = np.vstack([E, A[work]]) if work or n_eq else np.zeros((0, n))
        g = H @ x + f
        k = W.shape[0]
        kkt = np.block([[H, W.T], [W, np.zeros((k, k))]])
        rhs = np.concatenate([-g, np.zeros(k)])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        p, mu = sol[:n], sol[n:]
        if np.linalg.norm(p) <= tol * max(1.0, np.linalg.norm(x)):
            lam_ineq = mu[n_eq:]
            if lam_ineq.size == 0 or lam_ineq.min() >= -tol * max(1.0, np.abs(lam_ineq).max()):
                mult = np.zeros(A.shape[0])
                mult[work] = lam_ineq
                return QpResult(x, float(0.5 * x @ H @ x + f @ x),
                                np.array(work, dtype=int), mult, it)
            work.pop(int(np.argmin(lam_ineq)))
            continue
        Ap = A @ p
        alpha, block = 1.0, None
        for i in range(A.shape[0]):
            if i in work or Ap[i] <= 1e-14 * max(1.0, np.linalg.norm(p)):
                continue
            step = (b[i] - A[i] @ x) / Ap[i]
            if step < alpha:
                alpha, block = max(step, 0.0), i
        x = x + alpha * p
        if block is not None:
            work.append(block)
    raise MaxIterations(f"active-set QP did not converge in {max_iter} iterations")
