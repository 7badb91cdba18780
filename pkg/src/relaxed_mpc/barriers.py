"""Relaxed logarithmic barriers for polytopic constraint sets.

A polytope ``{z : C z <= d}`` with ``d > 0`` gets a recentered barrier that is
zero with zero gradient at the origin. Below the slack level ``delta`` the
logarithm is replaced by a smooth penalty (the relaxing function), which makes
the barrier finite and twice differentiable on all of R^r.

Every barrier is a sum of row terms evaluated at the slack ``s_i = d_i - C_i z``::

    psi_i(s) = c_i * (f(s) + ln d_i) + lam_i * (s / d_i - 1)

with ``(c_i, lam_i) = (1, 1)`` for gradient recentering and ``(1 + w_i, 0)``
for weight recentering, ``f`` being ``-ln`` or its relaxed version.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, DomainViolation, SolverFailure, WrongRelaxing

__all__ = [
    "Polytope", "RelaxingFunction", "BarrierSpec", "BoundaryLevel",
    "relax_eval", "log_eval", "make_weight_vector", "barrier_eval",
    "barrier_value", "nonrelaxed_eval", "barrier_boundary_level",
    "quadratic_upper_bound", "row_terms",
]


@dataclass(frozen=True)
class Polytope:
    """Constraint set ``{z : C z <= d}`` containing the origin in its interior."""

    C: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        d = np.asarray(self.d, dtype=float).ravel()
        if C.shape[0] != d.size or C.shape[0] < 1:
            raise DimensionMismatch(f"C has {C.shape[0]} rows but d has {d.size} entries")
        if np.any(d <= 0):
            raise DomainViolation("origin must be strictly interior (all d_i > 0)")
        if np.any(np.linalg.norm(C, axis=1) == 0):
            raise DimensionMismatch("constraint rows must be nonzero")
        C.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)

    @property
    def q(self) -> int:
        return self.C.shape[0]

    @property
    def r(self) -> int:
        return self.C.shape[1]

    def slack(self, z):
        return self.d - np.asarray(z, dtype=float) @ self.C.T

    def violation(self, z):
        """Componentwise ``max(C z - d, 0)``."""
        return np.maximum(-self.slack(z), 0.0)

    def contains(self, z, tol: float = 0.0) -> bool:
        return bool(np.all(self.slack(z) >= -tol))

    @classmethod
    def box(cls, lower, upper):
        """Axis-aligned box; rows ordered ``z_j <= upper_j, -z_j <= -lower_j``."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        r = lower.size
        C = np.zeros((2 * r, r))
        d = np.zeros(2 * r)
        for j in range(r):
            C[2 * j, j], d[2 * j] = 1.0, upper[j]
            C[2 * j + 1, j], d[2 * j + 1] = -1.0, -lower[j]
        return cls(C, d)


@dataclass(frozen=True)
class RelaxingFunction:
    """Penalty branch used for slacks ``z <= delta``.

    ``kind="polynomial"`` with even ``k >= 2`` gives
    ``(k-1)/k [((z - k delta)/((k-1) delta))^k - 1] - ln delta``;
    ``kind="exponential"`` gives ``exp(1 - z/delta) - 1 - ln delta``.
    Both match ``-ln z`` at ``z = delta`` in value and first two derivatives.
    """

    kind: str = "polynomial"
    delta: float = 0.1
    k: int = 2

    def __post_init__(self):
        if self.kind not in ("polynomial", "exponential"):
            raise ValueError(f"unknown relaxing kind {self.kind!r}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.kind == "polynomial" and (self.k < 2 or self.k % 2):
            raise ValueError("polynomial order k must be an even integer >= 2")

    def with_delta(self, delta: float) -> "RelaxingFunction":
        return RelaxingFunction(self.kind, float(delta), self.k)

    def penalty(self, z):
        """Value and first two derivatives of the penalty branch alone."""
        z = np.asarray(z, dtype=float)
        delta = self.delta
        if self.kind == "exponential":
            ex = np.exp(1.0 - z / delta)
            return ex - 1.0 - np.log(delta), -ex / delta, ex / delta ** 2
        k = self.k
        t = (z - k * delta) / ((k - 1) * delta)
        val = (k - 1) / k * (t ** k - 1.0) - np.log(delta)
        return val, t ** (k - 1) / delta, t ** (k - 2) / delta ** 2

    def __call__(self, z):
        return relax_eval(self, z)


def log_eval(z):
    """``-ln z`` and derivatives; ``inf`` for ``z <= 0``."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(z > 0, -np.log(np.where(z > 0, z, 1.0)), np.inf)
        d1 = np.where(z > 0, -1.0 / z, np.nan)
        d2 = np.where(z > 0, 1.0 / z ** 2, np.nan)
    return val, d1, d2


def relax_eval(rf: RelaxingFunction, z):
    """Relaxed logarithm: ``-ln z`` for ``z > delta``, penalty branch otherwise.

    Works elementwise on arrays; returns ``(value, first, second)``.
    """
    z = np.asarray(z, dtype=float)
    inner = z > rf.delta
    zs = np.where(inner, z, rf.delta)
    log_v, log_d1, log_d2 = -np.log(zs), -1.0 / zs, 1.0 / zs ** 2
    pen_v, pen_d1, pen_d2 = rf.penalty(np.where(inner, rf.delta, z))
    val = np.where(inner, log_v, pen_v)
    d1 = np.where(inner, log_d1, pen_d1)
    d2 = np.where(inner, log_d2, pen_d2)
    if val.ndim == 0:
        return float(val), float(d1), float(d2)
    return val, d1, d2


def make_weight_vector(p: Polytope) -> np.ndarray:
    """Minimum-norm ``w >= 0`` with ``sum_i (1 + w_i) C_i / d_i = 0``.

    Raises
    ------
    Infeasible
        If no nonnegative weight vector exists.
    """
    from .qp import solve_qp

    G = (p.C / p.d[:, None]).T
    rhs = -G.sum(axis=1)
    q = p.q
    res = solve_qp(np.eye(q), np.zeros(q), A=-np.eye(q), b=np.zeros(q), E=G, e=rhs)
    w = np.maximum(res.x, 0.0)
    resid = np.linalg.norm(G @ (1.0 + w))
    if resid > 1e-10 * max(1.0, np.abs(G).sum()):
        # polish on the support: exact least-squares solve of the equality
        pos = w > 0
        if pos.any():
            sol = np.linalg.lstsq(G[:, pos], rhs - G[:, ~pos] @ w[~pos], rcond=None)[0]
            w[pos] = np.maximum(sol, 0.0)
    return w


@dataclass(frozen=True)
class BarrierSpec:
    """Recentered relaxed barrier for a polytope.

    ``recentering`` is ``"gradient"`` or ``"weight"``. For weight recentering
    the weights default to :func:`make_weight_vector`.
    """

    polytope: Polytope
    recentering: str = "weight"
    relaxing: RelaxingFunction = RelaxingFunction()
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.recentering not in ("gradient", "weight"):
            raise ValueError(f"unknown recentering {self.recentering!r}")
        q = self.polytope.q
        if self.recentering == "gradient":
            w = np.zeros(q)
        elif self.weights is None:
            w = make_weight_vector(self.polytope)
        else:
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.size != q:
                raise DimensionMismatch(f"weights must have {q} entries")
            if np.any(w < 0):
                raise ValueError("recentering weights must be nonnegative")
            G = (self.polytope.C / self.polytope.d[:, None]).T
            if np.linalg.norm(G @ (1.0 + w)) > 1e-8:
                raise ValueError("weights do not recenter the barrier")
        if self.relaxing.delta > self.polytope.d.min():
            raise ValueError("relaxation parameter must not exceed min(d)")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def scale(self) -> np.ndarray:
        """Per-row multiplier ``c_i`` of the barrier part."""
        return 1.0 + self.weights

    @property
    def linear(self) -> np.ndarray:
        """Per-row coefficient ``lam_i`` of the linear recentering part."""
        return np.ones(self.polytope.q) if self.recentering == "gradient" \
            else np.zeros(self.polytope.q)

    def with_delta(self, delta: float) -> "BarrierSpec":
        return BarrierSpec(self.polytope, self.recentering,
                           self.relaxing.with_delta(delta), self.weights)


def row_terms(scale, linear, d, rf: RelaxingFunction | None, s):
    """Row terms ``psi``, ``psi'``, ``psi''`` at slacks ``s``.

    ``rf=None`` selects the exact logarithm (``inf`` outside the domain).
    """
    f, f1, f2 = log_eval(s) if rf is None else relax_eval(rf, s)
    psi = scale * (f + np.log(d)) + linear * (s / d - 1.0)
    return psi, scale * f1 + linear / d, scale * f2


def _assemble(spec, z, rf):
    P = spec.polytope
    z = np.asarray(z, dtype=float).ravel()
    if z.size != P.r:
        raise DimensionMismatch(f"expected a {P.r}-vector, got {z.size}")
    s = P.d - P.C @ z
    psi, d1, d2 = row_terms(spec.scale, spec.linear, P.d, rf, s)
    value = float(np.sum(psi))
    grad = -P.C.T @ d1
    hess = (P.C.T * d2) @ P.C
    return value, grad, hess


def barrier_eval(spec: BarrierSpec, z):
    """Relaxed recentered barrier value, gradient and Hessian at ``z``."""
    return _assemble(spec, z, spec.relaxing)


def barrier_value(spec: BarrierSpec, Z, exact: bool = False):
    """Barrier values for a batch of points (rows of ``Z``)."""
    P = spec.polytope
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    S = P.d - Z @ P.C.T
    psi, _, _ = row_terms(spec.scale, spec.linear, P.d,
                          None if exact else spec.relaxing, S)
    return psi.sum(axis=-1)


def nonrelaxed_eval(spec: BarrierSpec, z):
    """Exact recentered barrier (no relaxation) at a strictly interior ``z``.

    Raises
    ------
    DomainViolation
        If some slack ``d_i - C_i z`` is not positive.
    """
    s = spec.polytope.slack(np.asarray(z, dtype=float).ravel())
    if np.any(s <= 0):
        raise DomainViolation(f"point outside the open constraint set (min slack {s.min():.3g})")
    return _assemble(spec, z, None)


class BoundaryLevel(NamedTuple):
    value: float
    point: np.ndarray
    facet: int
    per_facet: np.ndarray


def _facet_minimum(spec, i, tol=1e-12, max_iter=100):
    P = spec.polytope
    c = P.C[i]
    z0 = c * P.d[i] / (c @ c)
    # orthonormal basis of the facet's direction space
    N = np.linalg.svd(c[None, :])[2][1:].T
    if N.shape[1] == 0:
        return barrier_eval(spec, z0)[0], z0
    y = np.zeros(N.shape[1])
    f, g, h = barrier_eval(spec, z0)
    for _ in range(max_iter):
        gy, hy = N.T @ g, N.T @ h @ N
        if np.linalg.norm(gy) <= tol * max(1.0, abs(f)):
            break
        hy = hy + 1e-14 * np.trace(hy) * np.eye(hy.shape[0])
        step = -np.linalg.solve(hy, gy)
        slope = gy @ step
        if -slope / 2 <= 1e-20:
            break
        t = 1.0
        while True:
            f_new, g_new, h_new = barrier_eval(spec, z0 + N @ (y + t * step))
            if f_new <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            raise SolverFailure("facet minimization stalled", residual=float(np.linalg.norm(gy)))
        y = y + t * step
        f, g, h = f_new, g_new, h_new
    else:
        raise SolverFailure("facet minimization did not converge",
                            residual=float(np.linalg.norm(N.T @ g)))
    return f, z0 + N @ y


def barrier_boundary_level(spec: BarrierSpec) -> BoundaryLevel:
    """Smallest relaxed barrier value over the boundary of the polytope.

    Each facet ``C_i z = d_i`` is minimized separately by Newton's method in
    a null-space parametrization (the problem is convex).

    Raises
    ------
    SolverFailure
        If a facet minimization stalls.
    """
    values, points = [], []
    for i in range(spec.polytope.q):
        v, z = _facet_minimum(spec, i)
        values.append(v)
        points.append(z)
    values = np.array(values)
    i = int(np.argmin(values))
    return BoundaryLevel(float(values[i]), points[i], i, values)


def quadratic_upper_bound(spec: BarrierSpec) -> np.ndarray:
    """Matrix ``M`` with ``B(z) <= z' M z`` for every ``z``.

    Valid for the quadratic relaxing function, whose curvature never
    exceeds ``1/delta^2``: ``M = C' diag(1 + w) C / (2 delta^2)``.

    Raises
    ------
    WrongRelaxing
        For exponential or higher-order polynomial relaxing functions.
    """
    rf = spec.relaxing
    if rf.kind != "polynomial" or rf.k != 2:
        raise WrongRelaxing("a global quadratic bound needs the quadratic relaxing function")
    C = spec.polytope.C
    return (C.T * spec.scale) @ C / (2.0 * rf.delta ** 2)
