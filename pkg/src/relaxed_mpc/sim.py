"""Receding-horizon closed-loop simulation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverFailure
from .ocp import CondensedOcp, newton_solve, shift_warm_start

__all__ = ["Trajectory", "Disturbance", "simulate", "lyapunov_audit", "write_csv",
           "csv_header"]


@dataclass(frozen=True)
class Disturbance:
    """Additive disturbance ``w(k)``.

    Either a fixed ``sequence`` (missing steps count as zero) or seeded
    uniform samples in ``[-bound, bound]`` scaled by ``decay**k``.
    """

    sequence: np.ndarray | None = None
    bound: np.ndarray | float | None = None
    seed: int = 0
    decay: float = 1.0

    def realize(self, steps: int, n: int) -> np.ndarray:
        if self.sequence is not None:
            seq = np.atleast_2d(np.asarray(self.sequence, dtype=float))
            out = np.zeros((steps, n))
            k = min(steps, seq.shape[0])
            out[:k] = seq[:k]
            return out
        if self.bound is None:
            return np.zeros((steps, n))
        rng = np.random.default_rng(self.seed)
        bound = np.broadcast_to(np.asarray(self.bound, dtype=float), (n,))
        w = rng.uniform(-1.0, 1.0, size=(steps, n)) * bound
        return w * (self.decay ** np.arange(steps))[:, None]


@dataclass
class Trajectory:
    """Closed-loop log. ``states`` has one row more than ``inputs``."""

    states: np.ndarray
    inputs: np.ndarray
    values: np.ndarray
    stage_costs: np.ndarray
    viol_x: np.ndarray
    viol_u: np.ndarray
    newton_iters: np.ndarray
    disturbances: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]

    def max_state_violation(self) -> float:
        return float(self.viol_x.max(initial=0.0))

    def max_input_violation(self) -> float:
        return float(self.viol_u.max(initial=0.0))

    def max_violation(self) -> float:
        return max(self.max_state_violation(), self.max_input_violation())

    def dynamics_residual(self, sys) -> float:
        if self.steps == 0:
            return 0.0
        pred = self.states[:-1] @ sys.A.T + self.inputs @ sys.B.T + self.disturbances
        return float(np.abs(self.states[1:] - pred).max())


def simulate(ocp: CondensedOcp, x0, steps: int, disturbance: Disturbance | None = None,
             record_final_value: bool = True) -> Trajectory:
    """Apply the first optimal input at every step, warm-starting by shifting.

    The value of the final state is computed as well, so ``values`` has one
    entry per state.

    Raises
    ------
    SolverFailure
        Solver errors are re-raised with the failing step in the message.
    """
    design = ocp.design
    sys = design.sys
    n, m = sys.n, sys.m
    x = np.asarray(x0, dtype=float).ravel().copy()
    w = (disturbance or Disturbance()).realize(steps, n)
    states, inputs, values, iters = [x.copy()], [], [], []
    warm = None
    for k in range(steps + (1 if record_final_value else 0)):
        try:
            res = newton_solve(ocp, x, warm)
        except SolverFailure as exc:
            exc.args = (f"step {k}: {exc.args[0]}",) + exc.args[1:]
            raise
        values.append(res.value)
        iters.append(res.iterations)
        if k == steps:
            break
        u = res.U[:m].copy()
        warm = shift_warm_start(ocp, res.U, x)
        x = sys.A @ x + sys.B @ u + w[k]
        inputs.append(u)
        states.append(x.copy())
    X = np.array(states)
    Uc = np.array(inputs).reshape(steps, m)
    costs = design.stage_cost(X[:-1], Uc) if steps else np.zeros(0)
    if np.ndim(costs) == 0:
        costs = np.array([costs])
    vx = design.state_spec.polytope.violation(X).max(axis=1)
    vu = design.input_spec.polytope.violation(Uc).max(axis=1) if steps else np.zeros(0)
    meta = {"strategy": design.strategy, "delta": design.delta, "eps": design.eps,
            "seed": None if disturbance is None else disturbance.seed}
    return Trajectory(X, Uc, np.array(values), np.asarray(costs, dtype=float), vx, vu,
                      np.array(iters, dtype=int), w, meta)


def lyapunov_audit(traj: Trajectory, ocp: CondensedOcp | None = None) -> float:
    """Largest ``V(x(k+1)) - V(x(k)) + l(x(k), u(k))`` along the trajectory.

    Uses the logged values; ``ocp`` is only needed when they are missing.
    """
    if traj.steps == 0:
        return 0.0
    values = traj.values
    if values.size < traj.steps + 1:
        if ocp is None:
            raise ValueError("trajectory lacks the final value; pass the ocp")
        values = np.append(values, newton_solve(ocp, traj.states[-1]).value)
    return float(np.max(values[1:traj.steps + 1] - values[:traj.steps] + traj.stage_costs))


def csv_header(n: int, m: int) -> list[str]:
    return (["k"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{j + 1}" for j in range(m)]
            + ["value", "stage_cost", "viol_x_max", "viol_u_max", "newton_iters"])


def write_csv(traj: Trajectory, path) -> None:
    """One row per state; input-related fields are blank on the final row."""
    n, m = traj.states.shape[1], traj.inputs.shape[1]
    fmt = "%.17g"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(csv_header(n, m))
        for k, x in enumerate(traj.states):
            row = [str(k)] + [fmt % v for v in x]
            last = k == traj.steps
            row += [""] * m if last else [fmt % v for v in traj.inputs[k]]
            row.append(fmt % traj.values[k] if k < traj.values.size else "")
            row.append("" if last else fmt % traj.stage_costs[k])
            row.append(fmt % traj.viol_x[k])
            row.append("" if last else fmt % traj.viol_u[k])
            row.append(str(traj.newton_iters[k]) if k < traj.newton_iters.size else "")
            wr.writerow(row)
