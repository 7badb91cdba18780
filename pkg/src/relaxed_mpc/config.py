"""JSON design configuration.

Schema (matrices are row-major nested lists; optional keys in brackets)::

    {
      "system":      {"A": [[...]], "B": [[...]]},
      "constraints": {"C_x": [[...]], "d_x": [...], "C_u": [[...]], "d_u": [...]},
                     (or "x_lower"/"x_upper" and "u_lower"/"u_upper" for boxes)
      "Q": [[...]], "R": [[...]], "N": 10, "eps": 0.01, "delta": 1e-4,
      ["barrier"]:   {"recentering": "weight", "relaxing": "polynomial", "k": 2},
      ["strategy"]:  "nonrelaxed-xf",
      ["terminal"]:  {"T": null, "deadbeat_radius": 0.0,
                      "set_shape": "max-volume", "set_margin": 0.95},
      ["solver"]:    {"grad_tol": 1e-10, "max_iter": 200, ...},
      ["seed"]: 0,
      ["disturbance"]: {"bound": [..], "decay": 1.0}
    }
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .barriers import BarrierSpec, Polytope, RelaxingFunction
from .errors import ConfigError, RelaxedMpcError
from .linsys import LtiSystem
from .ocp import CondensedOcp, OcpDesign, SolverOptions, condense
from .terminal import STRATEGIES

__all__ = ["DesignConfig", "load_config", "bundled_config_path"]

_TOP_KEYS = {"system", "constraints", "Q", "R", "N", "eps", "delta", "barrier", "strategy",
             "terminal", "solver", "seed", "disturbance", "name"}
_TERMINAL_KEYS = {"T", "deadbeat_radius", "set_shape", "set_margin"}


def _matrix(value, name, ndim=2):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: not a numeric array") from exc
    if arr.ndim != ndim:
        raise ConfigError(f"{name}: expected a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name}: entries must be finite")
    return arr


def _box(lower, upper, name):
    lo, up = _matrix(lower, f"{name}_lower", 1), _matrix(upper, f"{name}_upper", 1)
    if lo.shape != up.shape:
        raise ConfigError(f"{name}_lower and {name}_upper differ in length")
    try:
        P = Polytope.box(lo, up)
    except ValueError as exc:
        raise ConfigError(f"{name} box: {exc}") from exc
    return P.C, P.d


@dataclass(frozen=True)
class DesignConfig:
    """Validated design parameters; see the module docstring for the JSON layout."""

    A: np.ndarray
    B: np.ndarray
    C_x: np.ndarray
    d_x: np.ndarray
    C_u: np.ndarray
    d_u: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    N: int
    eps: float
    delta: float
    recentering: str = "weight"
    relaxing: str = "polynomial"
    k: int = 2
    strategy: str = "nonrelaxed-xf"
    terminal: dict = field(default_factory=dict)
    solver: SolverOptions = field(default_factory=SolverOptions)
    seed: int = 0
    disturbance_bound: np.ndarray | None = None
    disturbance_decay: float = 1.0
    name: str = ""

    def __post_init__(self):
        n, m = self.A.shape[0], self.B.shape[1]
        checks = [
            (self.A.shape == (n, n), "A must be square"),
            (self.B.shape[0] == n, "B must have as many rows as A"),
            (self.C_x.shape[1:] == (n,), "C_x must have n columns"),
            (self.C_u.shape[1:] == (m,), "C_u must have m columns"),
            (self.d_x.shape == (self.C_x.shape[0],), "d_x length must match C_x rows"),
            (self.d_u.shape == (self.C_u.shape[0],), "d_u length must match C_u rows"),
            (self.Q.shape == (n, n), "Q must be n x n"),
            (self.R.shape == (m, m), "R must be m x m"),
            (np.all(self.d_x > 0) and np.all(self.d_u > 0),
             "constraint offsets d must be positive (origin in the interior)"),
            (self.N >= 1, "N must be at least 1"),
            (self.eps >= 0, "eps must be nonnegative"),
            (self.delta > 0, "delta must be positive"),
            (self.delta <= min(self.d_x.min(), self.d_u.min()), "delta must not exceed min d"),
            (self.recentering in ("weight", "gradient"), "recentering must be weight or gradient"),
            (self.relaxing in ("polynomial", "exponential"),
             "relaxing must be polynomial or exponential"),
            (self.relaxing != "polynomial" or (self.k >= 2 and self.k % 2 == 0),
             "polynomial order k must be an even integer >= 2"),
            (self.strategy in STRATEGIES, f"strategy must be one of {', '.join(STRATEGIES)}"),
            (self.strategy != "quadratic" or (self.relaxing == "polynomial" and self.k == 2),
             "quadratic strategy needs the quadratic relaxing function (polynomial, k=2)"),
            (set(self.terminal) <= _TERMINAL_KEYS,
             f"unknown terminal keys {sorted(set(self.terminal) - _TERMINAL_KEYS)}"),
            (self.disturbance_decay > 0, "disturbance decay must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if not np.allclose(self.Q, self.Q.T) or np.linalg.eigvalsh(self.Q).min() < -1e-12:
            raise ConfigError("Q must be symmetric positive semidefinite")
        if not np.allclose(self.R, self.R.T) or np.linalg.eigvalsh(self.R).min() <= 0:
            raise ConfigError("R must be symmetric positive definite")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @classmethod
    def from_dict(cls, cfg: dict) -> "DesignConfig":
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(cfg) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        for key in ("system", "constraints", "Q", "R", "N", "eps", "delta"):
            if key not in cfg:
                raise ConfigError(f"missing required key {key!r}")
        sysd, cons = cfg["system"], cfg["constraints"]
        if not isinstance(sysd, dict) or "A" not in sysd or "B" not in sysd:
            raise ConfigError("system needs A and B")
        if not isinstance(cons, dict):
            raise ConfigError("constraints must be an object")
        if "C_x" in cons:
            C_x, d_x = _matrix(cons["C_x"], "C_x"), _matrix(cons.get("d_x"), "d_x", 1)
        elif "x_lower" in cons:
            C_x, d_x = _box(cons["x_lower"], cons.get("x_upper"), "x")
        else:
            raise ConfigError("constraints need C_x/d_x or x_lower/x_upper")
        if "C_u" in cons:
            C_u, d_u = _matrix(cons["C_u"], "C_u"), _matrix(cons.get("d_u"), "d_u", 1)
        elif "u_lower" in cons:
            C_u, d_u = _box(cons["u_lower"], cons.get("u_upper"), "u")
        else:
            raise ConfigError("constraints need C_u/d_u or u_lower/u_upper")
        barrier = cfg.get("barrier", {})
        solver = cfg.get("solver", {})
        known = {f.name for f in dataclasses.fields(SolverOptions)}
        if set(solver) - known:
            raise ConfigError(f"unknown solver keys {sorted(set(solver) - known)}")
        dist = cfg.get("disturbance") or {}
        try:
            return cls(
                A=_matrix(sysd["A"], "A"), B=_matrix(sysd["B"], "B"),
                C_x=C_x, d_x=d_x, C_u=C_u, d_u=d_u,
                Q=_matrix(cfg["Q"], "Q"), R=_matrix(cfg["R"], "R"),
                N=int(cfg["N"]), eps=float(cfg["eps"]), delta=float(cfg["delta"]),
                recentering=barrier.get("recentering", "weight"),
                relaxing=barrier.get("relaxing", "polynomial"), k=int(barrier.get("k", 2)),
                strategy=cfg.get("strategy", "nonrelaxed-xf"),
                terminal=dict(cfg.get("terminal") or {}),
                solver=SolverOptions(**solver), seed=int(cfg.get("seed", 0)),
                disturbance_bound=None if dist.get("bound") is None
                else _matrix(dist["bound"], "disturbance.bound", 1),
                disturbance_decay=float(dist.get("decay", 1.0)),
                name=str(cfg.get("name", "")))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "system": {"A": self.A.tolist(), "B": self.B.tolist()},
            "constraints": {"C_x": self.C_x.tolist(), "d_x": self.d_x.tolist(),
                            "C_u": self.C_u.tolist(), "d_u": self.d_u.tolist()},
            "Q": self.Q.tolist(), "R": self.R.tolist(), "N": self.N,
            "eps": self.eps, "delta": self.delta,
            "barrier": {"recentering": self.recentering, "relaxing": self.relaxing,
                        "k": self.k},
            "strategy": self.strategy, "terminal": dict(self.terminal),
            "solver": dataclasses.asdict(self.solver), "seed": self.seed,
        }
        if self.disturbance_bound is not None:
            out["disturbance"] = {"bound": self.disturbance_bound.tolist(),
                                  "decay": self.disturbance_decay}
        return out

    def replace(self, **changes) -> "DesignConfig":
        """Copy with some fields overridden (re-validated)."""
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def system(self) -> LtiSystem:
        return LtiSystem(self.A, self.B)

    def specs(self, delta: float | None = None) -> tuple[BarrierSpec, BarrierSpec]:
        """State and input barrier specifications."""
        rf = RelaxingFunction(self.relaxing, self.delta if delta is None else float(delta),
                              self.k)
        try:
            return (BarrierSpec(Polytope(self.C_x, self.d_x), self.recentering, rf),
                    BarrierSpec(Polytope(self.C_u, self.d_u), self.recentering, rf))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def design(self, delta: float | None = None) -> OcpDesign:
        """Synthesize the controller design (terminal cost included)."""
        sx, su = self.specs(delta)
        opts = {k: v for k, v in self.terminal.items() if v is not None}
        return OcpDesign.build(self.system(), self.Q, self.R, self.N, self.eps, sx, su,
                               self.strategy, **opts)

    def ocp(self, delta: float | None = None, exact: bool = False) -> CondensedOcp:
        return condense(self.design(delta), exact=exact, options=self.solver)


def load_config(path) -> DesignConfig:
    """Read and validate a JSON design config.

    Raises
    ------
    ConfigError
        Unreadable file, malformed JSON or an invalid field.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    try:
        return DesignConfig.from_dict(raw)
    except ConfigError:
        raise
    except RelaxedMpcError as exc:
        raise ConfigError(str(exc)) from exc


def bundled_config_path():
    """Path of the bundled double-integrator example config."""
    return resources.files("relaxed_mpc") / "data" / "double_integrator.json"
