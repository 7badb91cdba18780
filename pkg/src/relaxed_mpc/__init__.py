"""Relaxed logarithmic barrier model predictive control for linear systems."""
from .analysis import (RegionCertificate, SchemeComparison, TuneResult, ViolationReport,
                       alpha, alpha_max, beta2_closed_form, boundary_levels, compare_schemes,
                       constrained_reference, feasible_set_rays, gradient_row_root,
                       region_certificate, tune_delta, violation_bounds, weight_violation)
from .barriers import (BarrierSpec, Polytope, RelaxingFunction, barrier_boundary_level,
                       barrier_eval, barrier_value, make_weight_vector, nonrelaxed_eval,
                       quadratic_upper_bound, relax_eval)
from .config import DesignConfig, bundled_config_path, load_config
from .errors import *  # noqa: F401,F403
from .linsys import (LtiSystem, StateFeedback, TailSequenceGains, controllability_index,
                     deadbeat_gain, double_integrator, solve_constrained_lyapunov, solve_dare,
                     solve_modified_riccati, spectral_radius, zero_terminal_lqr)
from .ocp import (CondensedOcp, OcpDesign, SolveResult, SolverOptions, condense, eval_cost,
                  mpc_feedback, newton_solve, shift_warm_start)
from .qp import QpResult, solve_qp
from .sim import Disturbance, Trajectory, lyapunov_audit, simulate, write_csv
from .terminal import (STRATEGIES, STRATEGY_SUMMARY, TerminalCost, TerminalSet,
                       build_terminal_cost, build_terminal_set, verify_terminal_cost)

__version__ = "0.1.0"
