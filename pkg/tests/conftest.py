import functools

import numpy as np
import pytest

from relaxed_mpc import (BarrierSpec, OcpDesign, Polytope, RelaxingFunction, condense,
                         double_integrator)

Q_DI = np.diag([1.0, 0.1])
R_DI = np.eye(1)
EPS_DI = 1e-2
X_BOX = ([-2.0, -0.8], [3.0, 0.8])
U_BOX = ([-2.0], [1.0])


def di_specs(delta, recentering="weight", kind="polynomial", k=2):
    rf = RelaxingFunction(kind, delta, k)
    return (BarrierSpec(Polytope.box(*X_BOX), recentering, rf),
            BarrierSpec(Polytope.box(*U_BOX), recentering, rf))


@functools.lru_cache(maxsize=None)
def di_design(strategy, delta, N=10, eps=EPS_DI, recentering="weight", T=None):
    sx, su = di_specs(delta, recentering)
    opts = {} if T is None else {"T": T}
    return OcpDesign.build(double_integrator(), Q_DI, R_DI, N, eps, sx, su, strategy, **opts)


@functools.lru_cache(maxsize=None)
def di_ocp(strategy, delta, N=10, eps=EPS_DI, recentering="weight", T=None, exact=False):
    return condense(di_design(strategy, delta, N, eps, recentering, T), exact=exact)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checks")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
