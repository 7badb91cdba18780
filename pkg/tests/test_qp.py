import cvxpy as cp
import numpy as np
import pytest

from relaxed_mpc import solve_qp
from relaxed_mpc.errors import Infeasible


def cvxpy_qp(H, f, A, b, E=None, e=None):
    x = cp.Variable(f.size)
    cons = [A @ x <= b] + ([E @ x == e] if E is not None else [])
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(H)) + f @ x), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return x.value, prob.value


class TestSolveQp:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_cvxpy(self, seed):
        rng = np.random.default_rng(seed)
        n, m = 6, 12
        W = rng.standard_normal((n, n))
        H = W @ W.T + 0.1 * np.eye(n)
        f = 5 * rng.standard_normal(n)
        A = rng.standard_normal((m, n))
        b = rng.uniform(0.1, 1.0, m)
        res = solve_qp(H, f, A, b)
        x_ref, v_ref = cvxpy_qp(H, f, A, b)
        np.testing.assert_allclose(res.x, x_ref, atol=1e-6)
        np.testing.assert_allclose(res.value, v_ref, rtol=1e-8, atol=1e-10)
        assert np.all(A @ res.x <= b + 1e-9)
        assert np.all(res.multipliers >= -1e-9)

    def test_equality_constraints(self, rng):
        n = 5
        H, f = np.eye(n), rng.standard_normal(n)
        A, b = np.eye(n), np.full(n, 0.3)
        E, e = np.ones((1, n)), np.array([1.0])
        res = solve_qp(H, f, A, b, E, e)
        x_ref, _ = cvxpy_qp(H, f, A, b, E, e)
        np.testing.assert_allclose(res.x, x_ref, atol=1e-7)
        np.testing.assert_allclose(E @ res.x, e, atol=1e-12)

    def test_unconstrained_minimizer_inside(self):
        res = solve_qp(np.eye(2), [-0.1, 0.2], np.eye(2), [1.0, 1.0])
        np.testing.assert_allclose(res.x, [0.1, -0.2])
        assert res.active.size == 0

    def test_infeasible(self):
        with pytest.raises(Infeasible):
            solve_qp(np.eye(1), [0.0], [[1.0], [-1.0]], [-1.0, -1.0])
