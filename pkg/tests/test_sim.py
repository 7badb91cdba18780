import csv
import dataclasses

import numpy as np
import pytest

from relaxed_mpc import (Disturbance, SolverOptions, condense, lyapunov_audit, newton_solve,
                         simulate, write_csv)
from relaxed_mpc.errors import SolverFailure
from relaxed_mpc.sim import csv_header

from conftest import di_design, di_ocp


class TestSimulate:
    def test_origin_stays_at_rest(self):
        traj = simulate(di_ocp("quadratic", 0.1), np.zeros(2), 10)
        np.testing.assert_allclose(traj.states, 0, atol=1e-14)
        np.testing.assert_allclose(traj.inputs, 0, atol=1e-14)
        assert lyapunov_audit(traj) <= 1e-14

    def test_shapes(self):
        traj = simulate(di_ocp("quadratic", 0.1), [1.0, 0.0], 7)
        assert traj.states.shape == (8, 2) and traj.inputs.shape == (7, 1)
        assert traj.values.shape == (8,) and traj.stage_costs.shape == (7,)
        assert traj.viol_x.shape == (8,) and traj.viol_u.shape == (7,)

    def test_values_match_solver(self):
        ocp = di_ocp("tail-deadbeat", 0.1)
        traj = simulate(ocp, [1.0, 0.2], 5)
        for x, v in zip(traj.states, traj.values):
            np.testing.assert_allclose(v, newton_solve(ocp, x).value, rtol=1e-9)
        np.testing.assert_allclose(traj.stage_costs,
                                   ocp.design.stage_cost(traj.states[:-1], traj.inputs))

    @pytest.mark.parametrize("strategy", ["relaxed-xf", "tail-deadbeat", "quadratic"])
    def test_value_decreases(self, strategy):
        traj = simulate(di_ocp(strategy, 0.1), [2.0, -0.5], 40)
        assert lyapunov_audit(traj) <= 1e-7
        assert np.all(np.diff(traj.values) <= 1e-7)

    def test_seeded_disturbance(self):
        ocp = di_ocp("quadratic", 0.1)
        dist = Disturbance(bound=[0.01, 0.02], seed=7)
        a, b = simulate(ocp, [1.0, 0.0], 10, dist), simulate(ocp, [1.0, 0.0], 10, dist)
        np.testing.assert_array_equal(a.states, b.states)
        assert np.all(np.abs(a.disturbances) <= [0.01, 0.02])
        assert a.dynamics_residual(ocp.design.sys) <= 1e-12
        assert a.metadata["seed"] == 7
        c = simulate(ocp, [1.0, 0.0], 10, Disturbance(bound=[0.01, 0.02], seed=8))
        assert not np.array_equal(a.states, c.states)

    def test_fixed_sequence(self):
        w = Disturbance(sequence=[[0.1, 0.0], [0.0, -0.1]]).realize(4, 2)
        np.testing.assert_allclose(w, [[0.1, 0], [0, -0.1], [0, 0], [0, 0]])

    def test_decaying_disturbance_converges(self):
        ocp = di_ocp("quadratic", 0.1)
        traj = simulate(ocp, [1.0, 0.0], 150, Disturbance(bound=0.05, seed=1, decay=0.9))
        assert np.linalg.norm(traj.states[-1]) < 1e-4
        assert np.abs(traj.states).max() < 10

    def test_failure_names_step(self):
        design = di_design("quadratic", 0.1)
        ocp = condense(design, options=SolverOptions(max_iter=1))
        with pytest.raises(SolverFailure, match="^step 0:"):
            simulate(ocp, [2.0, 0.0], 3)


class TestAudit:
    def test_zero_steps(self):
        traj = simulate(di_ocp("quadratic", 0.1), [1.0, 0.0], 0)
        assert traj.states.shape == (1, 2) and lyapunov_audit(traj) == 0.0

    def test_needs_final_value(self):
        ocp = di_ocp("quadratic", 0.1)
        traj = simulate(ocp, [1.0, 0.0], 5, record_final_value=False)
        with pytest.raises(ValueError):
            lyapunov_audit(traj)
        full = simulate(ocp, [1.0, 0.0], 5)
        np.testing.assert_allclose(lyapunov_audit(traj, ocp), lyapunov_audit(full), atol=1e-12)

    def test_broken_design_is_reported(self):
        design = di_design("quadratic", 0.1)
        intact = lyapunov_audit(simulate(condense(design), [2.0, -0.5], 40))
        audits = []
        for factor in (0.5, 0.1):
            term = dataclasses.replace(design.terminal, P=factor * design.terminal.P)
            traj = simulate(condense(dataclasses.replace(design, terminal=term)), [2.0, -0.5], 40)
            audits.append(lyapunov_audit(traj))
        # halving P weakens the certificate, shrinking it tenfold breaks it
        assert intact < audits[0] < 0 < audits[1]


class TestCsv:
    def test_format_round_trip(self, tmp_path):
        traj = simulate(di_ocp("quadratic", 0.1), [1.0, -0.3], 4)
        path = tmp_path / "t.csv"
        write_csv(traj, path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["k", "x_1", "x_2", "u_1", "value", "stage_cost", "viol_x_max",
                           "viol_u_max", "newton_iters"]
        assert len(rows) == 6
        X = np.array([[float(v) for v in r[1:3]] for r in rows[1:]])
        np.testing.assert_array_equal(X, traj.states)
        np.testing.assert_array_equal([float(r[3]) for r in rows[1:-1]], traj.inputs[:, 0])
        assert rows[-1][3] == "" and rows[-1][5] == ""

    def test_single_row(self, tmp_path):
        traj = simulate(di_ocp("quadratic", 0.1), [1.0, -0.3], 0)
        write_csv(traj, tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert len(rows) == 2 and rows[1][0] == "0"

    def test_header(self):
        assert csv_header(1, 2) == ["k", "x_1", "u_1", "u_2", "value", "stage_cost",
                                    "viol_x_max", "viol_u_max", "newton_iters"]
