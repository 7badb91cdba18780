import csv
import json
import subprocess

import numpy as np
import pytest

from relaxed_mpc import (bundled_config_path, load_config, lyapunov_audit, newton_solve,
                         simulate, solve_dare)
from relaxed_mpc.cli import main


def read_csv(path):
    rows = list(csv.reader(open(path)))
    return rows[0], rows[1:]


def config_file(tmp_path, **changes):
    raw = json.loads(bundled_config_path().read_text())
    raw.update(changes)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return str(path)


class TestSimulate:
    def test_csv_matches_library(self, tmp_path, capsys):
        out = tmp_path / "traj.csv"
        code = main(["simulate", "--config", "bundled", "--x0", "2.15,-0.7", "--steps", "30",
                     "--out", str(out)])
        assert code == 0
        assert str(out) in capsys.readouterr().out
        header, rows = read_csv(out)
        assert len(rows) == 31 and header[:4] == ["k", "x_1", "x_2", "u_1"]
        traj = simulate(load_config(bundled_config_path()).ocp(), [2.15, -0.7], 30)
        np.testing.assert_array_equal([[float(v) for v in r[1:3]] for r in rows], traj.states)
        np.testing.assert_array_equal([float(r[4]) for r in rows], traj.values)

    def test_default_steps(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(["simulate", "--config", "bundled", "--x0", "2.15,-0.7"]) == 0
        _, rows = read_csv(tmp_path / "trajectory.csv")
        assert len(rows) == 201

    def test_zero_steps(self, tmp_path):
        out = tmp_path / "t.csv"
        assert main(["simulate", "--config", "bundled", "--x0", "1,0", "--steps", "0",
                     "--out", str(out)]) == 0
        _, rows = read_csv(out)
        assert len(rows) == 1 and rows[0][3] == ""

    def test_negative_values(self, tmp_path):
        out = tmp_path / "t.csv"
        assert main(["simulate", "--config", "bundled", "--strategy", "quadratic",
                     "--delta", "0.1", "--x0", "-1.75,-1", "--steps", "5",
                     "--out", str(out)]) == 0
        _, rows = read_csv(out)
        assert float(rows[0][1]) == -1.75

    def test_disturbance_seed(self, tmp_path):
        outs = []
        for i, seed in enumerate(["3", "3", "4"]):
            out = tmp_path / f"t{i}.csv"
            main(["simulate", "--config", "bundled", "--x0", "1,0", "--steps", "5",
                  "--w-bound", "0.01,0.01", "--seed", seed, "--out", str(out)])
            outs.append(out.read_text())
        assert outs[0] == outs[1] != outs[2]


class TestCommands:
    def test_design_report(self, capsys):
        assert main(["design", "--config", "bundled"]) == 0
        text = capsys.readouterr().out
        assert "strategy summary:" in text and "whole state space" in text
        assert "FAIL" not in text and "beta_bar_x" in text

    def test_design_eps_zero_is_lqr(self, tmp_path, capsys):
        assert main(["design", "--config", config_file(tmp_path, eps=0.0)]) == 0
        text = capsys.readouterr().out
        value = float(text.split("max |P - P_uc| = ")[1].split()[0])
        assert value < 1e-9

    def test_solve_matches_library(self, capsys):
        assert main(["solve", "--config", "bundled", "--x0", "1,0.3"]) == 0
        text = capsys.readouterr().out
        value = float(text.split("value = ")[1].split()[0])
        ref = newton_solve(load_config(bundled_config_path()).ocp(), np.array([1.0, 0.3]))
        assert value == float("%.17g" % ref.value)

    def test_bounds(self, capsys):
        assert main(["bounds", "--config", "bundled", "--x0", "1,0.3", "--delta", "1e-3"]) == 0
        assert "max violation bound" in capsys.readouterr().out

    def test_compare(self, capsys):
        assert main(["compare", "--config", "bundled", "--x0", "1,0.3"]) == 0
        text = capsys.readouterr().out
        assert "relaxed" in text and "constrained" in text

    def test_tune_delta_origin(self, capsys):
        assert main(["tune-delta", "--config", "bundled", "--vertices", "0,0"]) == 0
        assert "4.000000e-01" in capsys.readouterr().out

    def test_tune_delta_not_terminated(self, capsys):
        code = main(["tune-delta", "--config", "bundled", "--strategy", "quadratic",
                     "--vertices", "-2.5,-1", "--max-halvings", "2"])
        assert code == 4
        assert "not terminated" in capsys.readouterr().out


class TestExitCodes:
    def test_missing_config_flag(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["simulate", "--x0", "1,0"])
        assert info.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unreadable_config(self, tmp_path):
        assert main(["design", "--config", str(tmp_path / "none.json")]) == 2

    def test_invalid_strategy_combination(self, tmp_path):
        path = config_file(tmp_path, strategy="quadratic",
                           barrier={"relaxing": "exponential"})
        assert main(["design", "--config", path]) == 2

    def test_eps_zero_rejected_for_simulation(self, tmp_path):
        assert main(["simulate", "--config", config_file(tmp_path, eps=0.0), "--x0", "1,0"]) == 2

    def test_bad_x0(self):
        assert main(["solve", "--config", "bundled", "--x0", "1,2,3"]) == 2
        assert main(["solve", "--config", "bundled", "--x0", "a,b"]) == 2

    def test_solver_failure(self, tmp_path):
        path = config_file(tmp_path, solver={"max_iter": 1}, strategy="quadratic", delta=0.1)
        assert main(["solve", "--config", path, "--x0", "2.9,0.7"]) == 3

    def test_warning_for_unstable_long_horizon(self, tmp_path, capsys):
        path = config_file(tmp_path, system={"A": [[1.3, 0.1], [0.0, 1.0]], "B": [[0.01], [0.1]]},
                           N=31, strategy="quadratic", delta=0.1)
        main(["solve", "--config", path, "--x0", "0.1,0"])
        assert "spectral radius" in capsys.readouterr().err

    def test_console_script(self, tmp_path):
        out = tmp_path / "t.csv"
        proc = subprocess.run(["relaxed-mpc", "simulate", "--config", "bundled", "--x0", "1,0",
                               "--steps", "3", "--out", str(out)], capture_output=True, text=True)
        assert proc.returncode == 0 and out.exists()


def test_p_uc_reference():
    cfg = load_config(bundled_config_path())
    np.testing.assert_allclose(solve_dare(cfg.system(), cfg.Q, cfg.R)[0],
                               [[14.5095, 9.3008], [9.3008, 13.5950]], atol=1e-4)
