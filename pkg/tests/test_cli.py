import json

import numpy as np
import pytest

from perimap import cli


def write_config(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


SOLVE_E1 = {
    "system": {"name": "linear-shear", "params": {"q": 0.5}},
    "mode": "solve-curve",
    "omega": 0.25,
    "eps": 0.01,
    "solver": {"n_nodes": 256, "tol": 1e-12, "max_iter": 100},
    "sampling": {"n_samples": 128, "seed": 1},
}


class TestConfigValidation:
    def test_negative_tol_rejected(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, "c.json", {
            "system": {"name": "linear-shear"},
            "solver": {"tol": -1}, "sampling": {"seed": 1}})
        rc = cli.main(["solve-curve", "--config", cfgp,
                       "--out", str(tmp_path)])
        assert rc == 2
        assert "tol" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, "c.json", {
            "system": {"name": "linear-shear"},
            "frobnicate": 1, "sampling": {"seed": 1}})
        rc = cli.main(["check-map", "--config", cfgp, "--out", str(tmp_path)])
        assert rc == 2
        assert "frobnicate" in capsys.readouterr().err

    def test_seed_mandatory(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, "c.json",
                            {"system": {"name": "linear-shear"}})
        rc = cli.main(["check-map", "--config", cfgp, "--out", str(tmp_path)])
        assert rc == 2
        assert "seed" in capsys.readouterr().err

    def test_seed_flag_overrides(self, tmp_path):
        cfgp = write_config(tmp_path, "c.json",
                            {"system": {"name": "linear-shear"}})
        rc = cli.main(["check-map", "--config", cfgp, "--out", str(tmp_path),
                       "--seed", "7"])
        assert rc == 0

    def test_mode_mismatch_rejected(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, "c.json", SOLVE_E1)
        rc = cli.main(["check-map", "--config", cfgp, "--out", str(tmp_path)])
        assert rc == 2
        assert "mode" in capsys.readouterr().err


class TestSolveCurve:
    def test_matches_closed_form(self, tmp_path):
        cfgp = write_config(tmp_path, "c.json", SOLVE_E1)
        out = tmp_path / "out"
        assert cli.main(["solve-curve", "--config", cfgp,
                         "--out", str(out)]) == 0
        rows = np.loadtxt(out / "curve.csv", delimiter=",", skiprows=1)
        c = 0.01 / (np.exp(2j * np.pi * 0.25) - 0.5)
        exact = (c * np.exp(2j * np.pi * rows[:, 0])).imag
        assert np.max(np.abs(rows[:, 1] - exact)) <= 1e-8
        report = json.loads((out / "solver_report.json").read_text())
        assert report["report"]["converged"] is True

    def test_byte_deterministic(self, tmp_path):
        cfgp = write_config(tmp_path, "c.json", SOLVE_E1)
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            assert cli.main(["solve-curve", "--config", cfgp,
                             "--out", str(out)]) == 0
            outs.append(((out / "curve.csv").read_bytes(),
                         (out / "solver_report.json").read_bytes()))
        assert outs[0] == outs[1]

    def test_nonconvergence_exits_nonzero(self, tmp_path, capsys):
        cfg = dict(SOLVE_E1, solver={"n_nodes": 64, "tol": 1e-12,
                                     "max_iter": 2})
        cfgp = write_config(tmp_path, "c.json", cfg)
        rc = cli.main(["solve-curve", "--config", cfgp,
                       "--out", str(tmp_path / "out")])
        assert rc == 1
        assert "solve-curve" in capsys.readouterr().err


class TestOtherModes:
    def test_check_map(self, tmp_path):
        cfgp = write_config(tmp_path, "c.json", {
            "system": {"name": "nonlinear-toy"},
            "sampling": {"n_samples": 64, "seed": 2}})
        out = tmp_path / "out"
        assert cli.main(["check-map", "--config", cfgp, "--out", str(out)]) == 0
        rep = json.loads((out / "assumptions.json").read_text())
        assert abs(rep["q_estimate"] - 0.5) < 0.05

    def test_certify(self, tmp_path):
        cfgp = write_config(tmp_path, "c.json", {
            "system": {"name": "linear-shear"},
            "sampling": {"n_samples": 32, "seed": 3}})
        out = tmp_path / "out"
        assert cli.main(["certify", "--config", cfgp, "--out", str(out)]) == 0
        cert = json.loads((out / "certificate.json").read_text())
        assert cert["eps0"] == cert["lambda0"] ** 2 / 2.0
        assert cert["r0"] == cert["lambda0"]
        assert cert["mu"] == 0.75

    def test_sweep_eps(self, tmp_path):
        cfgp = write_config(tmp_path, "c.json", {
            "system": {"name": "linear-shear"},
            "omega": 0.25,
            "eps_list": [1e-3, 1e-2],
            "solver": {"n_nodes": 128, "tol": 1e-12},
            "sampling": {"n_samples": 32, "seed": 4}})
        out = tmp_path / "out"
        assert cli.main(["sweep-eps", "--config", cfgp, "--out", str(out)]) == 0
        rows = np.loadtxt(out / "sweep.csv", delimiter=",", skiprows=1)
        assert rows.shape == (2, 3)
        assert abs(rows[0, 2] / rows[1, 2] - 1.0) <= 1e-9

    def test_hybrid_analyze(self, tmp_path):
        cfgp = write_config(tmp_path, "c.json", {
            "system": {"name": "polar-hybrid", "params": {"kappa": 0.5}},
            "sampling": {"n_samples": 16, "seed": 5}})
        out = tmp_path / "out"
        assert cli.main(["hybrid-analyze", "--config", cfgp,
                         "--out", str(out)]) == 0
        rep = json.loads((out / "cycle_report.json").read_text())
        assert abs(rep["jacobian"][0][0] - 0.5 / np.e) <= 1e-6
        assert max(abs(v) for v in rep["u_star"]) <= 1e-10

    def test_cylinder_data(self, tmp_path):
        cfgp = write_config(tmp_path, "c.json", {
            "system": {"name": "polar-hybrid", "params": {"kappa": 0.5}},
            "eps": 0.01,
            "solver": {"n_nodes": 32, "tol": 1e-9},
            "sampling": {"n_samples": 16, "seed": 6},
            "n_trajectories": 3})
        out = tmp_path / "out"
        assert cli.main(["cylinder-data", "--config", cfgp,
                         "--out", str(out)]) == 0
        rows = np.loadtxt(out / "cylinder.csv", delimiter=",", skiprows=1)
        assert set(np.unique(rows[:, 0])) == {0.0, 1.0, 2.0}
        # states stay near the unit cycle
        radii = np.linalg.norm(rows[:, 2:], axis=1)
        assert np.all(np.abs(radii - 1.0) < 0.2)

    def test_env_thread_cap_validated(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("PERIMAP_THREADS", "zero")
        cfgp = write_config(tmp_path, "c.json", {
            "system": {"name": "linear-shear"},
            "omega": 0.25, "eps_list": [1e-3],
            "sampling": {"seed": 1}})
        rc = cli.main(["sweep-eps", "--config", cfgp, "--out", str(tmp_path)])
        assert rc == 2
