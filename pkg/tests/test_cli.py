import json

import numpy as np
import pytest
import yaml

from pooltrial.cli import main

TINY_CONFIG = {
    "trial": {"n_users": 40, "horizon_T": 6, "state_dim": 2, "master_seed": 7},
    "policy": {"kind": "boltzmann", "rho": 2.0, "pi_min": 0.1},
    "env": {"kappa1": 2.0},
}


@pytest.fixture()
def tiny_config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(TINY_CONFIG))
    return str(path)


class TestSimulate:
    def test_happy_path(self, tiny_config_file, tmp_path):
        out = tmp_path / "sim"
        code = main(
            ["simulate", "--config", tiny_config_file, "--out", str(out), "--rep", "0"]
        )
        assert code == 0
        assert (out / "trajectories.csv").exists()
        assert (out / "beta_hats.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["master_seed"] == 7
        assert manifest["config"]["policy"]["kind"] == "boltzmann"

    def test_deterministic_output_bytes(self, tiny_config_file, tmp_path):
        main(["simulate", "--config", tiny_config_file, "--out", str(tmp_path / "a")])
        main(["simulate", "--config", tiny_config_file, "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "trajectories.csv").read_bytes() == (
            tmp_path / "b" / "trajectories.csv"
        ).read_bytes()

    def test_seed_override(self, tiny_config_file, tmp_path):
        main(
            ["simulate", "--config", tiny_config_file, "--seed", "99",
             "--out", str(tmp_path / "a")]
        )
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["master_seed"] == 99

    def test_missing_config_exits_1(self, tmp_path):
        code = main(
            ["simulate", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]
        )
        assert code == 1

    def test_invalid_pi_min_exits_1(self, tmp_path):
        bad = dict(TINY_CONFIG, policy={"kind": "boltzmann", "pi_min": 0.6})
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(bad))
        code = main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == 1

    def test_unknown_key_exits_1(self, tmp_path):
        bad = dict(TINY_CONFIG, policy={"kind": "boltzmann", "temperture": 2})
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(bad))
        code = main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == 1

    def test_usage_error_exits_1(self):
        assert main(["simulate"]) == 1

    def test_numerical_failure_exits_2(self, tmp_path):
        # two users cannot identify the 4-parameter policy fit at t = 1
        cfg = dict(TINY_CONFIG, trial={"n_users": 2, "horizon_T": 4, "master_seed": 1})
        path = tmp_path / "degenerate.yaml"
        path.write_text(yaml.safe_dump(cfg))
        code = main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == 2


class TestEstimate:
    def test_roundtrip_from_manifest(self, tiny_config_file, tmp_path):
        sim_dir, est_dir = tmp_path / "sim", tmp_path / "est"
        main(["simulate", "--config", tiny_config_file, "--out", str(sim_dir)])
        code = main(["estimate", "--in", str(sim_dir), "--out", str(est_dir)])
        assert code == 0
        report = json.loads((est_dir / "estimate.json").read_text())
        for key in (
            "theta_hat",
            "psi_residual_norm",
            "sandwich_cov",
            "adaptive_cov",
            "se_sandwich",
            "se_adaptive",
            "ci_sandwich",
            "ci_adaptive",
            "policy_invariance_norms",
            "stacked_dim",
            "equivalence_gap",
        ):
            assert key in report
        assert len(report["theta_hat"]) == 3
        assert report["stacked_dim"] == 5 * 4 + 3
        assert report["psi_residual_norm"] < 1e-8

    def test_estimate_matches_in_process(self, tiny_config_file, tmp_path):
        from pooltrial import SeedPlan, fit_theta, run_trial
        from pooltrial.config import load_config

        sim_dir, est_dir = tmp_path / "sim", tmp_path / "est"
        main(["simulate", "--config", tiny_config_file, "--out", str(sim_dir)])
        main(["estimate", "--in", str(sim_dir), "--out", str(est_dir)])
        report = json.loads((est_dir / "estimate.json").read_text())
        config, _, _ = load_config(tiny_config_file)
        est = fit_theta(run_trial(config, SeedPlan(7, 0)))
        assert np.allclose(report["theta_hat"], est.theta_hat, rtol=0, atol=0)

    def test_sandwich_only_variant(self, tiny_config_file, tmp_path):
        sim_dir, est_dir = tmp_path / "sim", tmp_path / "est"
        main(["simulate", "--config", tiny_config_file, "--out", str(sim_dir)])
        code = main(
            ["estimate", "--in", str(sim_dir), "--out", str(est_dir),
             "--variance", "sandwich", "--alpha", "0.1"]
        )
        assert code == 0
        report = json.loads((est_dir / "estimate.json").read_text())
        assert report["adaptive_cov"] is None
        assert report["alpha"] == 0.1

    def test_missing_manifest_exits_1(self, tmp_path):
        code = main(["estimate", "--in", str(tmp_path), "--out", str(tmp_path / "e")])
        assert code == 1


class TestMc:
    def test_tiny_grid(self, tmp_path):
        cfg = dict(TINY_CONFIG)
        cfg["grid"] = {"kappa1": [1.0], "rho": [1.0], "n_users": [40]}
        path = tmp_path / "grid.yaml"
        path.write_text(yaml.safe_dump(cfg))
        out = tmp_path / "mc"
        code = main(
            ["mc", "--config", str(path), "--reps", "8", "--oracle-n", "2000",
             "--out", str(out)]
        )
        assert code == 0
        lines = (out / "table.csv").read_text().splitlines()
        assert len(lines) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["reps"] == 8
        assert manifest["grid"]["n_users"] == [40]

    def test_preset_resolves(self):
        from pooltrial.config import load_config

        config, grid, _ = load_config("paper_table1")
        assert config.horizon_T == 50
        assert grid == {
            "kappa1": [1.0, 5.0],
            "rho": [0.5, 1.0, 5.0],
            "n_users": [50, 100, 500],
        }


class TestCheck:
    def test_invariance_suite_writes_report(self, tmp_path):
        out = tmp_path / "chk"
        code = main(
            ["check", "--suite", "invariance", "--reps", "40", "--out", str(out)]
        )
        assert code == 0
        report = json.loads((out / "check.json").read_text())
        assert report["invariance"]["rho5_dominates"] is True
        assert report["invariance"]["constant_uniform_zero"] is True

    def test_bernstein_suite_small(self, tmp_path):
        code = main(["check", "--suite", "bernstein", "--reps", "50"])
        assert code == 0

    def test_failure_exits_3(self, monkeypatch, tmp_path):
        import pooltrial.diagnostics as diag

        def fake_scan(labeled, reps):
            T = 10
            return {
                "rho=5": np.zeros(T - 1),
                "rho=0.5": np.ones(T - 1),
                "constant_uniform": np.zeros(T - 1),
            }

        monkeypatch.setattr(diag, "invariance_scan", fake_scan)
        code = main(["check", "--suite", "invariance", "--reps", "5"])
        assert code == 3
