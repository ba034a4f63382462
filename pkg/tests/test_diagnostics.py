import dataclasses

import numpy as np
import pytest

from pooltrial import EnvConfig, PolicySpec, SeedPlan, TrialConfig, estimate_theta_star
from pooltrial.diagnostics import (
    BoundedFunctional,
    bernstein_check,
    clt_check,
    invariance_scan,
)
from pooltrial.errors import ConfigError
from pooltrial.montecarlo import ORACLE_REP_BASE


@pytest.fixture(scope="module")
def tiny_config():
    return TrialConfig(
        n_users=50,
        horizon_T=4,
        master_seed=92,
        policy=PolicySpec(kind="boltzmann", rho=1.0),
        env=EnvConfig(kappa1=1.0),
    )


class TestBoundedFunctional:
    def test_unbounded_rejected(self):
        with pytest.raises(ConfigError):
            BoundedFunctional("raw_reward")

    def test_unknown_rejected(self):
        with pytest.raises(ConfigError):
            BoundedFunctional("step_count")

    def test_sup_norms(self):
        assert BoundedFunctional("zero").sup_norm == 0.0
        assert BoundedFunctional("one").sup_norm == 1.0
        assert BoundedFunctional("clipped_reward", -3, 3).sup_norm == 3.0


class TestBernstein:
    def test_zero_functional(self, tiny_config):
        report = bernstein_check(
            tiny_config,
            BoundedFunctional("zero"),
            reps=60,
            x_grid=[0.5, 1.0, 4.0],
            oracle_n=5_000,
        )
        assert np.all(report.empirical_tail == 0.0)
        assert report.n_violations == 0

    def test_constant_functional_reduces_to_weight_average(self, tiny_config):
        report = bernstein_check(
            tiny_config, BoundedFunctional("one"), reps=150, oracle_n=20_000
        )
        # E[rho_hat * 1] telescopes to 2^{T-1} in the binary-action setting
        assert report.centering == pytest.approx(
            2 ** (tiny_config.horizon_T - 1), rel=0.02
        )
        assert report.n_violations == 0

    def test_clipped_reward_zero_violations(self, tiny_config):
        report = bernstein_check(
            tiny_config,
            BoundedFunctional("clipped_reward", -3.0, 3.0),
            reps=200,
            oracle_n=20_000,
        )
        assert report.sup_norm == 3.0
        assert report.n_violations == 0

    def test_bound_formula(self, tiny_config):
        report = bernstein_check(
            tiny_config,
            BoundedFunctional("one"),
            reps=30,
            x_grid=[2.0],
            oracle_n=5_000,
        )
        pi_min, T, n = 0.1, tiny_config.horizon_T, tiny_config.n_users
        expected = 2 * np.exp(
            -(pi_min ** (T - 1) / 4)
            * 4.0
            / (report.variance_proxy + 2.0 * 1.0 / np.sqrt(n))
        )
        assert report.bound[0] == pytest.approx(expected, rel=1e-12)


class TestClt:
    def test_insufficient_sample_flag(self, tiny_config):
        report = clt_check(tiny_config, reps=1, theta_star=np.zeros(3))
        assert report.insufficient_sample
        assert not report.passed

    def test_smoke_normality_small(self):
        config = TrialConfig(
            n_users=300,
            horizon_T=8,
            master_seed=93,
            policy=PolicySpec(kind="boltzmann", rho=1.0),
            env=EnvConfig(kappa1=1.0),
        )
        theta_star = estimate_theta_star(
            config, 50_000, SeedPlan(93, ORACLE_REP_BASE)
        )
        report = clt_check(config, reps=60, theta_star=theta_star)
        assert not report.insufficient_sample
        assert report.ks_threshold == pytest.approx(1.63 / np.sqrt(report.reps))
        assert report.passed
        assert abs(report.z_variance - 1.0) < 0.6


class TestInvarianceScan:
    def test_constant_uniform_identically_zero(self, tiny_config):
        flat = tiny_config.replace(
            policy=dataclasses.replace(tiny_config.policy, kind="constant_uniform")
        )
        profiles = invariance_scan([("flat", flat)], reps=20)
        assert np.all(profiles["flat"] == 0.0)

    def test_steepness_dominance(self):
        base = TrialConfig(
            n_users=100,
            horizon_T=8,
            master_seed=91,
            policy=PolicySpec(kind="boltzmann", rho=5.0),
            env=EnvConfig(kappa1=2.0),
        )
        shallow = base.replace(
            policy=dataclasses.replace(base.policy, rho=0.5)
        )
        profiles = invariance_scan([("rho5", base), ("rho05", shallow)], reps=60)
        assert np.all(profiles["rho5"] > profiles["rho05"])
