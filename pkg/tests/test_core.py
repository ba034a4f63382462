import numpy as np
import pytest

from pooltrial import (
    EnvConfig,
    PolicySpec,
    SeedPlan,
    TrajectorySet,
    TrialConfig,
    derive_stream,
    run_trial,
)
from pooltrial.errors import ConfigError, DataIntegrityError
from pooltrial.simulator import replay_action_probs


class TestDeriveStream:
    def test_same_plan_same_label_identical(self):
        a = derive_stream(SeedPlan(1, 0), "errors").random(1000)
        b = derive_stream(SeedPlan(1, 0), "errors").random(1000)
        assert np.array_equal(a, b)

    def test_different_rep_differs(self):
        a = derive_stream(SeedPlan(1, 0), "errors").random(10_000)
        b = derive_stream(SeedPlan(1, 1), "errors").random(10_000)
        assert np.any(a != b)

    def test_label_separation(self):
        a = derive_stream(SeedPlan(1, 0), "errors").random(10_000)
        b = derive_stream(SeedPlan(1, 0), "actions").random(10_000)
        assert np.any(a != b)

    def test_unknown_label_rejected(self):
        with pytest.raises(ConfigError):
            derive_stream(SeedPlan(1, 0), "bootstrap")

    def test_master_seed_separation(self):
        a = derive_stream(SeedPlan(1, 0), "errors").random(100)
        b = derive_stream(SeedPlan(2, 0), "errors").random(100)
        assert np.any(a != b)


class TestConfigValidation:
    def test_pi_min_out_of_range(self):
        with pytest.raises(ConfigError):
            PolicySpec(kind="boltzmann", pi_min=0.6)

    def test_negative_rho(self):
        with pytest.raises(ConfigError):
            PolicySpec(kind="boltzmann", rho=-1.0)

    def test_small_n_users(self):
        with pytest.raises(ConfigError):
            TrialConfig(n_users=1, horizon_T=5, policy=PolicySpec())

    def test_short_horizon(self):
        with pytest.raises(ConfigError):
            TrialConfig(n_users=10, horizon_T=1, policy=PolicySpec())

    def test_gamma_bounds(self):
        with pytest.raises(ConfigError):
            EnvConfig(gamma=1.0)

    def test_corr_base_bounds(self):
        with pytest.raises(ConfigError):
            EnvConfig(error_corr_base=1.0)
        EnvConfig(error_corr_base=0.0)  # documented i.i.d. limit

    def test_mirror_descent_needs_eta(self):
        with pytest.raises(ConfigError):
            PolicySpec(kind="mirror_descent")

    def test_dims(self):
        cfg = TrialConfig(n_users=10, horizon_T=5, policy=PolicySpec())
        assert cfg.policy_dim == 4
        assert cfg.theta_dim == 3


class TestTrajectorySet:
    def test_action_prob_range_enforced(self, small_trajset):
        pmin = small_trajset.config.policy.pi_min
        assert small_trajset.action_probs.min() >= pmin
        assert small_trajset.action_probs.max() <= 1 - pmin

    def test_corrupt_probs_rejected(self, small_trajset):
        bad = np.array(small_trajset.action_probs)
        bad[0, 1] = 0.01
        with pytest.raises(DataIntegrityError):
            TrajectorySet(
                states=small_trajset.states,
                actions=small_trajset.actions,
                rewards=small_trajset.rewards,
                action_probs=bad,
                beta_hats=small_trajset.beta_hats,
                config=small_trajset.config,
            )

    def test_immutable(self, small_trajset):
        with pytest.raises(ValueError):
            small_trajset.rewards[0, 0] = 1.0

    def test_replay_bit_identical(self, small_trajset):
        replayed = replay_action_probs(small_trajset)
        assert np.array_equal(replayed, small_trajset.action_probs)

    def test_states_have_unit_intercept(self, small_trajset):
        assert np.all(small_trajset.states[:, :, 0] == 1.0)

    def test_serialization_roundtrip(self, small_trajset, tmp_path):
        small_trajset.save(tmp_path)
        loaded = TrajectorySet.load(tmp_path, small_trajset.config)
        assert np.array_equal(loaded.states, small_trajset.states)
        assert np.array_equal(loaded.actions, small_trajset.actions)
        assert np.array_equal(loaded.rewards, small_trajset.rewards)
        assert np.array_equal(loaded.action_probs, small_trajset.action_probs)
        assert np.array_equal(loaded.beta_hats, small_trajset.beta_hats)
        # replay through the policy map still reproduces probs exactly
        assert np.array_equal(
            replay_action_probs(loaded), small_trajset.action_probs
        )

    def test_seed_plan_validation(self):
        with pytest.raises(ConfigError):
            SeedPlan(-1, 0)
        with pytest.raises(ConfigError):
            SeedPlan(1, -3)
