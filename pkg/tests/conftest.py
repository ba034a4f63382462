import numpy as np
import pytest

from pooltrial import EnvConfig, PolicySpec, SeedPlan, TrialConfig, run_trial


@pytest.fixture(scope="session")
def small_config():
    return TrialConfig(
        n_users=60,
        horizon_T=8,
        master_seed=101,
        policy=PolicySpec(kind="boltzmann", rho=2.0, pi_min=0.1),
        env=EnvConfig(kappa1=2.0),
    )


@pytest.fixture(scope="session")
def small_trajset(small_config):
    return run_trial(small_config, SeedPlan(small_config.master_seed, 0))


@pytest.fixture(scope="session")
def uniform_trajset():
    config = TrialConfig(
        n_users=80,
        horizon_T=6,
        master_seed=55,
        policy=PolicySpec(kind="constant_uniform", pi_min=0.1),
        env=EnvConfig(kappa1=1.0),
    )
    return run_trial(config, SeedPlan(55, 0))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)
