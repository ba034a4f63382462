"""Domain types, configuration, and deterministic random-stream contracts.

Everything downstream (environment, policies, simulator, variance machinery)
builds on the types defined here.  All containers are frozen dataclasses and
their array fields are marked read-only after construction, so instances can
be shared freely across worker processes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataIntegrityError
from .policies import PolicySpec

# Substream labels recognised by derive_stream.  "errors" drives reward-noise
# generation, "actions" drives Bernoulli action sampling, "init" is reserved
# for any per-replication initialisation draws.
STREAM_LABELS = ("errors", "actions", "init")

_LABEL_CODES = {label: i for i, label in enumerate(STREAM_LABELS)}


@dataclass(frozen=True)
class SeedPlan:
    """Addresses one Monte Carlo replication's randomness.

    Streams for distinct ``(master_seed, rep_index)`` pairs are independent,
    and every draw within one replication derives deterministically from its
    plan, so replications can run in any order (or concurrently) and still
    reproduce bit-identically.
    """

    master_seed: int
    rep_index: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError(f"master_seed must be a u64, got {self.master_seed}")
        if int(self.rep_index) < 0:
            raise ConfigError(f"rep_index must be >= 0, got {self.rep_index}")


def derive_stream(plan: SeedPlan, substream_label: str) -> np.random.Generator:
    """Return the deterministic random stream for (plan, label).

    The same arguments always yield a generator producing the same draw
    sequence; distinct reps or labels yield independent streams (counter-based
    keying through ``SeedSequence`` spawn keys, no shared state).
    """
    if substream_label not in _LABEL_CODES:
        raise ConfigError(
            f"unknown substream label {substream_label!r}; "
            f"expected one of {STREAM_LABELS}"
        )
    seq = np.random.SeedSequence(
        entropy=int(plan.master_seed),
        spawn_key=(int(plan.rep_index), _LABEL_CODES[substream_label]),
    )
    return np.random.default_rng(seq)


@dataclass(frozen=True)
class EnvConfig:
    """Reward-generation parameters.

    The reward at time t is ``kappa0 + kappa1 * (dosage_t / c_gamma)
    + kappa2 * action_t + eps_t`` where dosage is the gamma-discounted count
    of past treatments and the eps rows are AR-correlated within a user with
    Corr(eps_t, eps_s) = error_corr_base ** (|t-s| / 2).
    """

    kappa0: float = 0.0
    kappa1: float = 1.0
    kappa2: float = 0.0
    gamma: float = 0.95
    error_corr_base: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must be in (0,1), got {self.gamma}")
        # 0.0 is the documented i.i.d. limit of the AR error process.
        if not 0.0 <= self.error_corr_base < 1.0:
            raise ConfigError(
                f"error_corr_base must be in [0,1), got {self.error_corr_base}"
            )


@dataclass(frozen=True)
class TrialConfig:
    """Full description of one simulated trial."""

    n_users: int
    horizon_T: int
    policy: PolicySpec
    env: EnvConfig = field(default_factory=EnvConfig)
    state_dim: int = 2
    master_seed: int = 0

    def __post_init__(self):
        if self.n_users < 2:
            raise ConfigError(f"n_users must be >= 2, got {self.n_users}")
        if self.horizon_T < 2:
            raise ConfigError(f"horizon_T must be >= 2, got {self.horizon_T}")
        if self.state_dim not in (1, 2):
            # built-in environment feeds states [1] or [1, prev_reward]
            raise ConfigError(
                f"state_dim must be 1 or 2 for the built-in environment, "
                f"got {self.state_dim}"
            )
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError(f"master_seed must be a u64, got {self.master_seed}")

    @property
    def policy_dim(self) -> int:
        """Per-time policy parameter dimension d_t = 2 * d_S."""
        return 2 * self.state_dim

    @property
    def theta_dim(self) -> int:
        """Inferential parameter dimension d_theta = d_S + 1."""
        return self.state_dim + 1

    def replace(self, **kwargs) -> "TrialConfig":
        return dataclasses.replace(self, **kwargs)


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TrajectorySet:
    """One replication's collected data plus the policy-parameter snapshots.

    ``action_probs[i, t]`` is the probability the sampling policy assigned to
    the *realised* action of user i at decision time t+1 (0-based storage for
    1-based decision times).  ``beta_hats[t-1]`` is the pooled least-squares
    fit on data through decision time t; the policy at decision time t+1 was
    evaluated with it.
    """

    states: np.ndarray        # (n, T, d_S)
    actions: np.ndarray       # (n, T) in {0, 1}
    rewards: np.ndarray       # (n, T)
    action_probs: np.ndarray  # (n, T)
    beta_hats: np.ndarray     # (T-1, 2 * d_S)
    config: TrialConfig

    def __post_init__(self):
        n, T = self.actions.shape
        if self.states.shape != (n, T, self.config.state_dim):
            raise DataIntegrityError(f"states shape {self.states.shape} invalid")
        if self.rewards.shape != (n, T) or self.action_probs.shape != (n, T):
            raise DataIntegrityError("rewards/action_probs shape mismatch")
        if self.beta_hats.shape != (T - 1, self.config.policy_dim):
            raise DataIntegrityError(
                f"beta_hats shape {self.beta_hats.shape} invalid"
            )
        pmin = self.config.policy.pi_min
        lo, hi = self.action_probs.min(), self.action_probs.max()
        if lo < pmin - 1e-12 or hi > 1.0 - pmin + 1e-12:
            raise DataIntegrityError(
                f"action_probs outside [{pmin}, {1 - pmin}]: range ({lo}, {hi})"
            )
        for name in ("states", "actions", "rewards", "action_probs", "beta_hats"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    @property
    def n_users(self) -> int:
        return self.actions.shape[0]

    @property
    def horizon_T(self) -> int:
        return self.actions.shape[1]

    def save(self, out_dir) -> None:
        """Write the columnar trajectory file plus the beta_hats sidecar.

        Floats are written with shortest round-trip repr, so a load followed
        by a policy replay is bit-identical to the original run.
        """
        import os

        os.makedirs(out_dir, exist_ok=True)
        d_S = self.config.state_dim
        state_cols = ",".join(f"state_{j}" for j in range(d_S))
        with open(os.path.join(out_dir, "trajectories.csv"), "w") as f:
            f.write(f"user,t,{state_cols},action,reward,action_prob\n")
            for i in range(self.n_users):
                for t in range(self.horizon_T):
                    svals = ",".join(repr(float(v)) for v in self.states[i, t])
                    f.write(
                        f"{i},{t + 1},{svals},{int(self.actions[i, t])},"
                        f"{repr(float(self.rewards[i, t]))},"
                        f"{repr(float(self.action_probs[i, t]))}\n"
                    )
        with open(os.path.join(out_dir, "beta_hats.csv"), "w") as f:
            coef_cols = ",".join(f"b_{j}" for j in range(self.config.policy_dim))
            f.write(f"t,{coef_cols}\n")
            for t in range(self.horizon_T - 1):
                coefs = ",".join(repr(float(v)) for v in self.beta_hats[t])
                f.write(f"{t + 1},{coefs}\n")

    @classmethod
    def load(cls, in_dir, config: TrialConfig) -> "TrajectorySet":
        import os

        d_S = config.state_dim
        rows = np.loadtxt(
            os.path.join(in_dir, "trajectories.csv"), delimiter=",", skiprows=1
        )
        users = rows[:, 0].astype(int)
        times = rows[:, 1].astype(int)
        n, T = users.max() + 1, times.max()
        order = np.lexsort((times, users))
        rows = rows[order]
        states = rows[:, 2 : 2 + d_S].reshape(n, T, d_S)
        actions = rows[:, 2 + d_S].reshape(n, T).astype(np.int8)
        rewards = rows[:, 3 + d_S].reshape(n, T)
        action_probs = rows[:, 4 + d_S].reshape(n, T)
        beta_rows = np.loadtxt(
            os.path.join(in_dir, "beta_hats.csv"), delimiter=",", skiprows=1, ndmin=2
        )
        beta_hats = beta_rows[np.argsort(beta_rows[:, 0])][:, 1:]
        return cls(
            states=states,
            actions=actions,
            rewards=rewards,
            action_probs=action_probs,
            beta_hats=beta_hats,
            config=config,
        )
