"""YAML configuration parsing with paper-matched defaults.

Schema (all sections optional, defaults shown):

    trial:
      n_users: 100
      horizon_T: 50
      state_dim: 2
      master_seed: 0
    policy:
      kind: boltzmann          # boltzmann | mirror_descent | constant_uniform
      rho: 1.0
      pi_min: 0.1
      eta: null                # scalar or per-time list, mirror_descent only
    env:
      kappa0: 0.0
      kappa1: 1.0
      kappa2: 0.0
      gamma: 0.95
      error_corr_base: 0.5
    grid:                      # only consumed by the mc subcommand
      kappa1: [1.0, 5.0]
      rho: [0.5, 1.0, 5.0]
      n_users: [50, 100, 500]

``load_config`` also resolves bundled preset names (currently
``paper_table1``) to their packaged files.
"""

from __future__ import annotations

import os
from importlib import resources

import yaml

from .core import EnvConfig, TrialConfig
from .errors import ConfigError
from .policies import PolicySpec

_TRIAL_KEYS = {"n_users", "horizon_T", "state_dim", "master_seed"}
_POLICY_KEYS = {"kind", "rho", "pi_min", "eta"}
_ENV_KEYS = {"kappa0", "kappa1", "kappa2", "gamma", "error_corr_base"}
_GRID_KEYS = {"kappa1", "rho", "n_users"}

PRESETS = ("paper_table1",)


def _check_keys(section: dict, allowed: set, name: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{name}' section: {sorted(unknown)}")


def resolve_config_path(path_or_preset: str) -> str:
    if path_or_preset in PRESETS:
        ref = resources.files("pooltrial") / "presets" / f"{path_or_preset}.yaml"
        return str(ref)
    if not os.path.exists(path_or_preset):
        raise ConfigError(f"config file not found: {path_or_preset}")
    return path_or_preset


def parse_config(raw: dict):
    """Build (TrialConfig, grid-or-None) from a parsed YAML mapping."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(raw, {"trial", "policy", "env", "grid"}, "root")
    trial = dict(raw.get("trial") or {})
    policy = dict(raw.get("policy") or {})
    env = dict(raw.get("env") or {})
    _check_keys(trial, _TRIAL_KEYS, "trial")
    _check_keys(policy, _POLICY_KEYS, "policy")
    _check_keys(env, _ENV_KEYS, "env")

    try:
        spec = PolicySpec(**policy)
        env_cfg = EnvConfig(**env)
        config = TrialConfig(
            n_users=int(trial.get("n_users", 100)),
            horizon_T=int(trial.get("horizon_T", 50)),
            state_dim=int(trial.get("state_dim", 2)),
            master_seed=int(trial.get("master_seed", 0)),
            policy=spec,
            env=env_cfg,
        )
    except TypeError as err:
        raise ConfigError(str(err)) from err

    grid = None
    if raw.get("grid") is not None:
        grid = dict(raw["grid"])
        _check_keys(grid, _GRID_KEYS, "grid")
        grid = {
            "kappa1": [float(v) for v in grid.get("kappa1", [config.env.kappa1])],
            "rho": [float(v) for v in grid.get("rho", [config.policy.rho])],
            "n_users": [int(v) for v in grid.get("n_users", [config.n_users])],
        }
    return config, grid


def load_config(path_or_preset: str):
    """Read and validate a config file; returns (TrialConfig, grid, raw dict)."""
    path = resolve_config_path(path_or_preset)
    try:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"malformed config {path}: {err}") from err
    config, grid = parse_config(raw)
    return config, grid, raw


def config_to_raw(config: TrialConfig) -> dict:
    """Round-trippable mapping mirroring the file schema."""
    return {
        "trial": {
            "n_users": config.n_users,
            "horizon_T": config.horizon_T,
            "state_dim": config.state_dim,
            "master_seed": config.master_seed,
        },
        "policy": {
            "kind": config.policy.kind,
            "rho": config.policy.rho,
            "pi_min": config.policy.pi_min,
            "eta": list(config.policy.eta) if config.policy.eta else None,
        },
        "env": {
            "kappa0": config.env.kappa0,
            "kappa1": config.env.kappa1,
            "kappa2": config.env.kappa2,
            "gamma": config.env.gamma,
            "error_corr_base": config.env.error_corr_base,
        },
    }
