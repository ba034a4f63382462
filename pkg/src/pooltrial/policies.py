"""Parameterized stochastic policy classes.

Three kinds are supported:

* ``boltzmann`` -- clipped-softmax exploration,
  pi(1, s; beta) = Clip[expit(rho * beta1' s)] with Clip into
  [pi_min, 1 - pi_min].  Depends on beta1 only.
* ``mirror_descent`` -- one online mirror-descent step,
  pi_t(1, s) = Clip[pi_{t-1}(1, s) + 0.5 * eta_t * beta1' s]; the previous
  policy's probability at the *same* state is threaded in as ``prev_prob1``.
* ``constant_uniform`` -- probability exactly 0.5 regardless of parameters;
  serves as the exact policy-invariance control (all parameter gradients are
  identically zero).

All evaluation functions broadcast over a leading batch axis of states.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import ConfigError

POLICY_KINDS = ("boltzmann", "mirror_descent", "constant_uniform")


@dataclass(frozen=True)
class PolicyParams:
    """Stacked policy parameter [beta0, beta1], each of length d_S."""

    beta0: np.ndarray
    beta1: np.ndarray

    def __post_init__(self):
        b0 = np.atleast_1d(np.asarray(self.beta0, dtype=float))
        b1 = np.atleast_1d(np.asarray(self.beta1, dtype=float))
        if b0.shape != b1.shape or b0.ndim != 1:
            raise ConfigError("beta0/beta1 must be equal-length vectors")
        if not (np.isfinite(b0).all() and np.isfinite(b1).all()):
            raise ConfigError("policy parameters must be finite")
        object.__setattr__(self, "beta0", b0)
        object.__setattr__(self, "beta1", b1)

    @classmethod
    def from_stacked(cls, vec) -> "PolicyParams":
        vec = np.asarray(vec, dtype=float)
        d = vec.shape[-1] // 2
        return cls(beta0=vec[:d], beta1=vec[d:])

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.beta0, self.beta1])


@dataclass(frozen=True)
class PolicySpec:
    """Policy class identifier plus hyperparameters."""

    kind: str = "boltzmann"
    rho: float = 1.0
    pi_min: float = 0.1
    eta: Union[float, Sequence[float], None] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if not 0.0 < self.pi_min < 0.5:
            raise ConfigError(f"pi_min must be in (0, 0.5), got {self.pi_min}")
        if self.kind == "boltzmann" and self.rho < 0:
            raise ConfigError(f"rho must be >= 0, got {self.rho}")
        if self.kind == "mirror_descent":
            if self.eta is None:
                raise ConfigError("mirror_descent requires eta")
            eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
            if (eta <= 0).any():
                raise ConfigError("eta entries must be > 0")
            object.__setattr__(self, "eta", tuple(float(e) for e in eta))
        elif self.eta is not None:
            raise ConfigError(f"eta is a mirror_descent parameter, not {self.kind}")

    def eta_at(self, t: Optional[int]) -> float:
        """Learning rate for decision time t (t >= 2); scalar eta applies to all t."""
        eta = self.eta
        if eta is None:
            raise ConfigError("eta requested for a policy without one")
        if len(eta) == 1:
            return eta[0]
        if t is None:
            raise ConfigError("per-time eta sequence requires a decision time t")
        if not 2 <= t <= len(eta) + 1:
            raise ConfigError(f"no eta configured for decision time {t}")
        return eta[t - 2]


def clip_prob(x, pi_min: float):
    """Clip(x) = min(max(x, pi_min), 1 - pi_min)."""
    return np.clip(x, pi_min, 1.0 - pi_min)


def prob_action1(
    spec: PolicySpec,
    params: PolicyParams,
    state,
    prev_prob1=None,
    t: Optional[int] = None,
):
    """Probability of action 1 in the given state(s).

    ``state`` has shape (d_S,) or (m, d_S); the result matches the batch
    shape.  ``prev_prob1`` is required for mirror_descent (the previous
    policy's probability of action 1 at the same state) and ignored
    otherwise.  Always lies in [pi_min, 1 - pi_min].
    """
    state = np.asarray(state, dtype=float)
    batch_shape = state.shape[:-1]
    if spec.kind == "constant_uniform":
        return np.full(batch_shape, 0.5) if batch_shape else 0.5
    if spec.kind == "boltzmann":
        lin = state @ params.beta1
        return clip_prob(expit(spec.rho * lin), spec.pi_min)
    # mirror_descent
    if prev_prob1 is None:
        raise ConfigError("mirror_descent requires prev_prob1")
    prev = np.asarray(prev_prob1, dtype=float)
    if (prev < spec.pi_min - 1e-12).any() or (prev > 1 - spec.pi_min + 1e-12).any():
        raise ConfigError("prev_prob1 outside [pi_min, 1 - pi_min]")
    step = 0.5 * spec.eta_at(t) * (state @ params.beta1)
    return clip_prob(prev + step, spec.pi_min)


def _unclipped_value(spec, params, state, prev_prob1, t):
    """Pre-clip probability of action 1 (drives the saturation rule)."""
    if spec.kind == "boltzmann":
        return expit(spec.rho * (state @ params.beta1))
    if spec.kind == "mirror_descent":
        prev = np.asarray(prev_prob1, dtype=float)
        return prev + 0.5 * spec.eta_at(t) * (state @ params.beta1)
    raise ConfigError(f"no unclipped value for kind {spec.kind!r}")


def prob_grad(
    spec: PolicySpec,
    params: PolicyParams,
    state,
    action,
    prev_prob1=None,
    t: Optional[int] = None,
):
    """Gradient of pi(action, state; beta) w.r.t. the stacked [beta0, beta1].

    The beta0 block is always zero.  In the clip-saturated region (the
    unclipped value lies outside the open interval (pi_min, 1 - pi_min)) the
    whole gradient is defined as the zero vector, as it is for
    constant_uniform.  Shape: state batch shape + (2 * d_S,).
    """
    state = np.asarray(state, dtype=float)
    action = np.asarray(action)
    d_S = state.shape[-1]
    out = np.zeros(state.shape[:-1] + (2 * d_S,))
    if spec.kind == "constant_uniform":
        return out
    if spec.kind == "boltzmann":
        p = expit(spec.rho * (state @ params.beta1))
        slope = spec.rho * p * (1.0 - p)
    else:
        if prev_prob1 is None:
            raise ConfigError("mirror_descent requires prev_prob1")
        p = _unclipped_value(spec, params, state, prev_prob1, t)
        slope = np.broadcast_to(0.5 * spec.eta_at(t), np.shape(p))
    live = np.asarray((p > spec.pi_min) & (p < 1.0 - spec.pi_min))
    sign = np.where(action == 1, 1.0, -1.0)
    out[..., d_S:] = np.where(live[..., None], (sign * slope)[..., None] * state, 0.0)
    return out


def sample_action(stream: np.random.Generator, prob1) -> np.ndarray:
    """Bernoulli(prob1) draw(s) from the given stream, as int8 {0,1}."""
    prob1 = np.asarray(prob1, dtype=float)
    u = stream.random(prob1.shape) if prob1.shape else stream.random()
    return (u < prob1).astype(np.int8)


def lipschitz_bound(spec: PolicySpec, state, t: Optional[int] = None):
    """Per-state Lipschitz constant of beta |-> pi(a, s; beta).

    0.25 * rho * ||s||_2 for boltzmann, 0.5 * eta_t * ||s||_2 for
    mirror descent, 0 for constant_uniform.
    """
    state = np.asarray(state, dtype=float)
    norm = np.linalg.norm(state, axis=-1)
    if spec.kind == "boltzmann":
        return 0.25 * spec.rho * norm
    if spec.kind == "mirror_descent":
        return 0.5 * spec.eta_at(t) * norm
    return np.zeros_like(norm)


def mirror_prob_chain(spec: PolicySpec, beta_hats, state, upto_t: int):
    """pi_t(1, state) for the mirror-descent recursion, evaluated at upto_t.

    Starts at the pre-specified pi_1 = 0.5 and applies one clipped step per
    decision time 2..upto_t with the stored beta_hats (beta_hats[k] is the
    fit used at decision time k+2... i.e. index t-2 for decision time t).
    """
    state = np.asarray(state, dtype=float)
    p = np.full(state.shape[:-1], 0.5) if state.ndim > 1 else 0.5
    for u in range(2, upto_t + 1):
        params = PolicyParams.from_stacked(np.asarray(beta_hats[u - 2]))
        p = prob_action1(spec, params, state, prev_prob1=p, t=u)
    return p


def realized_from_p1(p1, action, pi_min: float):
    """p1 if action is 1 else 1 - p1, snapped back into [pi_min, 1 - pi_min].

    The snap only corrects the one-ulp drift of 1 - p1 at a clip boundary
    (e.g. 1 - 0.9 in binary), keeping every stored probability inside the
    exploration interval exactly.
    """
    out = np.where(np.asarray(action) == 1, p1, 1.0 - np.asarray(p1))
    return np.clip(out, pi_min, 1.0 - pi_min)


def prob_realized(
    spec: PolicySpec,
    params: PolicyParams,
    state,
    action,
    prev_prob1=None,
    t: Optional[int] = None,
):
    """Probability assigned to the realised action: p1 if action is 1 else 1 - p1."""
    p1 = prob_action1(spec, params, state, prev_prob1=prev_prob1, t=t)
    return realized_from_p1(p1, action, spec.pi_min)
