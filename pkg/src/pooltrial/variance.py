"""Standard and adaptive sandwich variance estimators.

The adaptive estimator treats the per-time policy fits as plug-in nuisance
Z-estimators and works with the stacked system

    bread = [[Phi_dot_{1:T-1}, 0     ]      meat = (1/n) sum_i u_i u_i'
             [V_hat,           Psi_dot]],

where u_i stacks [phi_1.. phi_{T-1}, psi] for user i, Phi_dot is block lower
triangular (diagonal blocks are the policy Jacobians, sub-diagonal blocks are
outer products of phi values with action-probability ratio gradients), and
V_hat collects the same ratio gradients against psi.  The adaptive covariance
is the lower-right d_theta block of bread^{-1} meat bread^{-T}; with
parameter-free policies every ratio gradient vanishes and it collapses to the
standard sandwich.

All covariances are scaled as the variance of sqrt(n) (theta_hat - theta*),
so standard errors are sqrt(diag / n).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .core import TrajectorySet
from .errors import (
    DataIntegrityError,
    SingularBreadError,
    SingularPolicyBreadError,
)
from .estimators import COND_LIMIT, EstimationResult, condition_number
from .policies import PolicyParams, mirror_prob_chain, prob_grad, prob_realized
from .simulator import replay_action_probs


# ---------------------------------------------------------------------------
# Radon-Nikodym weight machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightEval:
    """Per-user weight ratios at the fitted parameters and their gradients.

    ``ratios_at_hat[i, s]`` is W_{s+1}(beta_hat_s, beta_hat_s) -- identically
    one when the stored action_probs replay exactly.  ``grad_blocks[i, s]``
    is the gradient of W_{2:T}(beta, beta_hat) w.r.t. the beta_s block at
    beta = beta_hat, i.e. prob_grad(A_{s+1}, S_{s+1}; beta_hat_s) divided by
    the realised sampling probability at time s+1.
    """

    ratios_at_hat: np.ndarray  # (n, T-1)
    grad_blocks: np.ndarray    # (n, T-1, d_t)
    stacked_grads: np.ndarray  # (n, (T-1) * d_t), block-concatenated


def _check_probs(trajset: TrajectorySet) -> None:
    pmin = trajset.config.policy.pi_min
    probs = trajset.action_probs
    if probs.min() < pmin - 1e-12 or probs.max() > 1.0 - pmin + 1e-12:
        raise DataIntegrityError(
            f"stored action_probs escape [{pmin}, {1 - pmin}]"
        )


def weight_products(trajset: TrajectorySet) -> WeightEval:
    """Evaluate the weight ratios at beta_hat and their parameter gradients."""
    _check_probs(trajset)
    policy = trajset.config.policy
    n, T = trajset.n_users, trajset.horizon_T
    d_t = trajset.config.policy_dim
    replayed = replay_action_probs(trajset)
    ratios = replayed[:, 1:] / trajset.action_probs[:, 1:]

    grads = np.zeros((n, T - 1, d_t))
    for s in range(1, T):  # beta_s realised at decision time s + 1
        u = s + 1
        s_u = trajset.states[:, u - 1]
        a_u = trajset.actions[:, u - 1]
        params = PolicyParams.from_stacked(trajset.beta_hats[s - 1])
        prev = None
        if policy.kind == "mirror_descent":
            prev = mirror_prob_chain(policy, trajset.beta_hats, s_u, u - 1)
        g = prob_grad(policy, params, s_u, a_u, prev_prob1=prev, t=u)
        grads[:, s - 1] = g / trajset.action_probs[:, u - 1][:, None]
    return WeightEval(
        ratios_at_hat=ratios,
        grad_blocks=grads,
        stacked_grads=grads.reshape(n, (T - 1) * d_t),
    )


def weight_product_at(trajset: TrajectorySet, betas) -> np.ndarray:
    """Per-user product W_{2:T}(beta_{1:T-1}, beta_hat_{1:T-1}).

    ``betas`` is a (T-1, d_t) array (or sequence) of alternative policy
    parameters; the denominator is the stored sampling probability of the
    realised action.
    """
    _check_probs(trajset)
    policy = trajset.config.policy
    n, T = trajset.n_users, trajset.horizon_T
    out = np.ones(n)
    for t in range(2, T + 1):
        s_t = trajset.states[:, t - 1]
        a_t = trajset.actions[:, t - 1]
        params = PolicyParams.from_stacked(np.asarray(betas[t - 2], dtype=float))
        prev = None
        if policy.kind == "mirror_descent":
            # the recursion is anchored at the realised previous policy
            prev = mirror_prob_chain(policy, trajset.beta_hats, s_t, t - 1)
        num = prob_realized(policy, params, s_t, a_t, prev_prob1=prev, t=t)
        out *= num / trajset.action_probs[:, t - 1]
    return out


# ---------------------------------------------------------------------------
# Blockwise linear algebra
# ---------------------------------------------------------------------------

def _check_block(block: np.ndarray, index: int):
    cond = condition_number(block)
    if cond > COND_LIMIT:
        raise SingularPolicyBreadError(
            f"singular diagonal block {index} (cond={cond:.3e})",
            t=index,
            cond=cond,
        )
    return cond


def block_lower_triangular_inverse(mat: np.ndarray, block_sizes) -> np.ndarray:
    """Invert a block lower-triangular matrix by the bordered recursion.

    Repeatedly applies [[A, 0], [C, D]]^{-1} = [[A^{-1}, 0],
    [-D^{-1} C A^{-1}, D^{-1}]] down the block diagonal, which is forward
    substitution at block granularity: O(K^3 d^3) for K blocks of size d
    instead of a general dense inverse of the full matrix.
    """
    sizes = list(block_sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    dim = offsets[-1]
    if mat.shape != (dim, dim):
        raise ValueError(f"matrix shape {mat.shape} does not match blocks {sizes}")
    inv = np.zeros_like(mat, dtype=float)
    for r, (lo, hi) in enumerate(zip(offsets[:-1], offsets[1:])):
        block = mat[lo:hi, lo:hi]
        _check_block(block, r)
        diag_inv = np.linalg.inv(block)
        inv[lo:hi, lo:hi] = diag_inv
        if lo > 0:
            # inv[k, c] vanishes for k < c, so one slice product collects
            # sum_k C[r, k] inv[k, c] for every c < r at once
            inv[lo:hi, :lo] = -diag_inv @ (mat[lo:hi, :lo] @ inv[:lo, :lo])
    return inv


def confidence_interval(center: float, se: float, alpha: float):
    """Normal-quantile interval center +/- z_{1 - alpha/2} * se."""
    if se < 0:
        raise ValueError(f"se must be >= 0, got {se}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    z = norm.ppf(1.0 - alpha / 2.0)
    return float(center - z * se), float(center + z * se)


# ---------------------------------------------------------------------------
# Sandwich estimators
# ---------------------------------------------------------------------------

def sandwich_covariance(psi_mat: np.ndarray, psi_dot: np.ndarray) -> np.ndarray:
    """bread^{-1} meat bread^{-T} with meat = (1/n) sum psi psi'.

    Generic kernel: works for any per-user score matrix (n, d) and d x d
    bread, including the scalar-mean case d = 1.
    """
    psi_mat = np.atleast_2d(np.asarray(psi_mat, dtype=float))
    psi_dot = np.atleast_2d(np.asarray(psi_dot, dtype=float))
    cond = condition_number(psi_dot)
    if cond > COND_LIMIT:
        raise SingularBreadError(f"singular bread (cond={cond:.3e})", cond=cond)
    n = psi_mat.shape[0]
    meat = psi_mat.T @ psi_mat / n
    half = np.linalg.solve(psi_dot, meat)
    cov = np.linalg.solve(psi_dot, half.T).T
    return 0.5 * (cov + cov.T)


def sandwich(trajset: TrajectorySet, est: EstimationResult) -> np.ndarray:
    """Standard sandwich covariance of sqrt(n)(theta_hat - theta*)."""
    return sandwich_covariance(est.blocks.psi_mat, est.blocks.psi_dot)


@dataclass
class StackedSystem:
    """Assembled stacked bread/score pieces for one replication."""

    sizes: list
    offsets: np.ndarray
    bread: np.ndarray        # (D, D) block lower triangular
    scores: np.ndarray       # (n, D) per-user stacked [phi_1..phi_{T-1}, psi]
    grad_stack: np.ndarray   # (n, D) weight-gradient blocks (theta block zero)
    v_blocks: np.ndarray     # (d_theta, D - d_theta) == V_hat_{T,1:T-1}

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])


def build_stacked_system(trajset: TrajectorySet, est: EstimationResult) -> StackedSystem:
    n, T = trajset.n_users, trajset.horizon_T
    d_t, d_theta = trajset.config.policy_dim, trajset.config.theta_dim
    blocks = est.blocks
    weights = weight_products(trajset)

    scores = np.concatenate(blocks.phi_mats + [blocks.psi_mat], axis=1)
    grad_stack = np.concatenate(
        [weights.stacked_grads, np.zeros((n, d_theta))], axis=1
    )
    sizes = [d_t] * (T - 1) + [d_theta]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    dim = offsets[-1]

    cross = scores.T @ grad_stack / n
    bread = np.zeros((dim, dim))
    # strict block-lower part: row block r only keeps gradient columns < r
    for r in range(len(sizes)):
        rlo, rhi = offsets[r], offsets[r + 1]
        bread[rlo:rhi, : offsets[r]] = cross[rlo:rhi, : offsets[r]]
    for t in range(T - 1):
        lo, hi = offsets[t], offsets[t + 1]
        bread[lo:hi, lo:hi] = blocks.phi_dots[t]
    bread[offsets[-2]:, offsets[-2]:] = blocks.psi_dot
    v_blocks = bread[offsets[-2]:, : offsets[-2]]
    return StackedSystem(
        sizes=sizes,
        offsets=offsets,
        bread=bread,
        scores=scores,
        grad_stack=grad_stack,
        v_blocks=v_blocks,
    )


@dataclass
class AdaptiveResult:
    cov: np.ndarray
    m_blocks: np.ndarray                  # (d_theta, sum d_t), M_1..M_{T-1}
    invariance_norms: np.ndarray          # (T-1,), ||V_hat_{T,t}||_F
    system: StackedSystem


def adaptive_sandwich(trajset: TrajectorySet, est: EstimationResult) -> AdaptiveResult:
    """Adaptive sandwich covariance via the stacked-system inverse.

    Returns the lower-right d_theta block of bread^{-1} meat bread^{-T}
    together with the M_t blocks (the lower-left blocks of the stacked
    inverse) and the per-time Frobenius norms of V_hat.
    """
    sys = build_stacked_system(trajset, est)
    d_theta = sys.sizes[-1]
    try:
        binv = block_lower_triangular_inverse(sys.bread, sys.sizes)
    except SingularPolicyBreadError as err:
        if err.t == len(sys.sizes) - 1:
            raise SingularBreadError(str(err), cond=err.cond) from err
        raise SingularPolicyBreadError(str(err), t=(err.t or 0) + 1, cond=err.cond)
    last_rows = binv[-d_theta:]
    projected = sys.scores @ last_rows.T              # (n, d_theta)
    cov = projected.T @ projected / trajset.n_users
    cov = 0.5 * (cov + cov.T)
    d_t = trajset.config.policy_dim
    norms = np.array(
        [
            np.linalg.norm(sys.v_blocks[:, t * d_t : (t + 1) * d_t])
            for t in range(trajset.horizon_T - 1)
        ]
    )
    return AdaptiveResult(
        cov=cov,
        m_blocks=last_rows[:, : sys.offsets[-2]],
        invariance_norms=norms,
        system=sys,
    )


def check_equivalence(
    trajset: TrajectorySet,
    est: EstimationResult,
    adaptive: Optional[AdaptiveResult] = None,
):
    """Gap between the stacked-block and corrected-score variance forms.

    The corrected-score form computes M = -Psi_dot^{-1} V_hat Phi_dot^{-1}
    with dense solves, builds the per-user corrected scores
    psi_i + Psi_dot sum_t M_t phi_{t,i}, and sandwiches their second moment;
    algebraically this equals the stacked lower-right block exactly, so the
    max-abs elementwise gap is pure floating-point noise.  Returns
    (gap, scale).
    """
    if adaptive is None:
        adaptive = adaptive_sandwich(trajset, est)
    sys = adaptive.system
    d_theta = sys.sizes[-1]
    beta_dim = sys.offsets[-2]
    psi_dot = sys.bread[-d_theta:, -d_theta:]
    phi_dot_full = sys.bread[:beta_dim, :beta_dim]
    v_hat = sys.v_blocks

    x = np.linalg.solve(psi_dot, v_hat)                   # Psi_dot^{-1} V
    m = -np.linalg.solve(phi_dot_full.T, x.T).T           # -Psi_dot^{-1} V Phi_dot^{-1}
    phi_stack = sys.scores[:, :beta_dim]
    psi_mat = sys.scores[:, beta_dim:]
    corrected = psi_mat + (phi_stack @ m.T) @ psi_dot.T
    meat = corrected.T @ corrected / trajset.n_users
    half = np.linalg.solve(psi_dot, meat)
    alt = np.linalg.solve(psi_dot, half.T).T
    alt = 0.5 * (alt + alt.T)
    gap = float(np.abs(adaptive.cov - alt).max())
    scale = max(float(np.abs(adaptive.cov).max()), np.finfo(float).tiny)
    return gap, scale


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

@dataclass
class VarianceReport:
    """Covariances (variance of sqrt(n)(theta_hat - theta*)), SEs, and CIs."""

    sandwich_cov: np.ndarray
    adaptive_cov: Optional[np.ndarray]
    se_sandwich: np.ndarray
    se_adaptive: Optional[np.ndarray]
    ci_sandwich: list
    ci_adaptive: Optional[list]
    policy_invariance_norms: Optional[np.ndarray]
    stacked_dim: int
    equivalence_gap: Optional[float]
    alpha: float
    theta_hat: np.ndarray = field(default=None)

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "alpha": self.alpha,
            "theta_hat": arr(self.theta_hat),
            "stacked_dim": self.stacked_dim,
            "sandwich_cov": arr(self.sandwich_cov),
            "adaptive_cov": arr(self.adaptive_cov),
            "se_sandwich": arr(self.se_sandwich),
            "se_adaptive": arr(self.se_adaptive),
            "ci_sandwich": arr(self.ci_sandwich),
            "ci_adaptive": arr(self.ci_adaptive),
            "policy_invariance_norms": arr(self.policy_invariance_norms),
            "equivalence_gap": self.equivalence_gap,
        }


def variance_report(
    trajset: TrajectorySet,
    est: EstimationResult,
    alpha: float = 0.05,
    which: str = "both",
) -> VarianceReport:
    """Compute the requested variance estimators and per-coordinate CIs."""
    if which not in ("sandwich", "adaptive", "both"):
        raise ValueError(f"unknown variance selection {which!r}")
    n = trajset.n_users
    d_theta = trajset.config.theta_dim
    stacked_dim = (trajset.horizon_T - 1) * trajset.config.policy_dim + d_theta

    sand_cov = sandwich(trajset, est)
    se_s = np.sqrt(np.diag(sand_cov) / n)
    ci_s = [
        confidence_interval(est.theta_hat[j], se_s[j], alpha)
        for j in range(d_theta)
    ]

    ad_cov = se_a = ci_a = norms = gap = None
    if which in ("adaptive", "both"):
        result = adaptive_sandwich(trajset, est)
        ad_cov = result.cov
        se_a = np.sqrt(np.diag(ad_cov) / n)
        ci_a = [
            confidence_interval(est.theta_hat[j], se_a[j], alpha)
            for j in range(d_theta)
        ]
        norms = result.invariance_norms
        gap, _ = check_equivalence(trajset, est, adaptive=result)

    return VarianceReport(
        sandwich_cov=sand_cov,
        adaptive_cov=ad_cov,
        se_sandwich=se_s,
        se_adaptive=se_a,
        ci_sandwich=ci_s,
        ci_adaptive=ci_a,
        policy_invariance_norms=norms,
        stacked_dim=stacked_dim,
        equivalence_gap=gap,
        alpha=alpha,
        theta_hat=est.theta_hat,
    )
