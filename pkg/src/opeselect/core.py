"""Core data types, importance weights and point estimators.

Conventions used throughout the package:

* actions are 1-based in every public interface (internally columns are
  0-based);
* probability tables are ``(n, K)`` arrays whose row ``i`` is the action
  distribution of a policy at context ``i``;
* rewards are one-hot: exactly one action per context pays 1, all others 0.

All types are immutable after construction (backing arrays are frozen), so
they can be shared freely across threads/processes; the operations below are
pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Row sums must match 1 to this accuracy after ingestion.
ROW_SUM_ATOL = 1e-9
# Rows off by more than this are rejected instead of renormalized.
ROW_SUM_RENORM_ATOL = 1e-6


class SupportViolationError(ValueError):
    """The behavior policy puts zero probability on a logged action."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PolicyTable:
    """Conditional action probabilities of one policy at ``n`` contexts.

    ``probs[i, a-1]`` is the probability the policy assigns to action ``a``
    at context ``i``.  Rows whose sums are within 1e-6 of 1 are renormalized
    exactly on ingestion; anything further off is rejected.  Entries must be
    non-negative and finite.
    """

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] < 1 or probs.shape[1] < 1:
            raise ValueError(f"policy table must be a non-empty 2-d array, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise ValueError("policy table contains non-finite entries")
        if np.any(probs < 0):
            raise ValueError("policy table contains negative entries")
        sums = probs.sum(axis=1)
        off = np.abs(sums - 1.0)
        if np.any(off > ROW_SUM_RENORM_ATOL):
            i = int(np.argmax(off))
            raise ValueError(f"policy table row {i} sums to {sums[i]:.9f}, further than {ROW_SUM_RENORM_ATOL} from 1")
        if np.any(off > ROW_SUM_ATOL):
            probs = probs / sums[:, None]
        object.__setattr__(self, "probs", _freeze(probs))

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    def at_actions(self, actions: np.ndarray) -> np.ndarray:
        """Probabilities of the given 1-based actions, one per row."""
        actions = np.asarray(actions)
        return self.probs[np.arange(self.n), actions - 1]


@dataclass(frozen=True)
class LoggedDataset:
    """A logged contextual-bandit sample.

    ``contexts`` is ``(n, d)``, ``actions`` holds the logged 1-based actions,
    ``rewards`` the observed one-hot rewards in {0, 1}, and ``behavior_table``
    the behavior policy's full probability rows at the logged contexts.  The
    behavior policy must have full support (strictly positive rows).
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    behavior_table: PolicyTable

    def __post_init__(self) -> None:
        contexts = np.asarray(self.contexts, dtype=float)
        actions = np.asarray(self.actions, dtype=np.int64)
        rewards = np.asarray(self.rewards, dtype=float)
        if contexts.ndim != 2:
            raise ValueError("contexts must be a 2-d array")
        n = contexts.shape[0]
        if n < 1:
            raise ValueError("dataset is empty")
        if actions.shape != (n,) or rewards.shape != (n,):
            raise ValueError("contexts, actions and rewards must have matching lengths")
        if self.behavior_table.n != n:
            raise ValueError("behavior table row count does not match the sample size")
        k = self.behavior_table.num_actions
        if np.any(actions < 1) or np.any(actions > k):
            raise ValueError(f"actions must lie in 1..{k}")
        if not np.all((rewards == 0.0) | (rewards == 1.0)):
            raise ValueError("rewards must be binary (one-hot reward regime)")
        if np.any(self.behavior_table.probs <= 0):
            raise SupportViolationError("behavior policy must have full support (strictly positive rows)")
        object.__setattr__(self, "contexts", _freeze(contexts))
        object.__setattr__(self, "actions", _freeze(actions))
        object.__setattr__(self, "rewards", _freeze(rewards))

    @property
    def n(self) -> int:
        return self.contexts.shape[0]

    @property
    def d(self) -> int:
        return self.contexts.shape[1]

    @property
    def num_actions(self) -> int:
        return self.behavior_table.num_actions


@dataclass(frozen=True)
class ConfidenceSpec:
    """Error-probability bookkeeping shared by all bounds.

    The ESLB holds with probability 1 - 2e^(-x), so its exponent is
    x = ln(2/delta); the three-event baselines hold with probability
    1 - 3e^(-x), so theirs is x = ln(3/delta).  With ``n_policies`` > 1
    candidates the union-bound correction ln(n_policies) is added (the same
    thing as replacing delta by delta/N).  The ESLB theorem additionally
    requires x >= 2, i.e. delta <= 2e^-2; callers can check
    ``eslb_theorem_valid``.
    """

    delta: float
    n_policies: int = 1

    def __post_init__(self) -> None:
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.n_policies < 1:
            raise ValueError("n_policies must be at least 1")

    @property
    def x_eslb(self) -> float:
        return math.log(2.0 / self.delta) + math.log(self.n_policies)

    @property
    def x_baseline(self) -> float:
        return math.log(3.0 / self.delta) + math.log(self.n_policies)

    @property
    def eslb_theorem_valid(self) -> bool:
        return self.x_eslb >= 2.0


def importance_weights(target: PolicyTable, behavior: PolicyTable, actions: np.ndarray) -> np.ndarray:
    """Likelihood ratios W_i = pi(A_i|X_i) / pi_b(A_i|X_i) at the logged actions.

    Raises ``SupportViolationError`` if the behavior policy puts zero mass on
    any logged action.  The result is a non-negative finite vector.
    """
    if target.probs.shape != behavior.probs.shape:
        raise ValueError(
            f"policy tables must share their shape, got {target.probs.shape} vs {behavior.probs.shape}"
        )
    actions = np.asarray(actions, dtype=np.int64)
    if actions.shape != (target.n,):
        raise ValueError("actions length does not match the tables")
    if np.any(actions < 1) or np.any(actions > target.num_actions):
        raise ValueError(f"actions must lie in 1..{target.num_actions}")
    b = behavior.at_actions(actions)
    if np.any(b <= 0):
        i = int(np.argmin(b))
        raise SupportViolationError(f"behavior probability is zero at logged action of row {i}")
    w = target.at_actions(actions) / b
    return _freeze(w)


def is_estimate(weights: np.ndarray, rewards: np.ndarray) -> float:
    """Importance-sampling value estimate (1/n) sum_i W_i R_i."""
    weights = np.asarray(weights, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    if weights.size == 0:
        raise ValueError("empty input")
    if weights.shape != rewards.shape:
        raise ValueError("weights and rewards must have equal lengths")
    return float(np.mean(weights * rewards))


def wis_estimate(weights: np.ndarray, rewards: np.ndarray) -> float:
    """Self-normalized estimate sum_k W_k R_k / sum_i W_i, in [0, 1].

    A zero total weight (degenerate target) returns 0, the most conservative
    value for a lower-bound pipeline.
    """
    weights = np.asarray(weights, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    if weights.size == 0:
        raise ValueError("empty input")
    if weights.shape != rewards.shape:
        raise ValueError("weights and rewards must have equal lengths")
    total = weights.sum()
    if total <= 0.0:
        return 0.0
    return float(np.dot(weights, rewards) / total)


def effective_sample_size(weights: np.ndarray) -> float:
    """n_eff = 1 / sum_i (W_i / sum_j W_j)^2, between 1 and n."""
    weights = np.asarray(weights, dtype=float)
    if weights.size == 0:
        raise ValueError("empty input")
    total = weights.sum()
    if total <= 0.0:
        raise ValueError("effective sample size is undefined for all-zero weights")
    normed = weights / total
    return float(1.0 / np.sum(normed * normed))


def hoeffding_context_term(n: int, x: float) -> float:
    """Context-concentration term sqrt(x / (2n))."""
    if n < 1:
        raise ValueError("n must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    return math.sqrt(x / (2.0 * n))
