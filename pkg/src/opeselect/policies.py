"""Behavior and target policies: Gibbs oracles and fitted linear-softmax policies.

Two policy families are supported.  A :class:`GibbsPolicy` peaks on a
ground-truth action per context (optionally shifted cyclically on a set of
"faulty" actions) with a temperature controlling how peaked the distribution
is.  A :class:`LinearSoftmaxPolicy` is parametrized by a d-by-K matrix and can
be fitted to logged data by full-batch gradient ascent on either the
importance-sampling (IS) or the self-normalized (WIS) empirical value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import LoggedDataset, PolicyTable, _freeze


class FitDivergenceError(RuntimeError):
    """Gradient ascent diverged to non-finite parameters."""


@dataclass(frozen=True)
class GibbsPolicy:
    """Softmax of a one-hot score peaked at the oracle action.

    ``oracle_labels`` holds the 1-based ground-truth action per context.  On
    contexts whose label belongs to ``faulty_set`` the peak is shifted
    cyclically to the next action, label -> (label mod K) + 1.  An empty
    faulty set gives the ideal policy.  Each row has one entry
    e^(1/tau) / (e^(1/tau) + K - 1) and K-1 entries 1 / (e^(1/tau) + K - 1).
    """

    oracle_labels: np.ndarray
    tau: float
    num_actions: int
    faulty_set: frozenset = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        labels = np.asarray(self.oracle_labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size < 1:
            raise ValueError("oracle_labels must be a non-empty 1-d integer array")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.num_actions < 2:
            raise ValueError("need at least two actions")
        if np.any(labels < 1) or np.any(labels > self.num_actions):
            raise ValueError(f"oracle labels must lie in 1..{self.num_actions}")
        faulty = frozenset(int(a) for a in self.faulty_set)
        if any(a < 1 or a > self.num_actions for a in faulty):
            raise ValueError("faulty_set must be a subset of the action set")
        object.__setattr__(self, "oracle_labels", _freeze(labels))
        object.__setattr__(self, "faulty_set", faulty)

    def peaks(self, context_indices: np.ndarray | None = None) -> np.ndarray:
        """1-based peak action per requested context (after the faulty shift)."""
        labels = self.oracle_labels
        if context_indices is not None:
            labels = labels[np.asarray(context_indices, dtype=np.int64)]
        peaks = labels.copy()
        if self.faulty_set:
            shifted = np.isin(labels, sorted(self.faulty_set))
            peaks[shifted] = (labels[shifted] % self.num_actions) + 1
        return peaks


def gibbs_probs(policy: GibbsPolicy, context_indices: np.ndarray | None = None) -> PolicyTable:
    """Probability rows of a Gibbs policy at the requested contexts."""
    peaks = policy.peaks(context_indices)
    k = policy.num_actions
    # exp(-1/tau) keeps the row finite for arbitrarily small temperatures.
    e = math.exp(-1.0 / policy.tau)
    denom = 1.0 + (k - 1) * e
    probs = np.full((peaks.size, k), e / denom)
    probs[np.arange(peaks.size), peaks - 1] = 1.0 / denom
    return PolicyTable(probs)


def gibbs_true_value(tau: float, num_actions: int, n_faulty: int) -> float:
    """Exact value of a Gibbs policy under uniformly distributed labels.

    The peak pays off on the (K - |F|)/K fraction of contexts whose label is
    not faulty; elsewhere the correct action only gets the off-peak mass.
    """
    if not 0 <= n_faulty <= num_actions:
        raise ValueError("n_faulty must lie in 0..K")
    e = math.exp(-1.0 / tau)
    denom = 1.0 + (num_actions - 1) * e
    peak, off = 1.0 / denom, e / denom
    frac = n_faulty / num_actions
    return (1.0 - frac) * peak + frac * off


@dataclass(frozen=True)
class LinearSoftmaxPolicy:
    """pi(k|x) proportional to exp(x . theta_k / tau) with theta of shape (d, K)."""

    theta: np.ndarray
    tau: float

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 2:
            raise ValueError("theta must be a (d, K) matrix")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        object.__setattr__(self, "theta", _freeze(theta))


def _stable_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def softmax_probs(policy: LinearSoftmaxPolicy, contexts: np.ndarray) -> PolicyTable:
    """Row-wise softmax of contexts . theta / tau, stabilized by max-subtraction."""
    contexts = np.asarray(contexts, dtype=float)
    if contexts.ndim != 2 or contexts.shape[1] != policy.theta.shape[0]:
        raise ValueError(
            f"contexts must be (n, {policy.theta.shape[0]}), got {contexts.shape}"
        )
    logits = contexts @ policy.theta / policy.tau
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    return PolicyTable(_stable_softmax(logits))


@dataclass(frozen=True)
class FitConfig:
    """Hyper-parameters of the full-batch gradient-ascent policy fit."""

    objective: str = "is"  # "is" or "wis"
    step_size: float = 0.01
    steps: int = 100_000
    tau: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.objective not in ("is", "wis"):
            raise ValueError("objective must be 'is' or 'wis'")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


def policy_objective_gradient(
    theta: np.ndarray,
    data: LoggedDataset,
    objective: str,
    tau: float,
) -> tuple[float, np.ndarray]:
    """Empirical IS/WIS value of the softmax policy and its exact gradient.

    For the WIS objective the gradient is the quotient-rule gradient of the
    self-normalized estimator.  A degenerate zero weight sum (possible only
    for saturated parameters) yields objective 0 with a zero gradient.
    """
    x = data.contexts
    n, k = data.n, data.num_actions
    rows = np.arange(n)
    cols = data.actions - 1
    probs = _stable_softmax(x @ np.asarray(theta, dtype=float) / tau)
    p_logged = probs[rows, cols]
    b_logged = data.behavior_table.at_actions(data.actions)
    w = p_logged / b_logged

    if objective == "is":
        value = float(np.mean(w * data.rewards))
        coef = (w * data.rewards) / (tau * n)
    else:
        total = w.sum()
        if total <= 0.0:
            return 0.0, np.zeros_like(np.asarray(theta, dtype=float))
        value = float(np.dot(w, data.rewards) / total)
        coef = w * (data.rewards - value) / (tau * total)

    # d pi(A_i|x_i)/d theta_k = pi(A_i|x_i)/tau * (1{k=A_i} - pi(k|x_i)) * x_i
    m = -coef[:, None] * probs
    np.add.at(m, (rows, cols), coef)
    grad = x.T @ m
    return value, grad


def fit_policy(data: LoggedDataset, cfg: FitConfig) -> LinearSoftmaxPolicy:
    """Fit a linear-softmax policy by full-batch gradient ascent.

    theta starts at the zero matrix (the uniform policy) and takes
    ``cfg.steps`` fixed-step updates of the chosen empirical objective.  The
    fit is deterministic given (data, cfg).  Divergence to non-finite
    parameters aborts with :class:`FitDivergenceError`.
    """
    theta = np.zeros((data.d, data.num_actions))
    for step in range(cfg.steps):
        _, grad = policy_objective_gradient(theta, data, cfg.objective, cfg.tau)
        theta += cfg.step_size * grad
        if not np.all(np.isfinite(theta)):
            raise FitDivergenceError(
                f"non-finite parameters after step {step + 1} "
                f"(objective={cfg.objective}, step_size={cfg.step_size})"
            )
    return LinearSoftmaxPolicy(theta=theta, tau=cfg.tau)


def true_value(policy, test_contexts: np.ndarray | None, oracle_labels: np.ndarray) -> float:
    """Expected one-hot reward of a policy: mean_i pi(label_i | x_i).

    ``policy`` may be a :class:`GibbsPolicy` (test contexts are then only
    identified by their labels), a :class:`LinearSoftmaxPolicy`, or a
    pre-evaluated :class:`PolicyTable` aligned with the labels.
    """
    labels = np.asarray(oracle_labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("empty test set")
    if isinstance(policy, GibbsPolicy):
        ref = GibbsPolicy(
            oracle_labels=labels,
            tau=policy.tau,
            num_actions=policy.num_actions,
            faulty_set=policy.faulty_set,
        )
        table = gibbs_probs(ref)
    elif isinstance(policy, LinearSoftmaxPolicy):
        if test_contexts is None:
            raise ValueError("softmax policies need test contexts")
        table = softmax_probs(policy, test_contexts)
    elif isinstance(policy, PolicyTable):
        table = policy
    else:
        raise TypeError(f"unsupported policy type {type(policy).__name__}")
    if table.n != labels.size:
        raise ValueError("labels length does not match the evaluated contexts")
    return float(np.mean(table.at_actions(labels)))


def policy_to_json(policy) -> str:
    """Serialize a policy to the documented JSON form."""
    if isinstance(policy, GibbsPolicy):
        doc = {
            "kind": "gibbs",
            "tau": policy.tau,
            "labels": [int(v) for v in policy.oracle_labels],
            "faulty_set": sorted(policy.faulty_set),
            "num_actions": policy.num_actions,
        }
    elif isinstance(policy, LinearSoftmaxPolicy):
        doc = {
            "kind": "softmax",
            "tau": policy.tau,
            "theta": [[float(v) for v in row] for row in policy.theta],
        }
    else:
        raise TypeError(f"unsupported policy type {type(policy).__name__}")
    return json.dumps(doc, indent=2, sort_keys=True)


def policy_from_json(text: str):
    doc = json.loads(text)
    kind = doc.get("kind")
    if kind == "gibbs":
        return GibbsPolicy(
            oracle_labels=np.asarray(doc["labels"], dtype=np.int64),
            tau=float(doc["tau"]),
            num_actions=int(doc["num_actions"]),
            faulty_set=frozenset(doc.get("faulty_set", [])),
        )
    if kind == "softmax":
        return LinearSoftmaxPolicy(theta=np.asarray(doc["theta"], dtype=float), tau=float(doc["tau"]))
    raise ValueError(f"unknown policy kind {kind!r}")
