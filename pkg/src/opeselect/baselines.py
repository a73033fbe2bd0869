"""Baseline confidence bounds: lambda-corrected IS and DR, and Chebyshev-WIS.

The lambda correction adds a constant to the behavior probability in the
weight denominator, W^lam_i = pi(A_i|X_i) / (pi_b(A_i|X_i) + lam), which caps
the weights at 1/lam; lam defaults to 1/sqrt(n).  The lambda bounds follow
from the empirical Bernstein inequality and hold with probability
1 - 3 e^(-x) each, as does the Chebyshev bound for the self-normalized
estimator.  All three emit the same :class:`~opeselect.eslb.BoundReport`
decomposition as the Efron-Stein bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LoggedDataset, PolicyTable, hoeffding_context_term, wis_estimate
from .eslb import BoundReport

RIDGE_ALPHA_GRID = (0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0)


def default_lambda(n: int) -> float:
    """The asymptotically unbiased choice lam = 1/sqrt(n)."""
    if n < 1:
        raise ValueError("n must be positive")
    return 1.0 / math.sqrt(n)


@dataclass(frozen=True)
class LambdaWeights:
    """Lambda-corrected importance weights, pointwise <= min(W_i, 1/lam)."""

    lam: float
    weights: np.ndarray


def lambda_weights(
    target: PolicyTable, behavior: PolicyTable, actions: np.ndarray, lam: float
) -> LambdaWeights:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if target.probs.shape != behavior.probs.shape:
        raise ValueError("policy tables must share their shape")
    actions = np.asarray(actions, dtype=np.int64)
    w = target.at_actions(actions) / (behavior.at_actions(actions) + lam)
    return LambdaWeights(lam=lam, weights=w)


def bernstein_sample_variance(values: np.ndarray) -> float:
    """Pairwise sample variance (1/(n(n-1))) sum_{i<j} (Z_i - Z_j)^2.

    Computed in O(n) through the unbiased-variance identity.
    """
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("need at least two values")
    return float(np.var(values, ddof=1))


# ---------------------------------------------------------------------------
# Reward model for the doubly robust estimators


@dataclass(frozen=True)
class RewardModel:
    """Per-action ridge regressors eta(x, a) with predictions clipped to [0, 1].

    ``coefs[a-1]`` holds the (d+1)-vector for action a, intercept last.  The
    intercept is not penalized, so a constant target is fitted exactly at any
    ridge strength.  Actions that never occur in the training log get the
    constant-0 model.
    """

    coefs: np.ndarray
    alphas: np.ndarray

    def predict_all(self, contexts: np.ndarray) -> np.ndarray:
        """eta(x, a) for every action: an (n, K) matrix."""
        contexts = np.asarray(contexts, dtype=float)
        ones = np.ones((contexts.shape[0], 1))
        design = np.hstack([contexts, ones])
        return np.clip(design @ self.coefs.T, 0.0, 1.0)

    def predict(self, contexts: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """eta(x_i, A_i) at the logged 1-based actions."""
        preds = self.predict_all(contexts)
        return preds[np.arange(preds.shape[0]), np.asarray(actions, dtype=np.int64) - 1]


def _ridge_solve(design: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    p = design.shape[1]
    penalty = alpha * np.eye(p)
    penalty[-1, -1] = 0.0  # free intercept
    gram = design.T @ design + penalty
    try:
        return np.linalg.solve(gram, design.T @ y)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(gram, design.T @ y, rcond=None)[0]


def fit_reward_model(train: LoggedDataset, folds: int = 10, seed: int = 0) -> RewardModel:
    """Per-action ridge fit with the strength chosen by cross-validated MSE.

    Uses ``folds``-fold cross-validation on the per-action training subsets,
    switching to leave-one-out when the sample size is at most 100.  Actions
    with fewer than two training rows skip the CV and fall back to the
    largest strength in the grid.
    """
    if folds < 2:
        raise ValueError("folds must be at least 2")
    effective_folds = train.n if train.n <= 100 else folds
    k = train.num_actions
    d = train.d
    coefs = np.zeros((k, d + 1))
    alphas = np.full(k, RIDGE_ALPHA_GRID[-1])
    for a in range(1, k + 1):
        mask = train.actions == a
        n_a = int(mask.sum())
        if n_a == 0:
            alphas[a - 1] = math.nan  # constant-0 model; no fit happened
            continue
        x = train.contexts[mask]
        y = train.rewards[mask]
        design = np.hstack([x, np.ones((n_a, 1))])
        if n_a < 2:
            coefs[a - 1] = _ridge_solve(design, y, RIDGE_ALPHA_GRID[-1])
            continue
        f_a = min(effective_folds, n_a)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(a,)))
        fold_ids = np.array_split(rng.permutation(n_a), f_a)
        best_alpha, best_mse = None, math.inf
        for alpha in RIDGE_ALPHA_GRID:
            sq_err = 0.0
            for held in fold_ids:
                rest = np.setdiff1d(np.arange(n_a), held, assume_unique=True)
                coef = _ridge_solve(design[rest], y[rest], alpha)
                pred = np.clip(design[held] @ coef, 0.0, 1.0)
                sq_err += float(np.sum((pred - y[held]) ** 2))
            mse = sq_err / n_a
            if mse < best_mse - 1e-15:
                best_alpha, best_mse = alpha, mse
        alphas[a - 1] = best_alpha
        coefs[a - 1] = _ridge_solve(design, y, best_alpha)
    return RewardModel(coefs=coefs, alphas=alphas)


def dr_point_estimate(data: LoggedDataset, target: PolicyTable, eta: RewardModel) -> float:
    """Unclipped doubly robust estimate with plain importance weights.

    V_eta(pi) + (1/n) sum_i W_i (R_i - eta(X_i, A_i)) where V_eta is the
    model-based value (1/n) sum_i sum_a pi(a|X_i) eta(X_i, a).
    """
    preds = eta.predict_all(data.contexts)
    model_value = float(np.mean(np.sum(target.probs * preds, axis=1)))
    w = target.at_actions(data.actions) / data.behavior_table.at_actions(data.actions)
    residual = data.rewards - preds[np.arange(data.n), data.actions - 1]
    return model_value + float(np.mean(w * residual))


# ---------------------------------------------------------------------------
# Lambda-corrected bounds


def lambda_is_bound(
    data: LoggedDataset,
    target: PolicyTable,
    lam: float | None,
    x: float,
    delta: float | None = None,
) -> BoundReport:
    """Empirical-Bernstein lower bound for the lambda-corrected IS estimate.

    lower = point - [sqrt(2x Var / n) + 7x/(3 lam (n-1))] - bias - sqrt(x/2n)
    with per-sample statistics Z_i = W^lam_i R_i and the smoothing bias
    (1/n) sum_k sum_a pi(a|X_k) * lam / (pi_b(a|X_k) + lam).  The result may
    be negative; it is reported as-is and flagged vacuous when <= 0.
    """
    if data.n < 2:
        raise ValueError("need at least two samples")
    if x <= 0:
        raise ValueError("x must be positive")
    if lam is None:
        lam = default_lambda(data.n)
    lw = lambda_weights(target, data.behavior_table, data.actions, lam)
    z = lw.weights * data.rewards
    point = float(np.mean(z))
    variance = bernstein_sample_variance(z)
    concentration = math.sqrt(2.0 * x * variance / data.n) + 7.0 * x / (3.0 * lam * (data.n - 1))
    smoothing = lam / (data.behavior_table.probs + lam)
    bias = float(np.mean(np.sum(target.probs * smoothing, axis=1)))
    context = hoeffding_context_term(data.n, x)
    lower = point - concentration - bias - context
    if delta is None:
        delta = min(1.0, 3.0 * math.exp(-x))
    return BoundReport(
        method="lambda-is",
        point_estimate=point,
        concentration=concentration,
        bias=bias,
        context_term=context,
        lower_bound=lower,
        delta=delta,
        x=x,
        iterations=None,
        diagnostics={"bias_kind": "additive", "lambda": lam, "vacuous": lower <= 0.0},
    )


def lambda_dr_bound(
    data: LoggedDataset,
    target: PolicyTable,
    eta: RewardModel,
    lam: float | None,
    x: float,
    delta: float | None = None,
) -> BoundReport:
    """Empirical-Bernstein lower bound for the lambda-corrected DR estimate.

    Per-sample statistic Z_i = W^lam_i (R_i - eta(X_i, A_i))
    + sum_a pi(a|X_i) eta(X_i, a); the deterministic term uses the range
    constant 1 + 1/lam, and the bias adds the model-weighted smoothing part
    (1/n) sum_k sum_a pi(a|X_k) (lam/(pi_b+lam)) (1 + eta(X_k, a)).
    With eta identically 0 the report reduces exactly to the lambda-IS one.
    """
    if data.n < 2:
        raise ValueError("need at least two samples")
    if x <= 0:
        raise ValueError("x must be positive")
    if lam is None:
        lam = default_lambda(data.n)
    lw = lambda_weights(target, data.behavior_table, data.actions, lam)
    preds = eta.predict_all(data.contexts)
    logged_eta = preds[np.arange(data.n), data.actions - 1]
    model_value = np.sum(target.probs * preds, axis=1)
    z = lw.weights * (data.rewards - logged_eta) + model_value
    point = float(np.mean(z))
    variance = bernstein_sample_variance(z)
    concentration = math.sqrt(2.0 * x * variance / data.n) + (7.0 / 3.0) * (1.0 + 1.0 / lam) * x / (data.n - 1)
    smoothing = lam / (data.behavior_table.probs + lam)
    bias = float(np.mean(np.sum(target.probs * smoothing * (1.0 + preds), axis=1)))
    context = hoeffding_context_term(data.n, x)
    lower = point - concentration - bias - context
    if delta is None:
        delta = min(1.0, 3.0 * math.exp(-x))
    return BoundReport(
        method="lambda-dr",
        point_estimate=point,
        concentration=concentration,
        bias=bias,
        context_term=context,
        lower_bound=lower,
        delta=delta,
        x=x,
        iterations=None,
        diagnostics={"bias_kind": "additive", "lambda": lam, "vacuous": lower <= 0.0},
    )


# ---------------------------------------------------------------------------
# Chebyshev bound for the self-normalized estimator


def weight_second_moment(target: PolicyTable, behavior: PolicyTable) -> float:
    """Exact sum_k E[W_k^2 | X_k] = sum_k sum_a pi(a|X_k)^2 / pi_b(a|X_k)."""
    if target.probs.shape != behavior.probs.shape:
        raise ValueError("policy tables must share their shape")
    if np.any(behavior.probs <= 0):
        raise ValueError("behavior rows must be strictly positive")
    return float(np.sum(target.probs * target.probs / behavior.probs))


def chebyshev_wis_bound(
    data: LoggedDataset,
    target: PolicyTable,
    x: float,
    delta: float | None = None,
) -> BoundReport:
    """Chebyshev-type lower bound for the self-normalized estimate.

    lower = (N_x / n) (v_sn - sqrt(S2 e^x / N_x^2)) - sqrt(x/2n) with
    S2 = sum_k E[W_k^2 | X_k] and N_x = n - sqrt(2 x S2), a high-probability
    lower bound on the weight sum.  N_x <= 0 makes the bound vacuous:
    lower_bound is the -inf sentinel while the decomposition is still
    emitted.
    """
    if x <= 0:
        raise ValueError("x must be positive")
    n = data.n
    from .core import importance_weights  # local import avoids a cycle at module load

    w = importance_weights(target, data.behavior_table, data.actions)
    point = wis_estimate(w, data.rewards)
    s2 = weight_second_moment(target, data.behavior_table)
    n_x = n - math.sqrt(2.0 * x * s2)
    context = hoeffding_context_term(n, x)
    if n_x > 0:
        concentration = math.sqrt(s2 * math.exp(x)) / n_x
        lower = (n_x / n) * (point - concentration) - context
        vacuous = lower <= 0.0
    else:
        concentration = math.inf
        lower = -math.inf
        vacuous = True
    if delta is None:
        delta = min(1.0, 3.0 * math.exp(-x))
    return BoundReport(
        method="cheb-wis",
        point_estimate=point,
        concentration=concentration,
        bias=n_x / n,
        context_term=context,
        lower_bound=lower,
        delta=delta,
        x=x,
        iterations=None,
        diagnostics={"bias_kind": "multiplicative", "n_x": n_x, "vacuous": vacuous},
    )
