"""Best-policy selection: score candidates, apply the union bound, pick or abstain.

Bound methods score each candidate with its high-probability lower bound at
the union-corrected exponent x(delta) + ln(N) (the same thing as replacing
delta by delta/N); raw methods score with the bare point estimate.  Selection
takes the argmax with ties broken toward the lowest index, and bound methods
abstain when even the best score is non-positive (a lower bound of zero
carries no information since values are non-negative).  Raw methods never
abstain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    LoggedDataset,
    PolicyTable,
    importance_weights,
    is_estimate,
    wis_estimate,
)
from .baselines import (
    RewardModel,
    chebyshev_wis_bound,
    dr_point_estimate,
    lambda_dr_bound,
    lambda_is_bound,
)
from .eslb import AdaptiveSchedule, BoundReport, FixedSchedule, eslb_bound, mc_estimate_proxies

BOUND_METHODS = ("eslb", "lambda-is", "lambda-dr", "cheb-wis")
RAW_METHODS = ("dr", "is", "wis")
ALL_METHODS = BOUND_METHODS + RAW_METHODS


@dataclass(frozen=True)
class CandidateScore:
    """Score of one candidate (1-based index), with the bound report if any."""

    index: int
    score: float
    report: BoundReport | None = None


@dataclass(frozen=True)
class SelectionReport:
    """Outcome of scoring a candidate set with one method."""

    method: str
    delta: float
    n_candidates: int
    corrected_delta: float | None
    scores: tuple[CandidateScore, ...]
    chosen_index: int | None
    abstained: bool
    test_value: float | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "delta": self.delta,
            "n_candidates": self.n_candidates,
            "corrected_delta": self.corrected_delta,
            "scores": [
                {
                    "index": s.index,
                    "score": s.score,
                    "report": s.report.to_dict() if s.report is not None else None,
                }
                for s in self.scores
            ],
            "chosen_index": self.chosen_index,
            "abstained": self.abstained,
            "test_value": self.test_value,
        }


def select(scores, method: str) -> tuple[int | None, bool]:
    """Argmax with lowest-index tie-break; bound methods abstain at max <= 0.

    ``scores`` is a sequence of floats (vacuous bounds appear as -inf).
    Returns the 1-based chosen index, or (None, True) on abstention.
    """
    values = [float(s) for s in scores]
    if not values:
        raise ValueError("empty scores")
    best = max(values)
    if method in BOUND_METHODS and best <= 0.0:
        return None, True
    return values.index(best) + 1, False


def score_policies(
    data: LoggedDataset,
    candidates: list[PolicyTable],
    method: str,
    delta: float,
    seed: int,
    *,
    eta: RewardModel | None = None,
    mc_schedule: FixedSchedule | AdaptiveSchedule | None = None,
    lam: float | None = None,
) -> SelectionReport:
    """Score every candidate on the same logged data and select.

    Bound methods use x_corrected = x(delta) + ln(N); each candidate's
    Monte-Carlo simulation (ESLB only) runs on a sub-seed derived from
    ``seed`` and the candidate's index, so the report is bit-reproducible.
    DR-based methods need a fitted ``eta``.
    """
    if method not in ALL_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {ALL_METHODS}")
    if not candidates:
        raise ValueError("need at least one candidate")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if method in ("lambda-dr", "dr") and eta is None:
        raise ValueError(f"method {method!r} needs a fitted reward model")

    n_cand = len(candidates)
    ln_n = math.log(n_cand)
    corrected_delta = delta / n_cand if method in BOUND_METHODS else None
    if mc_schedule is None:
        mc_schedule = FixedSchedule(iterations=25, batch_size=64)

    scores: list[CandidateScore] = []
    for i, table in enumerate(candidates):
        report: BoundReport | None = None
        if method == "eslb":
            x = math.log(2.0 / delta) + ln_n
            w = importance_weights(table, data.behavior_table, data.actions)
            sub_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(i,)).generate_state(1)[0])
            proxies = mc_estimate_proxies(table, data.behavior_table, w, sub_seed, mc_schedule)
            report = eslb_bound(proxies, wis_estimate(w, data.rewards), data.n, x, delta=corrected_delta)
            score = report.lower_bound
        elif method == "lambda-is":
            x = math.log(3.0 / delta) + ln_n
            report = lambda_is_bound(data, table, lam, x, delta=corrected_delta)
            score = report.lower_bound
        elif method == "lambda-dr":
            x = math.log(3.0 / delta) + ln_n
            report = lambda_dr_bound(data, table, eta, lam, x, delta=corrected_delta)
            score = report.lower_bound
        elif method == "cheb-wis":
            x = math.log(3.0 / delta) + ln_n
            report = chebyshev_wis_bound(data, table, x, delta=corrected_delta)
            score = report.lower_bound
        elif method == "dr":
            score = dr_point_estimate(data, table, eta)
        else:  # "is" / "wis"
            w = importance_weights(table, data.behavior_table, data.actions)
            score = is_estimate(w, data.rewards) if method == "is" else wis_estimate(w, data.rewards)
        scores.append(CandidateScore(index=i + 1, score=float(score), report=report))

    chosen, abstained = select([s.score for s in scores], method)
    return SelectionReport(
        method=method,
        delta=delta,
        n_candidates=n_cand,
        corrected_delta=corrected_delta,
        scores=tuple(scores),
        chosen_index=chosen,
        abstained=abstained,
    )


def evaluate_selection(policy, test_contexts, oracle_labels) -> float:
    """Expected test reward of the selected policy: mean_i pi(label_i | x_i).

    A deterministic expectation is used instead of sampled test actions, so
    across-trial variance comes only from dataset regeneration.
    """
    from .policies import true_value

    return true_value(policy, test_contexts, oracle_labels)
