"""Off-policy evaluation and best-policy selection for contextual bandits.

High-probability lower bounds on the value of a target policy from logged
bandit data, built around the self-normalized importance-sampling estimator:
the Efron-Stein lower bound plus lambda-corrected IS/DR and Chebyshev
baselines, with a policy-selection layer and a config-driven CLI.
"""

__version__ = "0.1.0"

from .core import (
    ConfidenceSpec,
    LoggedDataset,
    PolicyTable,
    SupportViolationError,
    effective_sample_size,
    hoeffding_context_term,
    importance_weights,
    is_estimate,
    wis_estimate,
)
from .policies import (
    FitConfig,
    FitDivergenceError,
    GibbsPolicy,
    LinearSoftmaxPolicy,
    fit_policy,
    gibbs_probs,
    gibbs_true_value,
    policy_from_json,
    policy_to_json,
    softmax_probs,
    true_value,
)
from .data import (
    ClassificationDataset,
    CsvFormatError,
    GeneratorConfig,
    generate_classification,
    load_csv,
    log_interactions,
    save_csv,
    split,
)
from .eslb import (
    AdaptiveSchedule,
    BoundReport,
    FixedSchedule,
    VarianceProxies,
    convergence_check,
    eslb_bound,
    exact_proxies_enumeration,
    exact_wis_conditional_expectation,
    mc_estimate_proxies,
)
from .baselines import (
    LambdaWeights,
    RewardModel,
    bernstein_sample_variance,
    chebyshev_wis_bound,
    default_lambda,
    dr_point_estimate,
    fit_reward_model,
    lambda_dr_bound,
    lambda_is_bound,
    lambda_weights,
    weight_second_moment,
)
from .selection import (
    ALL_METHODS,
    BOUND_METHODS,
    RAW_METHODS,
    CandidateScore,
    SelectionReport,
    evaluate_selection,
    score_policies,
    select,
)
