import math

import numpy as np


def _norm(rows):
    return rows / rows.sum(axis=1, keepdims=True)
import pytest
from hypothesis import given
from hypothesis import strategies as st

from opeselect.core import LoggedDataset, PolicyTable, importance_weights, is_estimate
from opeselect.baselines import (
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
from opeselect.data import ClassificationDataset, log_interactions
from opeselect.eslb import FixedSchedule, eslb_bound, mc_estimate_proxies
from opeselect.policies import GibbsPolicy


def make_logged(rng, n=40, k=3, d=2, behavior=None, rewards=None):
    behavior = behavior if behavior is not None else PolicyTable(_norm(rng.dirichlet(np.ones(k), size=n) + 1e-3))
    actions = rng.integers(1, k + 1, size=n)
    if rewards is None:
        rewards = rng.integers(0, 2, size=n).astype(float)
    return LoggedDataset(
        contexts=rng.normal(size=(n, d)),
        actions=actions,
        rewards=rewards,
        behavior_table=behavior,
    )


class TestLambdaWeights:
    def test_matched_half_half(self):
        table = PolicyTable(np.array([[0.5, 0.5]]))
        lw = lambda_weights(table, table, np.array([1]), lam=0.1)
        assert lw.weights[0] == pytest.approx(5.0 / 6.0)

    def test_small_lambda_approaches_plain_weights(self, rng):
        n, k = 10, 3
        target = PolicyTable(_norm(rng.dirichlet(np.ones(k), size=n) + 1e-6))
        behavior = PolicyTable(_norm(rng.dirichlet(np.ones(k), size=n) + 1e-2))
        actions = rng.integers(1, k + 1, size=n)
        plain = importance_weights(target, behavior, actions)
        lw = lambda_weights(target, behavior, actions, lam=1e-12)
        np.testing.assert_allclose(lw.weights, plain, rtol=1e-9)

    def test_cap_example(self):
        target = PolicyTable(np.array([[1.0, 0.0]]))
        behavior = PolicyTable(np.array([[0.5, 0.5]]))
        assert lambda_weights(target, behavior, np.array([1]), lam=0.5).weights[0] == pytest.approx(1.0)

    @given(st.integers(1, 30), st.floats(0.01, 5.0), st.integers(0, 10_000))
    def test_dominated_by_plain_and_cap(self, n, lam, seed):
        rng = np.random.default_rng(seed)
        k = 3
        target = PolicyTable(_norm(rng.dirichlet(np.ones(k), size=n) + 1e-6))
        behavior = PolicyTable(_norm(rng.dirichlet(np.ones(k), size=n) + 1e-3))
        actions = rng.integers(1, k + 1, size=n)
        plain = importance_weights(target, behavior, actions)
        lw = lambda_weights(target, behavior, actions, lam).weights
        assert np.all(lw <= np.minimum(plain, 1.0 / lam) + 1e-12)

    def test_default_lambda(self):
        assert default_lambda(10_000) == pytest.approx(0.01)


class TestBernsteinVariance:
    def test_examples(self):
        assert bernstein_sample_variance([1.0, 0.0]) == pytest.approx(0.5)
        assert bernstein_sample_variance([3.0, 3.0, 3.0]) == 0.0
        assert bernstein_sample_variance([0.0, 1.0, 2.0]) == pytest.approx(1.0)

    def test_too_short(self):
        with pytest.raises(ValueError):
            bernstein_sample_variance([1.0])

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=25))
    def test_matches_pairwise_definition(self, values):
        z = np.array(values)
        n = len(z)
        pairwise = sum(
            (z[i] - z[j]) ** 2 for i in range(n) for j in range(i + 1, n)
        ) / (n * (n - 1))
        assert bernstein_sample_variance(z) == pytest.approx(pairwise, abs=1e-12, rel=1e-9)


class TestLambdaIsBound:
    def test_matched_policy_bias_term(self, rng):
        n = 10
        behavior = PolicyTable(np.full((n, 2), 0.5))
        data = make_logged(rng, n=n, k=2, behavior=behavior)
        report = lambda_is_bound(data, behavior, lam=0.1, x=2.0)
        assert report.bias == pytest.approx(1.0 / 6.0)

    def test_large_lambda_is_vacuous(self, rng):
        data = make_logged(rng, n=20, k=2)
        target = PolicyTable(np.full((20, 2), 0.5))
        report = lambda_is_bound(data, target, lam=1e9, x=2.0)
        assert report.point_estimate == pytest.approx(0.0, abs=1e-9)
        assert report.lower_bound <= 0.0
        assert report.diagnostics["vacuous"]

    def test_zero_rewards_vacuous(self, rng):
        data = make_logged(rng, n=15, k=2, rewards=np.zeros(15))
        target = PolicyTable(np.full((15, 2), 0.5))
        report = lambda_is_bound(data, target, lam=None, x=2.0)
        assert report.point_estimate == 0.0
        assert report.lower_bound <= 0.0

    def test_decomposition_reconstructs(self, rng):
        data = make_logged(rng, n=30, k=3)
        target = PolicyTable(_norm(rng.dirichlet(np.ones(3), size=30) + 1e-6))
        rep = lambda_is_bound(data, target, lam=None, x=3.0)
        recon = rep.point_estimate - rep.concentration - rep.bias - rep.context_term
        assert rep.lower_bound == pytest.approx(recon, abs=1e-12)


class TestRewardModel:
    def test_constant_rewards_fit_exactly(self, rng):
        n = 30
        data = make_logged(rng, n=n, k=2, rewards=np.ones(n))
        model = fit_reward_model(data, folds=5)
        preds = model.predict(data.contexts, data.actions)
        np.testing.assert_allclose(preds, 1.0, atol=1e-6)

    def test_unlogged_action_predicts_zero(self, rng):
        n, k = 25, 3
        behavior = PolicyTable(_norm(rng.dirichlet(np.ones(k), size=n) + 1e-3))
        actions = rng.integers(1, 3, size=n)  # action 3 never logged
        data = LoggedDataset(
            contexts=rng.normal(size=(n, 2)),
            actions=actions,
            rewards=rng.integers(0, 2, size=n).astype(float),
            behavior_table=behavior,
        )
        model = fit_reward_model(data)
        preds = model.predict_all(data.contexts)
        np.testing.assert_array_equal(preds[:, 2], 0.0)
        assert math.isnan(model.alphas[2])

    def test_linear_reward_beats_constant_predictor(self, rng):
        # r = clip(0.5 + 0.1 x1) + noise on a single logged action.
        n = 400
        x = rng.normal(size=(n, 1)) * 3
        p_reward = np.clip(0.5 + 0.1 * x[:, 0], 0.0, 1.0)
        rewards = (rng.random(n) < p_reward).astype(float)
        data = LoggedDataset(
            contexts=x,
            actions=np.ones(n, dtype=int),
            rewards=rewards,
            behavior_table=PolicyTable(np.full((n, 2), 0.5)),
        )
        model = fit_reward_model(data, folds=10)
        assert model.alphas[0] <= 100.0
        preds = model.predict(x, np.ones(n, dtype=int))
        mse_model = float(np.mean((preds - p_reward) ** 2))
        mse_const = float(np.mean((p_reward.mean() - p_reward) ** 2))
        assert mse_model < mse_const

    def test_loo_for_small_samples(self, rng):
        data = make_logged(rng, n=30, k=2)
        model = fit_reward_model(data, folds=10)  # n <= 100 -> leave-one-out
        assert model.coefs.shape == (2, 3)

    def test_single_sample_action_falls_back_to_largest_alpha(self, rng):
        n = 12
        actions = np.ones(n, dtype=np.int64)
        actions[0] = 2  # action 2 logged exactly once: no CV possible
        data = LoggedDataset(
            contexts=rng.normal(size=(n, 2)),
            actions=actions,
            rewards=rng.integers(0, 2, size=n).astype(float),
            behavior_table=PolicyTable(np.full((n, 2), 0.5)),
        )
        model = fit_reward_model(data)
        assert model.alphas[1] == 1000.0

    def test_predictions_clipped(self):
        model = RewardModel(coefs=np.array([[5.0, 0.0], [-5.0, 0.0]]), alphas=np.array([1.0, 1.0]))
        preds = model.predict_all(np.array([[1.0], [2.0]]))
        assert preds.min() >= 0.0 and preds.max() <= 1.0


class TestDrPointEstimate:
    def test_zero_model_reduces_to_is(self, rng):
        data = make_logged(rng, n=25, k=3)
        target = PolicyTable(_norm(rng.dirichlet(np.ones(3), size=25) + 1e-6))
        eta = RewardModel(coefs=np.zeros((3, 3)), alphas=np.ones(3))
        w = importance_weights(target, data.behavior_table, data.actions)
        assert dr_point_estimate(data, target, eta) == pytest.approx(is_estimate(w, data.rewards))

    def test_perfect_constant_model(self, rng):
        n = 20
        data = make_logged(rng, n=n, k=2, rewards=np.ones(n))
        target = PolicyTable(_norm(rng.dirichlet(np.ones(2), size=n) + 1e-6))
        eta = RewardModel(coefs=np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]), alphas=np.ones(2))
        assert dr_point_estimate(data, target, eta) == pytest.approx(1.0)


class TestLambdaDrBound:
    def test_zero_model_matches_lambda_is_componentwise(self, rng):
        data = make_logged(rng, n=40, k=3)
        target = PolicyTable(_norm(rng.dirichlet(np.ones(3), size=40) + 1e-6))
        eta = RewardModel(coefs=np.zeros((3, 3)), alphas=np.ones(3))
        dr = lambda_dr_bound(data, target, eta, lam=None, x=3.0)
        is_ = lambda_is_bound(data, target, lam=None, x=3.0)
        # Same per-sample statistics: identical point, bias and context terms.
        assert dr.point_estimate == is_.point_estimate
        assert dr.bias == is_.bias
        assert dr.context_term == is_.context_term
        # The published deterministic constants differ: (1 + 1/lam) vs 1/lam.
        gap = (7.0 / 3.0) * 3.0 / (data.n - 1)
        assert dr.concentration - is_.concentration == pytest.approx(gap, abs=1e-12)

    def test_range_constant_arithmetic(self, rng):
        n = 10_000
        lam = default_lambda(n)
        assert 1 + 1 / lam == pytest.approx(101.0)
        x = 3.0
        expected_third_term = (7.0 / 3.0) * 101.0 * x / (n - 1)
        data = make_logged(rng, n=50, k=2)
        # Verify the formula directly on a small instance with the same lam/x.
        target = PolicyTable(np.full((50, 2), 0.5))
        eta = RewardModel(coefs=np.zeros((2, 3)), alphas=np.ones(2))
        rep = lambda_dr_bound(data, target, eta, lam=lam, x=x)
        det = (7.0 / 3.0) * (1 + 1 / lam) * x / (50 - 1)
        var_term = math.sqrt(2 * x * bernstein_sample_variance(
            lambda_weights(target, data.behavior_table, data.actions, lam).weights * data.rewards
        ) / 50)
        assert rep.concentration == pytest.approx(var_term + det, rel=1e-12)
        assert expected_third_term == pytest.approx((7.0 / 3.0) * 101.0 * 3.0 / 9999)

    def test_constant_model_constant_rewards_kills_variance(self, rng):
        n = 30
        behavior = PolicyTable(np.full((n, 2), 0.5))
        actions = rng.integers(1, 3, size=n)
        data = LoggedDataset(
            contexts=rng.normal(size=(n, 2)),
            actions=actions,
            rewards=np.ones(n),
            behavior_table=behavior,
        )
        c = 0.5
        eta = RewardModel(
            coefs=np.array([[0.0, 0.0, c], [0.0, 0.0, c]]), alphas=np.ones(2)
        )
        rep = lambda_dr_bound(data, behavior, eta, lam=0.1, x=2.0)
        # Z_i is constant (matched weights, constant reward and model), so the
        # empirical variance part vanishes and only the deterministic term stays.
        det = (7.0 / 3.0) * (1 + 1 / 0.1) * 2.0 / (n - 1)
        assert rep.concentration == pytest.approx(det, abs=1e-12)

    def test_decomposition_reconstructs(self, rng):
        data = make_logged(rng, n=35, k=3)
        target = PolicyTable(_norm(rng.dirichlet(np.ones(3), size=35) + 1e-6))
        eta = fit_reward_model(data)
        rep = lambda_dr_bound(data, target, eta, lam=None, x=4.0)
        recon = rep.point_estimate - rep.concentration - rep.bias - rep.context_term
        assert rep.lower_bound == pytest.approx(recon, abs=1e-12)


class TestWeightSecondMoment:
    def test_matched_policy_equals_n(self, rng):
        n = 12
        table = PolicyTable(_norm(rng.dirichlet(np.ones(3), size=n) + 1e-6))
        assert weight_second_moment(table, table) == pytest.approx(n)

    def test_row_example(self):
        target = PolicyTable(np.array([[0.8, 0.2]]))
        behavior = PolicyTable(np.array([[0.5, 0.5]]))
        assert weight_second_moment(target, behavior) == pytest.approx(1.36)

    def test_deterministic_target(self):
        target = PolicyTable(np.array([[1.0, 0.0]]))
        behavior = PolicyTable(np.array([[0.5, 0.5]]))
        assert weight_second_moment(target, behavior) == pytest.approx(2.0)


class TestChebyshevBound:
    def test_boundary_n4_is_vacuous(self, rng):
        n = 4
        behavior = PolicyTable(np.full((n, 2), 0.5))
        data = make_logged(rng, n=n, k=2, behavior=behavior)
        rep = chebyshev_wis_bound(data, behavior, x=2.0)
        # N_x = 4 - sqrt(2*2*4) = 0 exactly.
        assert rep.diagnostics["n_x"] == pytest.approx(0.0, abs=1e-9)
        assert rep.lower_bound == -math.inf
        assert rep.diagnostics["vacuous"]

    def test_matched_policy_formula_arithmetic(self, rng):
        n = 10_000
        x = math.log(3 / 0.05)
        behavior = PolicyTable(np.full((n, 2), 0.5))
        data = make_logged(rng, n=n, k=2, behavior=behavior)
        rep = chebyshev_wis_bound(data, behavior, x=x)
        n_x = n - math.sqrt(2 * x * n)
        assert n_x == pytest.approx(9713.8, abs=0.1)
        assert rep.diagnostics["n_x"] == pytest.approx(n_x, rel=1e-12)
        # sqrt(S2 e^x / N_x^2) with S2 = n and e^x = 60.
        assert rep.concentration == pytest.approx(math.sqrt(n * 60.0) / n_x, rel=1e-9)
        assert rep.concentration == pytest.approx(0.07975, abs=5e-5)

    def test_full_mismatch_always_vacuous(self, rng):
        n = 50
        target = PolicyTable(np.tile([1.0 - 1e-9, 1e-9], (n, 1)))
        behavior = PolicyTable(np.tile([1e-4, 1.0 - 1e-4], (n, 1)))
        data = make_logged(rng, n=n, k=2, behavior=behavior)
        rep = chebyshev_wis_bound(data, target, x=2.0)
        assert rep.lower_bound == -math.inf

    def test_multiplicative_reconstruction(self, rng):
        n = 2_000
        behavior = PolicyTable(np.full((n, 2), 0.5))
        data = make_logged(rng, n=n, k=2, behavior=behavior)
        rep = chebyshev_wis_bound(data, behavior, x=2.0)
        recon = rep.bias * (rep.point_estimate - rep.concentration) - rep.context_term
        assert rep.lower_bound == pytest.approx(recon, abs=1e-12)


class TestCoverageProperty:
    def test_bounds_stay_below_truth_on_matched_instance(self, rng):
        # Matched behavior/target: every bound's lower value must sit below the
        # true value in >= 1 - delta of seeded trials (statistical property).
        n, k, delta = 120, 3, 0.1
        x2, x3 = math.log(2 / delta), math.log(3 / delta)
        labels_pol_tau = 0.5
        violations = {m: 0 for m in ("eslb", "lambda-is", "lambda-dr", "cheb-wis")}
        trials = 200
        true_v = math.exp(1 / labels_pol_tau) / (math.exp(1 / labels_pol_tau) + k - 1)
        from opeselect.core import wis_estimate

        for t in range(trials):
            trng = np.random.default_rng(1000 + t)
            labels = trng.integers(1, k + 1, size=n)
            ds = ClassificationDataset(
                features=trng.normal(size=(n, 2)), labels=labels, num_classes=k
            )
            behavior = GibbsPolicy(oracle_labels=labels, tau=labels_pol_tau, num_actions=k)
            logged = log_interactions(ds, behavior, seed=2000 + t)
            table = logged.behavior_table
            w = importance_weights(table, table, logged.actions)
            proxies = mc_estimate_proxies(table, table, w, seed=t, schedule=FixedSchedule(5, 16))
            if eslb_bound(proxies, wis_estimate(w, logged.rewards), n, x2).lower_bound > true_v:
                violations["eslb"] += 1
            eta = fit_reward_model(logged, folds=5)
            if lambda_is_bound(logged, table, None, x3).lower_bound > true_v:
                violations["lambda-is"] += 1
            if lambda_dr_bound(logged, table, eta, None, x3).lower_bound > true_v:
                violations["lambda-dr"] += 1
            if chebyshev_wis_bound(logged, table, x3).lower_bound > true_v:
                violations["cheb-wis"] += 1
        for method, count in violations.items():
            assert count / trials <= delta, f"{method} violated coverage too often"
