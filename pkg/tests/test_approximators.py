import itertools
import warnings

import numpy as np
import pytest

from survix.approximators import (
    approx_montecarlo,
    approx_permutation,
    approx_regression,
)
from survix.core import PredictionTarget, build_time_grid
from survix.games import MarginalEmpiricalImputer, SurvivalGame, evaluate_all_coalitions
from survix.interactions import exact_ksii, exact_sii
from survix.simulate import FeatureSampler, build_scenario, sample_features
from survix.validation import benchmark_game

X_STAR = np.array([-1.2650, 2.4162, -0.6436])


def small_game(scenario=8, target=PredictionTarget.HAZARD, seed=2, n_bg=64):
    model = build_scenario(scenario)
    bg = sample_features(FeatureSampler.standard(3, seed=seed), n_bg)
    grid = build_time_grid(70, 5)
    return SurvivalGame(model.prediction_function(target), X_STAR,
                        MarginalEmpiricalImputer(bg), grid)


def dummy_game(seed=3):
    model = build_scenario("dep_demo")  # feature 2 inert
    bg = sample_features(FeatureSampler.standard(3, seed=seed), 50)
    grid = build_time_grid(70, 4)
    return SurvivalGame(
        model.prediction_function(PredictionTarget.LOG_HAZARD),
        X_STAR, MarginalEmpiricalImputer(bg), grid,
    )


class TestMonteCarlo:
    def test_full_budget_falls_back_to_exact(self):
        game = small_game()
        exact = exact_ksii(evaluate_all_coalitions(game), 2)
        est, info = approx_montecarlo(game, 2, budget=8, seed=0)
        assert info["method"] == "exact_fallback"
        for mask in exact:
            assert np.allclose(est[mask], exact[mask], atol=1e-10)

    def test_dummy_feature_estimates_vanish(self):
        game = dummy_game()
        for seed in range(20):
            est, _ = approx_montecarlo(game, 2, budget=6, seed=seed)
            for mask in est:
                if mask & 0b100:
                    assert np.max(np.abs(est[mask])) < 1e-12

    def test_budget_accounting(self):
        game, _ = benchmark_game(seed=5, p=8, n_background=20, n_timepoints=3)
        for budget in (16, 64, 200):
            est, info = approx_montecarlo(game, 2, budget, seed=1)
            assert info["evaluations"] <= budget

    def test_error_shrinks_with_budget(self):
        game, _ = benchmark_game(seed=5, n_background=50, n_timepoints=3)
        exact = exact_ksii(evaluate_all_coalitions(game), 2)

        def med_abs_err(budget):
            errs = []
            for rep in range(7):
                est, _ = approx_montecarlo(game, 2, budget, seed=100 + rep)
                errs.append(np.mean([
                    np.abs(est[m] - exact[m]).mean() for m in exact
                ]))
            return float(np.median(errs))

        assert med_abs_err(512) < med_abs_err(64)

    def test_deterministic_given_seed(self):
        game = small_game()
        e1, _ = approx_montecarlo(game, 2, budget=6, seed=9)
        e2, _ = approx_montecarlo(game, 2, budget=6, seed=9)
        for mask in e1:
            assert np.array_equal(e1[mask], e2[mask])


def permutation_window_oracle(table, p, k):
    """Average discrete derivatives over all permutations and contiguous
    windows, the estimator's population value."""
    sums = {}
    counts = {}
    for perm in itertools.permutations(range(p)):
        prefix = [0]
        for j in perm:
            prefix.append(prefix[-1] | (1 << j))
        for order in range(1, k + 1):
            for pos in range(p - order + 1):
                K = 0
                for j in perm[pos:pos + order]:
                    K |= 1 << j
                M = prefix[pos]
                delta = np.zeros(len(table.grid))
                sub = K
                while True:
                    sign = (-1) ** (bin(K).count("1") - bin(sub).count("1"))
                    delta = delta + sign * table.lookup(M | sub)
                    if sub == 0:
                        break
                    sub = (sub - 1) & K
                sums[K] = sums.get(K, 0) + delta
                counts[K] = counts.get(K, 0) + 1
    return {K: sums[K] / counts[K] for K in sums}


class TestPermutation:
    def test_exhaustive_windows_equal_exact_sii(self):
        game = small_game()
        table = evaluate_all_coalitions(game)
        oracle = permutation_window_oracle(table, 3, 2)
        sii = exact_sii(table, 2)
        for mask in sii:
            assert np.allclose(oracle[mask], sii[mask], atol=1e-10)

    def test_full_budget_falls_back_to_exact(self):
        game = small_game()
        exact = exact_ksii(evaluate_all_coalitions(game), 2)
        est, info = approx_permutation(game, 2, budget=8, seed=0)
        assert info["method"] == "exact_fallback"
        for mask in exact:
            assert np.allclose(est[mask], exact[mask], atol=1e-10)

    def test_deterministic_given_seed(self):
        game, _ = benchmark_game(seed=5, p=8, n_background=20, n_timepoints=3)
        e1, i1 = approx_permutation(game, 2, budget=100, seed=4)
        e2, i2 = approx_permutation(game, 2, budget=100, seed=4)
        assert i1["evaluations"] == i2["evaluations"]
        for mask in e1:
            assert np.array_equal(e1[mask], e2[mask])

    def test_budget_accounting(self):
        game, _ = benchmark_game(seed=5, p=8, n_background=20, n_timepoints=3)
        for budget in (40, 100, 200):
            _, info = approx_permutation(game, 2, budget, seed=1)
            assert info["evaluations"] <= budget


class TestRegression:
    def test_full_enumeration_order_one_is_kernel_exact(self):
        # classic weighted-least-squares exactness at order 1, checked
        # against the permutation oracle rather than our own exact path
        game = small_game(scenario=3, target=PredictionTarget.LOG_HAZARD)
        table = evaluate_all_coalitions(game)
        perms = list(itertools.permutations(range(3)))
        oracle = {1 << j: np.zeros(len(table.grid)) for j in range(3)}
        for perm in perms:
            mask = 0
            for j in perm:
                oracle[1 << j] += table.lookup(mask | (1 << j)) - table.lookup(mask)
                mask |= 1 << j
        oracle = {m: v / len(perms) for m, v in oracle.items()}
        est, info = approx_regression(game, 1, budget=8, seed=0,
                                      fallback_to_exact=False)
        assert info["method"] == "regression"
        for mask, curve in oracle.items():
            assert np.allclose(est[mask], curve, atol=1e-6)

    def test_k_additive_game_recovered_exactly(self):
        # the basis spans any game whose interaction structure stops at
        # order 2, so the full-budget fit reproduces it
        game = small_game(scenario=8, target=PredictionTarget.LOG_HAZARD)
        table = evaluate_all_coalitions(game)
        exact = exact_ksii(table, 2)
        est, _ = approx_regression(game, 2, budget=8, seed=0,
                                   fallback_to_exact=False)
        for mask in exact:
            assert np.allclose(est[mask], exact[mask], atol=1e-8)

    def test_fallback_matches_exact(self):
        game = small_game()
        exact = exact_ksii(evaluate_all_coalitions(game), 2)
        est, info = approx_regression(game, 2, budget=8, seed=0)
        assert info["method"] == "exact_fallback"
        for mask in exact:
            assert np.allclose(est[mask], exact[mask], atol=1e-12)

    def test_efficiency_holds_at_any_budget(self):
        game, _ = benchmark_game(seed=5, n_background=40, n_timepoints=3)
        full = game.value(game.full_mask)
        for budget in (40, 130, 300):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                est, _ = approx_regression(game, 2, budget, seed=2)
            assert np.allclose(sum(est.values()), full, atol=1e-8)

    def test_underdetermined_flagged_and_ridged(self):
        game, _ = benchmark_game(seed=5, n_background=30, n_timepoints=3)
        with pytest.warns(RuntimeWarning):
            est, info = approx_regression(game, 2, budget=40, seed=2)
        assert info["unstable"]
        assert info["ridge"] > 0
        assert info["design_rank"] <= info["n_basis"]

    def test_budget_error_trend(self):
        game, _ = benchmark_game(seed=5, n_background=50, n_timepoints=3)
        exact = exact_ksii(evaluate_all_coalitions(game), 2)

        def med_err(budget):
            errs = []
            for rep in range(5):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    est, _ = approx_regression(game, 2, budget, seed=50 + rep)
                errs.append(np.mean([
                    np.sum((est[m] - exact[m]) ** 2) for m in exact
                ]))
            return float(np.median(errs))

        assert med_err(512) <= med_err(128)
