import numpy as np
import pytest

from survix.core import PredictionTarget, build_time_grid
from survix.games import (
    ConditionalGaussianImputer,
    MarginalEmpiricalImputer,
    SurvivalGame,
    ValueTable,
    conditional_gaussian_params,
    evaluate_all_coalitions,
)
from survix.simulate import build_scenario, dep_demo_covariance, pairwise_covariance

X_STAR = np.array([-1.2650, 2.4162, -0.6436])


def _marginal_game(scenario=1, target=PredictionTarget.LOG_HAZARD, n_bg=50,
                   seed=0, n_points=7):
    model = build_scenario(scenario)
    rng = np.random.default_rng(seed)
    bg = rng.standard_normal((n_bg, 3))
    grid = build_time_grid(70, n_points)
    game = SurvivalGame(model.prediction_function(target), X_STAR,
                        MarginalEmpiricalImputer(bg), grid)
    return game, model, bg, grid


class TestConditionalGaussian:
    def test_independent_features(self):
        mean = np.array([0.5, -1.0, 2.0])
        cov = np.eye(3)
        cm, cc = conditional_gaussian_params(mean, cov, [1], np.array([3.0]))
        assert np.allclose(cm, mean[[0, 2]])
        assert np.allclose(cc, np.eye(2))

    def test_bivariate_textbook_case(self):
        cov = pairwise_covariance(2, 0.9)
        cm, cc = conditional_gaussian_params(np.zeros(2), cov, [0],
                                             np.array([1.0]))
        assert cm[0] == pytest.approx(0.9, abs=1e-12)
        assert cc[0, 0] == pytest.approx(1 - 0.81, abs=1e-12)

    def test_chain_consistency(self):
        # conditioning on {0,1} and then on feature 2 within the reduced
        # Gaussian equals conditioning on {0,1,2} jointly
        rng = np.random.default_rng(4)
        A = rng.standard_normal((4, 4))
        cov = A @ A.T + 4 * np.eye(4)
        s = np.sqrt(np.diag(cov))
        cov = cov / np.outer(s, s)
        mean = rng.standard_normal(4)
        x = rng.standard_normal(4)
        m_joint, c_joint = conditional_gaussian_params(mean, cov, [0, 1, 2],
                                                       x[[0, 1, 2]])
        m1, c1 = conditional_gaussian_params(mean, cov, [0, 1], x[[0, 1]])
        # the reduced 2-d Gaussian covers features (2, 3); condition on the
        # first of them
        m2, c2 = conditional_gaussian_params(m1, c1, [0], np.array([x[2]]))
        assert np.allclose(m2, m_joint, atol=1e-10)
        assert np.allclose(c2, c_joint, atol=1e-10)

    def test_errors(self):
        cov = np.eye(2)
        with pytest.raises(ValueError):
            conditional_gaussian_params(np.zeros(2), cov, [], np.array([]))
        with pytest.raises(ValueError):
            conditional_gaussian_params(np.zeros(2), cov, [0, 1], np.zeros(2))
        singular = np.ones((3, 3))
        with pytest.raises(ValueError):
            conditional_gaussian_params(np.zeros(3), singular, [0, 1],
                                        np.zeros(2))


class TestMarginalGame:
    def test_empty_coalition_is_zero(self):
        game, _, _, _ = _marginal_game()
        assert np.array_equal(game.value(0), np.zeros(len(game.grid)))

    def test_full_coalition_is_centered_prediction(self):
        game, model, bg, grid = _marginal_game(target=PredictionTarget.HAZARD)
        full = game.value(7)
        pred = model.predict(X_STAR[None, :], grid.points,
                             PredictionTarget.HAZARD)[0]
        base = model.predict(bg, grid.points, PredictionTarget.HAZARD).mean(axis=0)
        assert np.allclose(full, pred - base, atol=1e-14)

    def test_single_row_background_reduction(self):
        model = build_scenario(1)
        bg = np.array([[0.1, 0.2, 0.3]])
        grid = build_time_grid(70, 3)
        predict = model.prediction_function(PredictionTarget.LOG_HAZARD)
        game = SurvivalGame(predict, X_STAR, MarginalEmpiricalImputer(bg), grid)
        mixed = np.array([X_STAR[0], 0.2, 0.3])
        expected = predict(mixed[None, :], grid.points)[0] - \
            predict(bg, grid.points)[0]
        assert np.allclose(game.value(0b001), expected, atol=1e-14)

    def test_dummy_feature_changes_nothing(self):
        # feature 2 is inert in dep_demo, so adding it to any coalition
        # leaves the value identical (same predictions row-for-row)
        model = build_scenario("dep_demo")
        rng = np.random.default_rng(2)
        bg = rng.standard_normal((40, 3))
        grid = build_time_grid(70, 5)
        game = SurvivalGame(model.prediction_function(PredictionTarget.LOG_HAZARD),
                            X_STAR, MarginalEmpiricalImputer(bg), grid)
        for mask in (0b000, 0b001, 0b010, 0b011):
            with_j = game.value(mask | 0b100)
            without = game.value(mask)
            # identical predictions row-for-row; only the mean's rounding and
            # the full-coalition shortcut separate the two values
            assert np.allclose(with_j, without, atol=1e-13, rtol=0)

    def test_background_order_invariance(self):
        game, model, bg, grid = _marginal_game(n_bg=64)
        rng = np.random.default_rng(9)
        game2 = SurvivalGame(model.prediction_function(PredictionTarget.LOG_HAZARD),
                             X_STAR,
                             MarginalEmpiricalImputer(bg[rng.permutation(64)]),
                             grid)
        for mask in range(8):
            assert np.allclose(game.value(mask), game2.value(mask), atol=1e-12)


class TestConditionalGame:
    def _game(self, seed=0, n_samples=500):
        model = build_scenario("dep_demo")
        imp = ConditionalGaussianImputer(np.zeros(3), dep_demo_covariance(),
                                         n_samples=n_samples, seed=seed)
        grid = build_time_grid(70, 5)
        return SurvivalGame(
            model.prediction_function(PredictionTarget.LOG_HAZARD),
            X_STAR, imp, grid,
        ), model, grid

    def test_centering_exact(self):
        game, _, _ = self._game()
        assert np.array_equal(game.value(0), np.zeros(5))

    def test_full_coalition(self):
        game, model, grid = self._game()
        pred = model.predict(X_STAR[None, :], grid.points,
                             PredictionTarget.LOG_HAZARD)[0]
        assert np.allclose(game.value(7), pred - game.baseline(), atol=1e-12)

    def test_seed_determinism(self):
        g1, _, _ = self._game(seed=3)
        g2, _, _ = self._game(seed=3)
        assert np.array_equal(g1.value(0b101), g2.value(0b101))


class TestValueTable:
    def test_complete_table_shape_and_bounds(self):
        game, model, bg, grid = _marginal_game()
        table = evaluate_all_coalitions(game)
        assert table.complete
        assert table.values.shape == (8, len(grid))
        assert np.array_equal(table.lookup(0), np.zeros(len(grid)))
        pred = model.predict(X_STAR[None, :], grid.points,
                             PredictionTarget.LOG_HAZARD)[0]
        assert np.allclose(table.lookup(7), pred - game.baseline(), atol=1e-13)

    def test_log_hazard_table_time_invariant_for_ph_scenario(self):
        game, _, _, _ = _marginal_game(scenario=1)
        table = evaluate_all_coalitions(game)
        spread = np.max(table.values, axis=1) - np.min(table.values, axis=1)
        assert np.all(spread <= 1e-12)

    def test_memory_guard(self):
        game, _, _, _ = _marginal_game()
        with pytest.raises(MemoryError):
            evaluate_all_coalitions(game, byte_budget=16)

    def test_dump_csv(self, tmp_path):
        game, _, _, _ = _marginal_game(n_points=2)
        table = evaluate_all_coalitions(game)
        path = tmp_path / "table.csv"
        table.dump_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,coalition,value"
        assert len(lines) == 1 + 2 * 8
