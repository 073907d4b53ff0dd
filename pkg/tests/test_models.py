import math

import numpy as np
import pytest
from scipy import integrate

from survix.core import PredictionTarget, SurvivalDataset
from survix.models import (
    ConvergenceError,
    CoxModel,
    GroundTruthModel,
    RiskScoreSpec,
    RiskTerm,
    coxph_survival,
    cumulative_hazard,
    eval_risk_score,
    eval_target,
    fit_coxph,
    model_from_json,
    model_to_json,
)
from survix.simulate import build_scenario, simulate_dataset

X_STAR = np.array([-1.2650, 2.4162, -0.6436])


class TestRiskScore:
    def test_scenario1_hand_value(self):
        # oracle: plain arithmetic on the published coefficients
        expected = 0.4 * -1.2650 + (-0.8) * 2.4162 + (-0.6) * -0.6436
        model = build_scenario(1)
        for t in (0.0, 5.0, 70.0):
            assert eval_risk_score(model.risk, X_STAR, t) == pytest.approx(
                expected, abs=1e-12
            )
        assert expected == pytest.approx(-2.0528, abs=1e-4)

    def test_empty_terms(self):
        risk = RiskScoreSpec(p=2, terms=())
        assert eval_risk_score(risk, np.zeros(2), 3.0) == 0.0

    def test_scenario2_time_zero_kills_log_term(self):
        expected = (-0.8) * 2.4162 + (-0.6) * -0.6436
        model = build_scenario(2)
        assert eval_risk_score(model.risk, X_STAR, 0.0) == pytest.approx(
            expected, abs=1e-12
        )
        assert expected == pytest.approx(-1.5468, abs=1e-4)

    def test_dimension_error(self):
        model = build_scenario(1)
        with pytest.raises(ValueError):
            eval_risk_score(model.risk, np.zeros(2), 0.0)

    def test_term_validation(self):
        with pytest.raises(ValueError):
            RiskTerm((), 1.0)
        with pytest.raises(ValueError):
            RiskTerm((0, 1), 1.0, ("identity",))
        with pytest.raises(ValueError):
            RiskTerm((0,), 1.0, ("cube",))
        with pytest.raises(ValueError):
            RiskTerm((0,), 1.0, ("identity",), "sqrt")


class TestTargets:
    def test_hazard_hand_value(self):
        model = build_scenario(1)
        g = 0.4 * -1.2650 + (-0.8) * 2.4162 + (-0.6) * -0.6436
        expected = 0.03 * math.exp(g)
        assert eval_target(model, PredictionTarget.HAZARD, X_STAR, 3.0) == \
            pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.003851, abs=1e-6)

    def test_survival_closed_form_constant_hazard(self):
        model = build_scenario(1)
        h = eval_target(model, PredictionTarget.HAZARD, X_STAR, 0.0)
        expected = math.exp(-h * 70)
        assert eval_target(model, PredictionTarget.SURVIVAL, X_STAR, 70.0) == \
            pytest.approx(expected, rel=1e-10)
        assert expected == pytest.approx(0.7637, abs=1e-4)

    def test_survival_at_zero_is_one(self):
        for scen in (1, 2, 10):
            model = build_scenario(scen)
            assert eval_target(model, PredictionTarget.SURVIVAL, X_STAR, 0.0) == 1.0

    def test_hazard_is_exp_log_hazard(self):
        rng = np.random.default_rng(5)
        for scen in (1, 4, 9):
            model = build_scenario(scen)
            for _ in range(5):
                x = rng.standard_normal(3)
                t = float(rng.uniform(0, 70))
                lh = eval_target(model, PredictionTarget.LOG_HAZARD, x, t)
                hz = eval_target(model, PredictionTarget.HAZARD, x, t)
                assert hz == pytest.approx(math.exp(lh), rel=1e-12)

    def test_time_independent_targets_are_time_invariant(self):
        model = build_scenario(8)
        for target in (PredictionTarget.LOG_HAZARD, PredictionTarget.HAZARD):
            vals = [eval_target(model, target, X_STAR, t) for t in (1, 10, 70)]
            assert max(vals) - min(vals) == 0.0

    def test_overflow_reported(self):
        model = GroundTruthModel(
            lam=1.0, risk=RiskScoreSpec(2, (RiskTerm((0,), 500.0),))
        )
        with pytest.raises(FloatingPointError):
            eval_target(model, PredictionTarget.HAZARD, np.array([5.0, 0.0]), 1.0)


class TestCumulativeHazard:
    def test_time_independent_closed_form_vs_quadrature(self):
        model = build_scenario(3)
        x = X_STAR
        for t in (1.0, 10.0, 70.0):
            closed = cumulative_hazard(model, x, t)
            g = eval_risk_score(model.risk, x, 0.0)
            ref, _ = integrate.quad(lambda u: 0.03 * math.exp(g), 0, t)
            assert closed == pytest.approx(ref, abs=1e-10)

    def test_zero_time(self):
        assert cumulative_hazard(build_scenario(2), X_STAR, 0.0) == 0.0

    def test_scenario2_vs_composite_trapezoid_oracle(self):
        # oracle: 1e4-point composite trapezoid on the hazard integrand
        model = build_scenario(2)
        x = X_STAR
        u = np.linspace(0, 10, 10_001)
        g = (0.4 * x[0] * np.log1p(u) + (-0.8) * x[1] + (-0.6) * x[2])
        oracle = np.trapezoid(0.03 * np.exp(g), u)
        assert cumulative_hazard(model, x, 10.0) == pytest.approx(oracle, abs=1e-8)

    def test_batch_matches_scalar(self):
        model = build_scenario(9)
        rng = np.random.default_rng(3)
        X = rng.standard_normal((4, 3))
        times = np.array([2.0, 11.0, 33.0, 70.0])
        H = model.cumulative_hazard_matrix(X, times)
        for i in range(4):
            for j, t in enumerate(times):
                assert H[i, j] == pytest.approx(
                    cumulative_hazard(model, X[i], t), abs=1e-10, rel=1e-12
                )

    def test_survival_monotone_and_consistent(self):
        model = build_scenario(7)
        times = np.linspace(1, 70, 30)
        S = model.survival_matrix(X_STAR[None, :], times)[0]
        assert np.all(np.diff(S) <= 0)
        assert np.all((S > 0) & (S <= 1))
        H = model.cumulative_hazard_matrix(X_STAR[None, :], times)[0]
        assert np.allclose(S, np.exp(-H), rtol=0, atol=1e-14)


class TestModelJson:
    def test_round_trip(self, tmp_path):
        model = build_scenario(10)
        path = tmp_path / "m.json"
        model_to_json(model, path)
        back = model_from_json(path)
        assert back.lam == model.lam
        assert back.risk == model.risk


def _cox_data(n=800, seed=11):
    data, _ = simulate_dataset(1, n=n, seed=seed)
    return data


class TestCoxFit:
    def test_recovers_simulation_coefficients(self):
        model = fit_coxph(_cox_data())
        truth = np.array([0.4, -0.8, -0.6])
        assert np.all(np.abs(model.beta - truth) < 3 * model.stderr)

    def test_single_event_binary_feature(self):
        X = np.array([[0.0], [1.0], [0.0], [1.0]])
        data = SurvivalDataset(X, np.array([1.0, 2.0, 3.0, 4.0]),
                               np.array([0, 1, 0, 0]))
        model = fit_coxph(data)
        assert np.all(np.isfinite(model.beta))
        assert model.baseline_times.size == 1

    def test_permutation_invariance(self):
        data = _cox_data(n=300, seed=4)
        model = fit_coxph(data)
        rng = np.random.default_rng(0)
        perm = rng.permutation(data.n)
        shuffled = SurvivalDataset(data.features[perm], data.times[perm],
                                   data.events[perm])
        model2 = fit_coxph(shuffled)
        assert np.allclose(model.beta, model2.beta, atol=1e-10, rtol=0)

    def test_feature_scaling_rescales_beta(self):
        data = _cox_data(n=400, seed=9)
        c = np.array([2.0, 0.5, 4.0])
        scaled = SurvivalDataset(data.features * c, data.times, data.events)
        m1 = fit_coxph(data)
        m2 = fit_coxph(scaled)
        assert np.allclose(m1.beta, m2.beta * c, atol=1e-6, rtol=0)

    def test_constant_column_rejected(self):
        X = np.column_stack([np.ones(10), np.arange(10.0)])
        data = SurvivalDataset(X, np.arange(1.0, 11.0), np.ones(10, dtype=int))
        with pytest.raises(ValueError):
            fit_coxph(data)

    def test_breslow_baseline_monotone(self):
        model = fit_coxph(_cox_data(n=200, seed=2))
        assert model.baseline_cumhaz[0] >= 0
        assert np.all(np.diff(model.baseline_cumhaz) >= 0)

    def test_json_round_trip(self, tmp_path):
        model = fit_coxph(_cox_data(n=200, seed=2))
        path = tmp_path / "cox.json"
        model.to_json(path)
        back = CoxModel.from_json(path)
        assert np.array_equal(back.beta, model.beta)
        assert np.array_equal(back.baseline_cumhaz, model.baseline_cumhaz)
        x = np.array([0.3, -0.2, 1.0])
        assert coxph_survival(back, x, 35.0) == coxph_survival(model, x, 35.0)


class TestCoxSurvival:
    def test_time_zero_is_one(self):
        model = fit_coxph(_cox_data(n=200, seed=2))
        assert coxph_survival(model, np.zeros(3), 0.0) == 1.0

    def test_null_model_ignores_features(self):
        model = fit_coxph(_cox_data(n=200, seed=2))
        null = CoxModel(beta=np.zeros(3),
                        baseline_times=model.baseline_times,
                        baseline_cumhaz=model.baseline_cumhaz,
                        mean=model.mean)
        s1 = coxph_survival(null, np.array([5.0, -3.0, 2.0]), 20.0)
        s2 = coxph_survival(null, np.zeros(3), 20.0)
        assert s1 == s2

    def test_monotone_and_extrapolates_last_step(self):
        model = fit_coxph(_cox_data(n=200, seed=2))
        times = np.linspace(0, 200, 50)
        s = model.survival_matrix(np.array([[0.5, 0.5, 0.5]]), times)[0]
        assert np.all(np.diff(s) <= 1e-15)
        beyond = model.baseline_times[-1] * 2
        assert coxph_survival(model, np.zeros(3), beyond) == pytest.approx(
            coxph_survival(model, np.zeros(3), float(model.baseline_times[-1]))
        )
