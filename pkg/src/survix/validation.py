"""Empirical validation suites for the decomposition theory, plus the
approximator budget benchmark.

Each suite returns a list of named checks with measured values so both the
command-line `validate` subcommand and the acceptance tests can share one
implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .core import PredictionTarget, TimeGrid, build_time_grid
from .games import (
    ConditionalGaussianImputer,
    MarginalEmpiricalImputer,
    SurvivalGame,
    evaluate_all_coalitions,
)
from .interactions import (
    ApproximatorConfig,
    aggregate_ksii,
    exact_ksii,
    exact_sii,
    explain,
    moebius_transform,
    reconstruct_from_moebius,
)
from .metrics import approximation_error, classify_time_dependence
from .models import GroundTruthModel, RiskScoreSpec, RiskTerm
from .simulate import (
    LAMBDA,
    T_MAX,
    build_scenario,
    dep_demo_covariance,
    ground_truth_partition,
    sample_features,
    simulate_dataset,
)

# the observation explained throughout the simulated experiments
X_STAR = np.array([-1.2650, 2.4162, -0.6436])

DEFAULT_GRID_POINTS = 41
CLASSIFY_TOL = 1e-6


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.suite}/{self.name}: value={self.value:.3e} "
                f"threshold={self.threshold:.3e} {self.detail}")


def _exact_explanation(scenario, target: PredictionTarget, order: int,
                       seed: int, rho: float = 0.0,
                       n: int = 1000, x=X_STAR):
    model = build_scenario(scenario)
    data, _ = simulate_dataset(scenario, n=n, seed=seed, rho=rho)
    grid = build_time_grid(T_MAX, DEFAULT_GRID_POINTS)
    imputer = MarginalEmpiricalImputer(data.features)
    expl = explain(model.prediction_function(target), x, imputer, grid,
                   order, target)
    prediction = model.predict(np.asarray(x)[None, :], grid.points, target)[0]
    residual = float(np.max(np.abs(prediction - expl.attribution_sum())))
    return expl, residual


def _variation(curve: np.ndarray) -> float:
    return float(np.max(np.abs(curve - curve.mean())))


# ---------------------------------------------------------------------------
# suite: recovery of the ground-truth time-dependence partition (linear /
# additive risk scores on the log-hazard scale)
# ---------------------------------------------------------------------------

def suite_thm1(seed: int = 7, tol: float = CLASSIFY_TOL) -> List[CheckResult]:
    out = []
    for scenario in (1, 2, 6, 7):
        expl, residual = _exact_explanation(scenario, PredictionTarget.LOG_HAZARD,
                                            order=3, seed=seed)
        dependent, _ = classify_time_dependence(expl, tol=tol)
        truth = ground_truth_partition(scenario)
        mismatch = dependent.symmetric_difference(truth)
        worst = max(
            (_variation(expl.values[key]) for key in expl.values), default=0.0
        )
        out.append(CheckResult(
            suite="thm1", name=f"scenario{scenario}_partition",
            passed=not mismatch, value=float(len(mismatch)), threshold=0.0,
            detail=f"recovered={sorted(dependent)} truth={sorted(truth)} "
                   f"max_variation={worst:.2e} efficiency={residual:.2e}",
        ))
    return out


# ---------------------------------------------------------------------------
# suite: downward but no upward propagation of a time-dependent interaction
# on the log-hazard scale
# ---------------------------------------------------------------------------

def suite_thm2(seed: int = 7, tol: float = CLASSIFY_TOL) -> List[CheckResult]:
    out = []
    expl, _ = _exact_explanation(10, PredictionTarget.LOG_HAZARD, order=3,
                                 seed=seed)
    dependent, independent = classify_time_dependence(expl, tol=tol)
    out.append(CheckResult(
        suite="thm2", name="scenario10_downward_x1",
        passed=(0,) in dependent, value=_variation(expl.values[(0,)]),
        threshold=tol, detail="lower-order set inherits time variation",
    ))
    out.append(CheckResult(
        suite="thm2", name="scenario10_no_upward_x123",
        passed=(0, 1, 2) in independent,
        value=_variation(expl.values[(0, 1, 2)]), threshold=tol,
        detail="full-order set stays time-constant",
    ))
    expl5, _ = _exact_explanation(5, PredictionTarget.LOG_HAZARD, order=3,
                                  seed=seed)
    dep5, _ = classify_time_dependence(expl5, tol=tol)
    hit = (0,) in dep5 or (2,) in dep5
    out.append(CheckResult(
        suite="thm2", name="scenario5_downward_main",
        passed=hit,
        value=max(_variation(expl5.values[(0,)]), _variation(expl5.values[(2,)])),
        threshold=tol, detail="x1 and/or x3 pick up the interaction's variation",
    ))
    return out


# ---------------------------------------------------------------------------
# suite: transformation-induced interactions and time variation on the
# hazard / survival scales
# ---------------------------------------------------------------------------

def suite_cor1(seed: int = 7) -> List[CheckResult]:
    out = []
    for target in (PredictionTarget.HAZARD, PredictionTarget.SURVIVAL):
        expl, residual = _exact_explanation(1, target, order=2, seed=seed)
        floor = max(residual, 1e-12)
        pair_max = max(
            float(np.max(np.abs(expl.values[key])))
            for key in expl.values if len(key) == 2
        )
        out.append(CheckResult(
            suite="cor1", name=f"scenario1_{target.value}_pairwise_nonzero",
            passed=pair_max > 10 * floor, value=pair_max, threshold=10 * floor,
            detail="linear risk score still yields pairwise effects "
                   f"(noise floor {floor:.2e})",
        ))
    # a time-dependent main effect spreads time variation onto subsets that
    # are time-independent in the risk score (hazard scale) ...
    expl4, residual4 = _exact_explanation(4, PredictionTarget.HAZARD, order=2,
                                          seed=seed)
    floor4 = max(residual4, 1e-12)
    ti_sets = [(1,), (2,), (0, 2)]
    spread = max(_variation(expl4.values[key]) for key in ti_sets)
    out.append(CheckResult(
        suite="cor1", name="scenario4_hazard_ti_sets_vary",
        passed=spread > 10 * floor4, value=spread, threshold=10 * floor4,
        detail=f"max variation over {ti_sets}",
    ))
    # ... and on the survival scale every attribution varies even when the
    # risk score is fully time-independent (the hazard scale stays constant
    # there, so the survival function carries this check for scenario 8)
    expl8, residual8 = _exact_explanation(8, PredictionTarget.SURVIVAL, order=2,
                                          seed=seed)
    floor8 = max(residual8, 1e-12)
    spread8 = min(
        _variation(expl8.values[key]) for key in [(0,), (1,), (2,), (0, 1)]
    )
    out.append(CheckResult(
        suite="cor1", name="scenario8_survival_ti_sets_vary",
        passed=spread8 > 10 * floor8, value=spread8, threshold=10 * floor8,
        detail="time-independent risk score, time-varying survival attributions",
    ))
    return out


# ---------------------------------------------------------------------------
# suite: marginal vs conditional attribution of a correlated inert feature
# ---------------------------------------------------------------------------

def suite_thm5(seed: int = 7, n_repeats: int = 5,
               n_samples: int = 1000) -> List[CheckResult]:
    out = []
    model = build_scenario("dep_demo")
    target = PredictionTarget.LOG_HAZARD
    data, _ = simulate_dataset("dep_demo", n=1000, seed=seed)
    grid = build_time_grid(T_MAX, DEFAULT_GRID_POINTS)

    marg = explain(model.prediction_function(target), X_STAR,
                   MarginalEmpiricalImputer(data.features), grid, 2, target)
    inert_max = max(
        float(np.max(np.abs(curve)))
        for key, curve in marg.values.items() if 2 in key
    )
    out.append(CheckResult(
        suite="thm5", name="marginal_inert_feature_zero",
        passed=inert_max <= 1e-10, value=inert_max, threshold=1e-10,
        detail="x3 has no effect in the risk score, so marginal attributions vanish",
    ))

    cov = dep_demo_covariance()
    curves = []
    for r in range(n_repeats):
        imp = ConditionalGaussianImputer(np.zeros(3), cov,
                                         n_samples=n_samples,
                                         seed=seed + 1000 + r)
        cond = explain(model.prediction_function(target), X_STAR, imp, grid,
                       2, target)
        curves.append(cond.values[(2,)])
    curves = np.vstack(curves)
    mean_curve = curves.mean(axis=0)
    se_curve = curves.std(axis=0, ddof=1) / math.sqrt(n_repeats)
    peak = int(np.argmax(np.abs(mean_curve)))
    out.append(CheckResult(
        suite="thm5", name="conditional_inert_feature_nonzero",
        passed=abs(mean_curve[peak]) > 3 * se_curve[peak],
        value=float(abs(mean_curve[peak])), threshold=float(3 * se_curve[peak]),
        detail=f"peak |phi| at t={grid.points[peak]:.1f}",
    ))
    hi, lo = int(np.argmax(mean_curve)), int(np.argmin(mean_curve))
    spread = float(mean_curve[hi] - mean_curve[lo])
    spread_se = float(np.hypot(se_curve[hi], se_curve[lo]))
    out.append(CheckResult(
        suite="thm5", name="conditional_inert_feature_time_varying",
        passed=spread > 3 * spread_se, value=spread, threshold=3 * spread_se,
        detail="correlation with the time-dependent feature induces variation",
    ))
    return out


# ---------------------------------------------------------------------------
# suite: algebraic identities on random games
# ---------------------------------------------------------------------------

def _random_table(p: int, T: int, rng) -> "ValueTable":
    from .games import ValueTable

    grid = build_time_grid(float(T), T)
    values = rng.standard_normal((1 << p, T))
    values[0] = 0.0
    return ValueTable(p=p, grid=grid, masks=range(1 << p), values=values)


def _permutation_shapley(table, p: int) -> Dict[int, np.ndarray]:
    import itertools

    out = {1 << j: np.zeros(len(table.grid)) for j in range(p)}
    perms = list(itertools.permutations(range(p)))
    for perm in perms:
        mask = 0
        for j in perm:
            out[1 << j] += table.lookup(mask | (1 << j)) - table.lookup(mask)
            mask |= 1 << j
    return {k: v / len(perms) for k, v in out.items()}


def suite_identities(seed: int = 7, n_games: int = 50) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_full = worst_shap = worst_recon = worst_eff = 0.0
    for g in range(n_games):
        p = int(rng.integers(2, 7))
        table = _random_table(p, T=3, rng=rng)
        mo = moebius_transform(table)
        full_order = exact_ksii(table, p)
        worst_full = max(worst_full, max(
            float(np.max(np.abs(full_order[mask] - mo.lookup(mask))))
            for mask in full_order
        ))
        recon = reconstruct_from_moebius(mo)
        worst_recon = max(worst_recon, float(np.max(np.abs(
            recon - table.values
        ))))
        if p <= 4:
            shap = _permutation_shapley(table, p)
            order1 = exact_ksii(table, 1)
            worst_shap = max(worst_shap, max(
                float(np.max(np.abs(order1[mask] - shap[mask])))
                for mask in shap
            ))
        for k in range(1, p + 1):
            ksii = exact_ksii(table, k)
            resid = sum(ksii.values()) - table.lookup((1 << p) - 1)
            worst_eff = max(worst_eff, float(np.max(np.abs(resid))))
    return [
        CheckResult("identities", "full_order_equals_moebius",
                    worst_full <= 1e-12, worst_full, 1e-12,
                    f"{n_games} random games, p<=6"),
        CheckResult("identities", "order1_equals_permutation_shapley",
                    worst_shap <= 1e-10, worst_shap, 1e-10, "p<=4"),
        CheckResult("identities", "moebius_reconstruction",
                    worst_recon <= 1e-10, worst_recon, 1e-10, ""),
        CheckResult("identities", "efficiency_every_order",
                    worst_eff <= 1e-9, worst_eff, 1e-9, ""),
    ]


SUITES = {
    "thm1": suite_thm1,
    "thm2": suite_thm2,
    "cor1": suite_cor1,
    "thm5": suite_thm5,
    "identities": suite_identities,
}


def run_suites(names: Iterable[str] | None = None, seed: int = 7,
               **kwargs) -> List[CheckResult]:
    names = list(names) if names else list(SUITES)
    results = []
    for name in names:
        if name not in SUITES:
            raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
        results.extend(SUITES[name](seed=seed, **kwargs))
    return results


# ---------------------------------------------------------------------------
# approximator budget benchmark
# ---------------------------------------------------------------------------

def benchmark_model(p: int = 10) -> GroundTruthModel:
    """Scenario-8 risk score embedded into a larger feature space; the added
    features are inert, so their exact attributions are known to be zero."""
    base = build_scenario(8)
    return GroundTruthModel(lam=LAMBDA,
                            risk=RiskScoreSpec(p=p, terms=base.risk.terms))


def benchmark_game(seed: int = 7, p: int = 10, n_background: int = 100,
                   n_timepoints: int = 11,
                   target: PredictionTarget = PredictionTarget.HAZARD):
    """Fixed ground-truth game used for the error-vs-budget comparison.

    The hazard scale makes the game genuinely non-additive at every order, so
    estimators face both bias and variance.
    """
    from .simulate import FeatureSampler

    model = benchmark_model(p)
    sampler = FeatureSampler.standard(p, seed=seed)
    features = sample_features(sampler, n_background + 1)
    x = features[0]
    background = features[1:]
    grid = build_time_grid(T_MAX, n_timepoints)
    game = SurvivalGame(model.prediction_function(target), x,
                        MarginalEmpiricalImputer(background), grid)
    return game, model


def run_benchmark(seed: int = 7, budgets: Sequence[int] = (64, 128, 256, 512),
                  repetitions: int = 30,
                  methods: Sequence[str] = ("mc", "permutation", "regression"),
                  order: int = 2, p: int = 10,
                  n_timepoints: int = 11, threads: int = 1) -> List[dict]:
    """Per (method, budget, repetition) mean squared error against the exact
    decomposition of one fixed game."""
    import warnings as _warnings
    from concurrent.futures import ThreadPoolExecutor

    from . import approximators

    if p > 16:
        raise ValueError("the exact oracle is restricted to p <= 16")
    if max(budgets) > (1 << p):
        raise ValueError("budget exceeds full enumeration")
    game, _ = benchmark_game(seed=seed, p=p, n_timepoints=n_timepoints)
    table = evaluate_all_coalitions(game)
    exact = exact_ksii(table, order)
    runners = {
        "mc": approximators.approx_montecarlo,
        "permutation": approximators.approx_permutation,
        "regression": approximators.approx_regression,
    }
    jobs = [
        (method, budget, rep)
        for method in methods for budget in budgets for rep in range(repetitions)
    ]

    def one(job):
        method, budget, rep = job
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore", RuntimeWarning)
            est, info = runners[method](game, order, budget,
                                        seed=seed + 7919 * rep)
        sq = 0.0
        count = 0
        for mask, curve in exact.items():
            diff = est[mask] - curve
            sq += float(np.sum(diff ** 2))
            count += diff.size
        return {
            "method": method,
            "budget": int(budget),
            "run": int(rep),
            "mse": sq / count,
            "unstable": bool(info.get("unstable", False)),
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, jobs))
    return [one(job) for job in jobs]
