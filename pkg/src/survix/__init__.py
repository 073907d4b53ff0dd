"""Time-indexed Shapley interaction explanations for survival models."""

from .core import (
    InteractionExplanation,
    PredictionTarget,
    SurvivalDataset,
    TimeGrid,
    build_time_grid,
    coalition_iter,
)
from .games import (
    ConditionalGaussianImputer,
    MarginalEmpiricalImputer,
    SurvivalGame,
    ValueTable,
    conditional_gaussian_params,
    evaluate_all_coalitions,
)
from .interactions import (
    ApproximatorConfig,
    MoebiusCoefficients,
    aggregate_ksii,
    discrete_derivative,
    exact_sii,
    explain,
    moebius_transform,
)
from .metrics import (
    LocalAccuracyCurve,
    approximation_error,
    classify_time_dependence,
    concordance_index,
    integrated_brier,
    local_accuracy,
    savgol_smooth,
)
from .models import (
    CoxModel,
    GroundTruthModel,
    RiskScoreSpec,
    RiskTerm,
    cumulative_hazard,
    eval_risk_score,
    eval_target,
    fit_coxph,
    coxph_survival,
)
from .simulate import (
    FeatureSampler,
    apply_censoring,
    build_scenario,
    sample_features,
    simulate_dataset,
    simulate_event_time,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
