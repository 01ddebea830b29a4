"""Latent-class Cox proportional-hazards modelling for survival data.

Fits finite mixtures of Cox models with covariate-driven class membership,
selects the number of classes by information criteria, validates
discrimination with cross-validated and bootstrapped time-dependent AUC,
and regenerates heterogeneous survival data from declarative path-model
scenarios.
"""

from .classmodel import MembershipParams, class_probs, fit_membership
from .coxph import (
    BaselineHazard,
    CoxFit,
    breslow_baseline,
    fit_cox,
    neg_log_partial_likelihood,
    pl_derivatives,
    predict_survival,
)
from .dataset import (
    ColumnSchema,
    Dataset,
    FoldAssignment,
    SurvivalRecord,
    bootstrap_sample,
    kfold_split,
    load_csv,
    summarize,
)
from .evaluation import (
    RocResult,
    ValidationSummary,
    bootstrap_validate,
    cross_validate,
    risk_score,
    risk_scores,
    time_dependent_auc,
)
from .mixture import (
    LatentClassFit,
    e_step,
    fit_latent_class,
    m_step,
    observation_density,
    posterior_class,
    predict_mixture_survival,
)
from .rng import derive_seed, generator
from .selection import FitStatistics, SweepResult, class_sweep, fit_statistics
from .simulation import (
    PathEdge,
    PathModelSpec,
    SimulationScenario,
    StudyResult,
    apply_censoring,
    default_scenario,
    dichotomize,
    draw_mvn,
    generate_replicate,
    implied_covariance,
    normal_to_weibull,
    run_study,
    scenario_from_json,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineHazard",
    "ColumnSchema",
    "CoxFit",
    "Dataset",
    "FitStatistics",
    "FoldAssignment",
    "LatentClassFit",
    "MembershipParams",
    "PathEdge",
    "PathModelSpec",
    "RocResult",
    "SimulationScenario",
    "StudyResult",
    "SurvivalRecord",
    "SweepResult",
    "ValidationSummary",
    "apply_censoring",
    "bootstrap_sample",
    "bootstrap_validate",
    "breslow_baseline",
    "class_probs",
    "class_sweep",
    "cross_validate",
    "default_scenario",
    "derive_seed",
    "dichotomize",
    "draw_mvn",
    "e_step",
    "fit_cox",
    "fit_latent_class",
    "fit_membership",
    "fit_statistics",
    "generate_replicate",
    "generator",
    "implied_covariance",
    "kfold_split",
    "load_csv",
    "m_step",
    "neg_log_partial_likelihood",
    "normal_to_weibull",
    "observation_density",
    "pl_derivatives",
    "posterior_class",
    "predict_mixture_survival",
    "predict_survival",
    "risk_score",
    "risk_scores",
    "run_study",
    "scenario_from_json",
    "summarize",
    "time_dependent_auc",
]
