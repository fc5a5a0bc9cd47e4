"""Heterogeneous treatment effect estimation and testing for randomized
experiments: orthogonal scores with cross-fit nuisances, honest trees and
subsampled forests, sign-dominance and distribution-nesting bootstrap tests,
and synthetic benchmarks with known ground truth."""

from .cate import (
    CateEstimates,
    CurvePoints,
    LocalConstantModel,
    SignShares,
    TreeCvConfig,
    crossfit_cate_forest,
    fit_cate_forest,
    fit_cate_tree,
    fit_local_constant,
    predict_cate,
    sign_shares,
    smooth_cates,
)
from .data import (
    CovariateSet,
    Observation,
    PanelDataset,
    SubgroupFilter,
    apply_filter,
    load_panel_csv,
    select_covariates,
    standardized_difference,
    write_panel_csv,
)
from .errors import (
    ConfigError,
    DegenerateDistributionError,
    DegenerateGroupError,
    EmptyDatasetError,
    HetfxError,
    InsufficientDataError,
    SchemaError,
    SingularDesignError,
    UndefinedStatisticError,
    ValidationError,
)
from .inference import (
    BootstrapPlan,
    DominanceResult,
    bootstrap_ci,
    cluster_bootstrap_indices,
    dominance_battery,
    dominance_statistics,
    dominance_test,
    dominance_test_both,
    resample_dataset,
)
from .nuisance import NuisanceFit, cross_fit_nuisances
from .qte import (
    EDF,
    KsResult,
    QteCurve,
    empirical_quantiles,
    ks_distance,
    ks_nesting_test,
    positive_part,
    qte,
    simulated_distribution,
)
from .score import AteEstimate, ScoreVector, ate, orthogonal_score, unadjusted_score
from .sim import DgpConfig, GroundTruth, McCell, generate, kink_effect, ols_interaction_cate, run_monte_carlo
from .trees import ForestConfig, RegressionForest, RegressionTree, fit_regression_forest, grow_tree

__version__ = "0.1.0"

__all__ = [
    "AteEstimate",
    "BootstrapPlan",
    "CateEstimates",
    "ConfigError",
    "CovariateSet",
    "CurvePoints",
    "DegenerateDistributionError",
    "DegenerateGroupError",
    "DgpConfig",
    "DominanceResult",
    "EDF",
    "EmptyDatasetError",
    "ForestConfig",
    "GroundTruth",
    "HetfxError",
    "InsufficientDataError",
    "KsResult",
    "LocalConstantModel",
    "McCell",
    "NuisanceFit",
    "Observation",
    "PanelDataset",
    "QteCurve",
    "RegressionForest",
    "RegressionTree",
    "SchemaError",
    "ScoreVector",
    "SignShares",
    "SingularDesignError",
    "SubgroupFilter",
    "TreeCvConfig",
    "UndefinedStatisticError",
    "ValidationError",
    "apply_filter",
    "ate",
    "bootstrap_ci",
    "cluster_bootstrap_indices",
    "cross_fit_nuisances",
    "crossfit_cate_forest",
    "dominance_battery",
    "dominance_statistics",
    "dominance_test",
    "dominance_test_both",
    "empirical_quantiles",
    "fit_cate_forest",
    "fit_cate_tree",
    "fit_local_constant",
    "fit_regression_forest",
    "generate",
    "grow_tree",
    "kink_effect",
    "ks_distance",
    "ks_nesting_test",
    "load_panel_csv",
    "ols_interaction_cate",
    "orthogonal_score",
    "positive_part",
    "predict_cate",
    "qte",
    "resample_dataset",
    "run_monte_carlo",
    "select_covariates",
    "sign_shares",
    "simulated_distribution",
    "smooth_cates",
    "standardized_difference",
    "unadjusted_score",
    "write_panel_csv",
]
