"""Survivor average causal effect estimation with MNAR outcomes.

Estimates the average treatment effect among always-survivors when the
outcome is truncated by death and, among survivors, missing not at
random. Provides the three-stage parametric estimator, complete-case
and unadjusted comparators, sensitivity analysis in the missingness
offset, sharp nonparametric bounds, and a Monte Carlo study harness.
"""

from .bounds import (
    BoundsResult,
    CellTable,
    EmptyArm,
    EmptyArmInCell,
    adjusted_bounds,
    bound_endpoints,
    bounds_with_ci,
    build_cells,
    unadjusted_bounds,
)
from .data import (
    Dataset,
    ObservationRecord,
    SchemaError,
    Stratum,
    cell_summary,
    from_frame,
    read_csv,
    validate,
    write_csv,
)
from .estimators import (
    BoundsEstimator,
    IgnoreMnarEstimator,
    NaiveEstimator,
    NotFittedError,
    SaceEstimator,
    as_dataset,
)
from .missingness import MissingnessParams, fit_missingness, propensity
from .numerics import (
    DegenerateLikelihood,
    InexactRootWarning,
    NonConvergence,
    SingularJacobian,
    SolverConfig,
    expit,
    logit,
    maximize_loglik,
    numerical_gradient,
    numerical_jacobian,
    seeded_stream,
    solve_moments,
    solve_with_restarts,
    solve_with_selection,
    substream_seed,
)
from .outcomes import OutcomeParams, UnsupportedStratumArm, fit_control_outcome, fit_treated_outcomes, mu
from .sace import (
    EmptyCell,
    EstimationConfig,
    FitReport,
    PipelineStageError,
    TooFewReplicates,
    bootstrap_ci,
    estimate_sace,
    fit_components,
    ignore_mnar_estimate,
    naive_estimate,
    plugin_sace,
    rank_condition_diagnostic,
    sensitivity_curve,
)
from .simulate import (
    DgpSpec,
    StudyResult,
    TooManyFailures,
    bounds_study,
    generate,
    monte_carlo_study,
    true_sace,
)
from .strata import (
    StrataParams,
    StrataProbabilities,
    fit_strata,
    membership_given_survival,
    monotonicity_diagnostic,
    relevance_diagnostic,
    strata_probs,
)

__version__ = "0.1.0"

__all__ = [
    "BoundsEstimator",
    "BoundsResult",
    "CellTable",
    "Dataset",
    "DegenerateLikelihood",
    "DgpSpec",
    "EmptyArm",
    "EmptyArmInCell",
    "EmptyCell",
    "EstimationConfig",
    "FitReport",
    "IgnoreMnarEstimator",
    "InexactRootWarning",
    "MissingnessParams",
    "NaiveEstimator",
    "NonConvergence",
    "NotFittedError",
    "ObservationRecord",
    "OutcomeParams",
    "PipelineStageError",
    "SaceEstimator",
    "SchemaError",
    "SingularJacobian",
    "SolverConfig",
    "StrataParams",
    "StrataProbabilities",
    "Stratum",
    "StudyResult",
    "TooFewReplicates",
    "TooManyFailures",
    "UnsupportedStratumArm",
    "adjusted_bounds",
    "as_dataset",
    "bootstrap_ci",
    "bound_endpoints",
    "bounds_study",
    "bounds_with_ci",
    "build_cells",
    "cell_summary",
    "estimate_sace",
    "expit",
    "fit_components",
    "fit_control_outcome",
    "fit_missingness",
    "fit_strata",
    "fit_treated_outcomes",
    "from_frame",
    "generate",
    "ignore_mnar_estimate",
    "logit",
    "maximize_loglik",
    "membership_given_survival",
    "monotonicity_diagnostic",
    "monte_carlo_study",
    "mu",
    "naive_estimate",
    "numerical_gradient",
    "numerical_jacobian",
    "plugin_sace",
    "propensity",
    "rank_condition_diagnostic",
    "read_csv",
    "relevance_diagnostic",
    "seeded_stream",
    "sensitivity_curve",
    "solve_moments",
    "solve_with_restarts",
    "solve_with_selection",
    "strata_probs",
    "substream_seed",
    "true_sace",
    "unadjusted_bounds",
    "validate",
    "write_csv",
]
