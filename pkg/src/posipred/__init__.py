"""Simultaneous confidence intervals for post-model-selection predictors.

The package computes the multipliers that replace the fixed-model t-quantile
in a prediction interval so that coverage holds simultaneously over every
model a selector might pick, builds the resulting intervals, and provides a
seed-deterministic harness for studying their lengths and minimal coverage.
"""

__version__ = "0.1.0"

from .constants import (  # noqa: E402
    BOTH,
    ConstantEstimate,
    K2SearchConfig,
    LOWER,
    McConfig,
    UPPER,
    default_draws,
    draw_shared_sphere,
    k1,
    k2,
    k3,
    k4,
    k5,
    k6,
    k_naive,
)
from .design import (  # noqa: E402
    CanonicalDesign,
    DesignProblem,
    ModelUniverse,
    canonicalize,
    count_not_subset,
    enumerate_universe,
    full_model,
    make_universe,
    model_from_indices,
    model_indices,
    model_size,
    restricted_ols,
    s_vector,
)
from .inference import (  # noqa: E402
    DESIGN_DEPENDENT,
    DESIGN_INDEPENDENT,
    PredictionInterval,
    TargetSpec,
    beta_target_n,
    beta_target_star,
    build_interval,
    covers,
)
from .numerics import (  # noqa: E402
    INFINITE,
    CdfHandle,
    ConvergenceError,
    PrecisionLossError,
    RngStream,
    beta_half_cdf,
    fsharp_cdf,
    invert_monotone,
    reg_incomplete_beta,
    sample_unit_sphere,
    student_t_quantile,
)
from .selectors import (  # noqa: E402
    SelectorSpec,
    aic_spec,
    bic_spec,
    lasso_cd,
    select_greedy_ic,
    select_lasso,
    select_model,
    sigma_hat_full,
    sigma_hat_pms,
)
from .simharness import (  # noqa: E402
    CoverageEngine,
    CoverageSearchConfig,
    SigmaFamily,
    SimulationReport,
    coverage_at,
    gen_design,
    length_study,
    minimal_coverage_search,
)
