"""Design-based total estimation with GREG calibration and minimum-variance re-calibration."""

from .covariance import CovEstimate, ExactCov, cov_exact, cov_hat, recommended_c
from .design import (
    SRSWOR,
    Census,
    ClusterSRSWOR,
    ClusterWithReplacement,
    Design,
    NestedSample,
    NestedSupersample,
    Sample,
    StratifiedSRSWOR,
    draw_nested,
    draw_sample,
    enumerate_samples,
    parse_design,
    pi_first,
    pi_joint,
)
from .estimators import (
    BetaEstimate,
    TotalsEstimate,
    WeightSet,
    beta_o_hat,
    beta_o_true,
    delta_estimate,
    fixed_beta_estimate,
    greg_beta_hat,
    greg_estimate,
    greg_weights,
    ht_total,
    ols_beta_population,
    optimal_estimate,
    optimal_weights,
    two_sample_estimate,
)
from .population import (
    Population,
    SuperpopSpec,
    Unit,
    generate_example1,
    generate_example2,
    generate_example3,
    load_population,
)

__version__ = "0.1.0"
