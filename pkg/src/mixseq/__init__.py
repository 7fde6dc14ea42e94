"""Sequential design of computer experiments with mixed quantitative and qualitative inputs."""

from .acquisition import (
    AcquisitionConfig,
    RegionBounds,
    Sense,
    Strategy,
    adaptive_region,
    beta,
    cee_score,
    confidence_bounds,
    ei_score,
    score,
    select,
)
from .campaign import Campaign, CampaignConfig, FitConfig, run_campaign, run_ra
from .design import (
    CandidateSet,
    InitialDesignSpec,
    QualitativePlan,
    candidate_pool,
    fractional_factorial_3level,
    full_factorial,
    initial_design,
    random_lhd,
)
from .exceptions import (
    FitFailureError,
    InvalidArgumentError,
    MixseqError,
    NumericalFailureError,
    PersistenceError,
    ProtocolError,
)
from .gp import AGPRegressor, PredictiveDist, neg_log_likelihood
from .kernels import (
    DomainSpec,
    KernelParams,
    MixedPoint,
    QualitativeSpace,
    cov_matrix,
    cross_cov,
    gauss_corr,
    hypersphere_cholesky,
    hypersphere_to_corr,
    n_free_params,
)

__version__ = "0.1.0"
