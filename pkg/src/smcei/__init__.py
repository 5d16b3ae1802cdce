"""Bayesian optimization by expected improvement with a sequential Monte
Carlo posterior over the Gaussian-process hyperparameters."""

from .candidates import (
    CandidateGrid,
    TreeConfig,
    TreeHistogram,
    demarginalize,
    fit_tree_histogram,
    histogram_density,
    histogram_sample,
)
from .criteria import averaged_ei, exceedance_probability, expected_improvement
from .errors import (
    AllWeightsZero,
    DegenerateCloud,
    DegenerateData,
    DofTooLow,
    EmptySample,
    ExhaustedCandidates,
    FactorizationFailure,
    OutOfDomain,
    SmcEiError,
)
from .gp import (
    Domain,
    EvaluationHistory,
    HyperParameters,
    PredictiveDistribution,
    correlation_matrix,
    integrated_log_likelihood,
    matern52_correlation,
    predictive,
    scaled_distance,
)
from .optimizer import (
    OptimizerConfig,
    ReferenceEiOptimizer,
    RunTrace,
    SmcEiOptimizer,
    TraceRecord,
    default_n_initial,
    ml_estimate,
    run_reference_ei,
    run_smc_ei,
)
from .smc import (
    MoveResult,
    ParticleSet,
    PriorSpec,
    effective_sample_size,
    init_particles,
    move,
    multinomial_resample,
    reweight,
)
from .testbed import TEST_FUNCTIONS, TestFunction, branin_max, hartmann6_logmax, maximin_lhs, split_stream

__version__ = "0.1.0"
