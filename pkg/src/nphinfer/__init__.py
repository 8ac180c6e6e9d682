"""Simultaneous inference for multiple characteristics of two survival functions.

Estimates milestone survival, survival quantiles, restricted mean survival
time, an average hazard ratio, the logrank score and the Cox log hazard
ratio on two-sample right-censored data; builds their joint covariance via
the counting-process representation (or perturbation resampling); and
provides max-type multiplicity-adjusted tests, closed testing and
simultaneous confidence intervals, plus a trial simulation harness.
"""

from .errors import (
    DegenerateHazard,
    DegenerateTransform,
    DegenerateVariance,
    EmptyGroup,
    HorizonBeyondData,
    InvalidCorrelation,
    InvalidRecord,
    NonconvergentFit,
    NphInferError,
    PerturbationFailure,
    QuantileUndefined,
    TooManyParameters,
    UnknownScenario,
)
from .survdata import (
    HazardCurve,
    RiskTable,
    SubjectRecord,
    SurvivalSample,
    build_risk_table,
    local_hazard,
    nelson_aalen,
    quantile_estimate,
)
from .estimators import (
    EstimateVector,
    InfluenceIngredients,
    Kind,
    ParameterSpec,
    estimate_vector,
)
from .covariance import (
    CovarianceMatrix,
    asymptotic_covariance,
    perturbation_covariance,
)
from .inference import (
    InferenceReport,
    TestStatistics,
    build_test_statistics,
    closed_test,
    mvn_max_tail,
    run_inference,
    simultaneous_ci,
    single_step,
)
from .pipeline import analyze_records, analyze_two_samples, split_groups
from .simulate import (
    Exponential,
    LogNormal,
    MultiState,
    ReplicationSummary,
    ScenarioConfig,
    Weibull,
    parameter_set,
    run_study,
    scenario_preset,
    simulate_trial,
    true_parameter_value,
)

__version__ = "0.1.0"
