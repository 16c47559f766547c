"""Batch factor-graph GNSS pseudorange estimation with interchangeable
robust optimization schemes, a synthetic scenario simulator, and a
fault-sweep evaluation harness."""

from .errors import RobustGnssError
from .estimator import (
    BetweenOptions,
    EstimationResult,
    EstimatorOptions,
    solve_observations,
)
from .evaluate import ErrorStats, SweepResult, error_stats, fault_sweep, rsos_series
from .gnss import (
    DualFreqObservation,
    PseudorangeObservation,
    SatelliteContext,
    elevation_angle,
    iono_free,
    predict_pseudorange,
    pseudorange_jacobian,
    pseudorange_whitened_error,
    read_observations,
    tropo_mapping,
    write_observations,
)
from .graph import (
    EpochState,
    Factor,
    FactorGraph,
    FactorKind,
    SolveResult,
    SolverConfig,
    StateSeries,
    VariableKey,
    VariableKind,
    between_factor,
    between_factor_error,
    evaluate_factor,
    pseudorange_factor,
    prior_factor,
    solve_lm,
    state_key,
    switch_key,
    switch_prior_factor,
)
from .kernels import (
    KernelEvaluation,
    MaxMixSelection,
    MixtureComponent,
    RobustConfig,
    Scheme,
    augment_with_switches,
    cauchy,
    dcs_scale,
    huber,
    maxmix_evaluate,
)
from .simulate import (
    ClockModel,
    FaultSpec,
    SatelliteSpec,
    ScenarioSpec,
    TrajectorySpec,
    default_constellation,
    generate_truth,
    inject_faults,
    synthesize_observations,
)

__version__ = "0.1.0"
