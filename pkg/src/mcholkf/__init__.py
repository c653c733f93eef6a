"""Parallel ensemble Kalman filtering with sparse modified-Cholesky
precision estimation on decomposed grids."""

from .driver import (
    METHODS,
    AssimilationConfig,
    CycleReport,
    FilterResult,
    assimilate_parallel,
    merge_interiors,
    propagate_ensemble,
    run_filter,
)
from .errors import (
    CapacityError,
    ConfigurationError,
    ConsistencyError,
    DivergenceError,
    NumericalError,
)
from .estimator import ModifiedCholeskyPrecision, fit_factors, regression_solve
from .factors import PrecisionFactors, dump_factors
from .geometry import (
    GridGeometry,
    LocalBox,
    Subdomain,
    decompose,
    grid_coords,
    linear_index,
    local_box,
    nominal_local_size,
    predecessors,
)
from .harness import (
    ExperimentConfig,
    RmseSeries,
    build_observation_network,
    load_config,
    rmse,
    run_sweep,
    run_twin_experiment,
    spin_up,
)
from .kernels import (
    EnsembleState,
    ObservationNetwork,
    PerturbedObservations,
    analysis_dual,
    analysis_primal,
    letkf_analysis_global,
    letkf_analysis_point,
    perturb_observations,
    restrict_network,
)
from .models import (
    ModelHandle,
    advdiff2d_model,
    identity_model,
    lorenz96_model,
    propagate,
)

__version__ = "0.1.0"

__all__ = [
    "AssimilationConfig",
    "CapacityError",
    "ConfigurationError",
    "ConsistencyError",
    "CycleReport",
    "DivergenceError",
    "EnsembleState",
    "ExperimentConfig",
    "FilterResult",
    "GridGeometry",
    "LocalBox",
    "METHODS",
    "ModelHandle",
    "ModifiedCholeskyPrecision",
    "NumericalError",
    "ObservationNetwork",
    "PerturbedObservations",
    "PrecisionFactors",
    "RmseSeries",
    "Subdomain",
    "advdiff2d_model",
    "analysis_dual",
    "analysis_primal",
    "assimilate_parallel",
    "build_observation_network",
    "decompose",
    "dump_factors",
    "fit_factors",
    "grid_coords",
    "identity_model",
    "letkf_analysis_global",
    "letkf_analysis_point",
    "linear_index",
    "load_config",
    "local_box",
    "lorenz96_model",
    "merge_interiors",
    "nominal_local_size",
    "perturb_observations",
    "predecessors",
    "propagate",
    "propagate_ensemble",
    "regression_solve",
    "restrict_network",
    "rmse",
    "run_filter",
    "run_sweep",
    "run_twin_experiment",
    "spin_up",
]
