"""Positive-P and gauge-P trajectory simulations of two-photon-driven resonator arrays.

The main entry points are re-exported here; see the submodules for the
full API.
"""

from .estimators import (
    Estimate,
    ObservableSeries,
    RegimeLabel,
    classify_regime,
    collect_series,
    multimode_observables,
    single_mode_observables,
    spike_detect,
    subensemble_error,
)
from .model import (
    GAUGE_P_CHOICE1,
    GAUGE_P_CHOICE2,
    POSITIVE_P,
    POSITIVE_P_CHOICE1,
    SCHEMES,
    Boundary,
    ContractError,
    Decomposition,
    Gauge,
    ModelParams,
    PhasePoint,
    SchemeSpec,
)
from .momentum import (
    MomentumGrid,
    cauchy_schwarz_ratio,
    g2_antipropagating,
    momentum_occupations,
    to_momentum,
)
from .oracle import (
    LindbladSystem,
    TruncationError,
    cat_state_density,
    coherent_mixture,
    evolve_rho,
    observables_from_rho,
    oracle_series,
    steady_state,
)
from .reconstruction import FockDensityMatrix, kernel_fock, reconstruct_density, trace_distance, wigner
from .sde import Ensemble, InitialState, RunConfig, initial_ensemble, run_ensemble

__version__ = "0.1.0"

__all__ = [
    "Boundary", "ContractError", "Decomposition", "Ensemble", "Estimate", "FockDensityMatrix",
    "GAUGE_P_CHOICE1", "GAUGE_P_CHOICE2", "Gauge", "InitialState", "LindbladSystem",
    "ModelParams", "MomentumGrid", "ObservableSeries", "POSITIVE_P", "POSITIVE_P_CHOICE1",
    "PhasePoint", "RegimeLabel", "RunConfig", "SCHEMES", "SchemeSpec", "TruncationError",
    "cat_state_density", "cauchy_schwarz_ratio", "classify_regime", "coherent_mixture",
    "collect_series", "evolve_rho", "g2_antipropagating", "initial_ensemble", "kernel_fock",
    "momentum_occupations", "multimode_observables", "observables_from_rho", "oracle_series",
    "reconstruct_density", "run_ensemble", "single_mode_observables", "spike_detect",
    "steady_state", "subensemble_error", "to_momentum", "trace_distance", "wigner",
]
