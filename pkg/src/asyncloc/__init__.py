"""Self-localization of a passive listener in an asynchronous ranging network.

The package simulates timestamp-difference observations collected by a silent
receiver while the other nodes range among themselves, estimates all node
positions and turn-around delays jointly by an iterative MAP scheme, and
evaluates the hybrid Cramér-Rao bound the estimator is benchmarked against.
"""

__version__ = "0.1.0"

from . import errors
from .bound import BoundResult, error_ellipse, fisher_information, hybrid_crb, rmse_from_mse
from .estimate import (
    EstimateResult,
    MapLocalizer,
    PriorSpec,
    build_prior,
    default_initial_state,
    map_estimate,
    prior_weight,
)
from .model import (
    NodeSpec,
    ObservationSet,
    Scenario,
    StateVector,
    generate_sequence,
    mapping_matrix,
    noise_correlation,
    observation_structure,
    pairwise_ranges,
    predict_intervals,
)
from .simulate import TruthDraw, sample_truth, substream, synthesize_observations, validate_no_collision

__all__ = [
    "__version__",
    "errors",
    "BoundResult",
    "error_ellipse",
    "fisher_information",
    "hybrid_crb",
    "rmse_from_mse",
    "EstimateResult",
    "MapLocalizer",
    "PriorSpec",
    "build_prior",
    "default_initial_state",
    "map_estimate",
    "prior_weight",
    "NodeSpec",
    "ObservationSet",
    "Scenario",
    "StateVector",
    "generate_sequence",
    "mapping_matrix",
    "noise_correlation",
    "observation_structure",
    "pairwise_ranges",
    "predict_intervals",
    "TruthDraw",
    "sample_truth",
    "substream",
    "synthesize_observations",
    "validate_no_collision",
]
