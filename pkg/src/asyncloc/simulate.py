"""Synthesize ground truth and timing observations for a scenario."""

from dataclasses import dataclass

import numpy as np

from .model import (
    ObservationSet,
    Scenario,
    StateVector,
    observation_structure,
    pairwise_ranges,
    predict_intervals,
)
from .numerics import sample_correlated_gaussian


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent, reproducible generator for (master seed, index...) keys."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass(frozen=True)
class TruthDraw:
    """One realization of all node positions, delays, and the noise level."""

    state: StateVector
    sigma: float


def sample_truth(scenario: Scenario, rng: np.random.Generator) -> TruthDraw:
    """Draw a ground-truth realization.

    Anchor positions are drawn from their isotropic Gaussian priors (in node
    id order), non-anchor positions come from the configured truth, and all
    turn-around delays are drawn i.i.d. from the delay prior. ``sigma_delta``
    or an anchor sigma of zero degenerates to an exact draw at the mean.
    """
    positions = np.empty((scenario.n_nodes, scenario.dim))
    for spec in scenario.nodes:
        if spec.role == "anchor":
            positions[spec.node_id - 1] = spec.prior_mean + spec.prior_sigma * rng.standard_normal(scenario.dim)
        else:
            positions[spec.node_id - 1] = spec.truth
    delays = scenario.mu_delta + scenario.sigma_delta * rng.standard_normal(scenario.n_nodes - 1)
    return TruthDraw(StateVector.from_parts(positions, delays), scenario.sigma)


def validate_no_collision(truth: TruthDraw, scenario: Scenario) -> bool:
    """True if every turn-around delay exceeds the worst transceiver flight time.

    A responding node must stay silent until the previous signal has cleared
    the whole network, i.e. each delay must exceed (max transceiver range)/c.
    """
    n = scenario.n_nodes
    ranges = pairwise_ranges(truth.state.positions[: n - 1])
    if ranges.size == 0:
        return True
    return bool(truth.state.delays.min() > ranges.max() / scenario.c)


def synthesize_observations(
    truth: TruthDraw,
    scenario: Scenario,
    rng: np.random.Generator,
    structure=None,
) -> ObservationSet:
    """Noise-free intervals plus one correlated Gaussian noise draw.

    ``structure`` may carry a precomputed ``observation_structure(scenario)``
    tuple; it is rebuilt otherwise. With ``sigma == 0`` the returned
    observations are exactly the predicted intervals.
    """
    if structure is None:
        structure = observation_structure(scenario)
    mapping, correlation, factor = structure
    clean = predict_intervals(truth.state, mapping, scenario.c)
    noise = sample_correlated_gaussian(factor, truth.sigma, rng)
    return ObservationSet(
        y=clean + noise,
        mapping=mapping,
        correlation=correlation,
        sequence=scenario.sequence,
        c=scenario.c,
        n_nodes=scenario.n_nodes,
        dim=scenario.dim,
        _factor=factor,
    )
