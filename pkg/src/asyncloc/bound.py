"""Hybrid Cramer-Rao bound for joint position/delay/noise-level estimation.

The full parameter stacks the state vector (positions and delays) with the
noise variance as a final entry. The data block of the information matrix
is averaged over draws of the random parameters (anchor positions from
their priors, delays from the delay prior) while unknown positions and the
noise level stay fixed at the configured truth; adding the prior
information block and inverting yields a lower bound on the covariance of
any estimator of the combined parameter vector.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.stats import chi2

from .errors import NotPositiveDefinite, SingularInformation
from .estimate import PriorSpec, build_prior
from .model import (
    Scenario,
    StateVector,
    observation_structure,
    position_slice,
    range_delay_jacobian,
)
from .numerics import CholeskyFactor, invert_spd, spd_solve
from .simulate import sample_truth
from .validation import as_float_array


@dataclass(frozen=True)
class FullParam:
    """State vector plus the timing-noise variance (the bounded parameter)."""

    state: StateVector
    sigma2: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.state.vector, [self.sigma2]])


@dataclass(frozen=True)
class BoundResult:
    """Hybrid information matrix, its inverse, and convenient block views."""

    information: np.ndarray
    covariance_bound: np.ndarray
    position_blocks: Tuple[np.ndarray, ...]
    delay_block: np.ndarray
    sigma2_var_bound: float
    mc_samples: int


def fisher_information(
    param: FullParam,
    mapping: np.ndarray,
    factor: CholeskyFactor,
    c: float,
) -> np.ndarray:
    """Data information matrix at one parameter value.

    The state block is ``(1/sigma2) * B.T W B`` with ``B`` the Jacobian of
    the predicted intervals and W the inverse noise correlation; the noise
    variance contributes ``n_obs / (2 sigma2^2)`` on its own diagonal with
    zero cross terms.
    """
    if param.sigma2 <= 0:
        raise ValueError(f"sigma2 must be > 0, got {param.sigma2}")
    design = mapping @ range_delay_jacobian(param.state) / c
    weighted = spd_solve(factor, design)
    size = design.shape[1]
    info = np.zeros((size + 1, size + 1))
    info[:size, :size] = design.T @ weighted / param.sigma2
    info[size, size] = mapping.shape[0] / (2.0 * param.sigma2**2)
    return info


def prior_information(scenario: Scenario, prior: Optional[PriorSpec] = None) -> np.ndarray:
    """Prior information block, zero-padded for the noise-variance entry.

    Only informative priors contribute: anchor position blocks and the
    delay block. Unknown positions and the noise level carry zeros.
    """
    if prior is None:
        prior = build_prior(scenario)
    size = prior.precision.shape[0]
    info = np.zeros((size + 1, size + 1))
    info[:size, :size] = prior.precision
    return info


def nominal_truth(scenario: Scenario) -> StateVector:
    """Truth with anchors at their prior means and delays at the mean delay."""
    positions = np.empty((scenario.n_nodes, scenario.dim))
    for spec in scenario.nodes:
        positions[spec.node_id - 1] = (
            spec.prior_mean if spec.role == "anchor" else spec.truth
        )
    delays = np.full(scenario.n_nodes - 1, scenario.mu_delta)
    return StateVector.from_parts(positions, delays)


def hybrid_crb(
    scenario: Scenario,
    prior: Optional[PriorSpec] = None,
    mc_samples: int = 1000,
    rng: Optional[np.random.Generator] = None,
    draw_random: bool = True,
) -> BoundResult:
    """Hybrid Cramer-Rao bound for a scenario.

    Averages the data information over ``mc_samples`` draws of the random
    parameters and adds the prior information. With ``draw_random=False``
    the expectation degenerates to a single evaluation at the nominal truth
    (anchors at prior means), which is the deterministic bound; the sample
    count is then irrelevant.

    Raises:
        SingularInformation: if the hybrid matrix fails factorization,
            e.g. when too few informative priors pin down the frame.
    """
    if prior is None:
        prior = build_prior(scenario)
    mapping, _, factor = observation_structure(scenario)
    sigma2 = scenario.sigma**2

    if draw_random:
        if mc_samples < 1:
            raise ValueError(f"mc_samples must be >= 1, got {mc_samples}")
        if rng is None:
            rng = np.random.default_rng(0)
        data_info = np.zeros((scenario.state_size + 1, scenario.state_size + 1))
        for _ in range(mc_samples):
            truth = sample_truth(scenario, rng)
            data_info += fisher_information(
                FullParam(truth.state, sigma2), mapping, factor, scenario.c
            )
        data_info /= mc_samples
        used = mc_samples
    else:
        data_info = fisher_information(
            FullParam(nominal_truth(scenario), sigma2), mapping, factor, scenario.c
        )
        used = 0

    information = data_info + prior_information(scenario, prior)
    try:
        covariance = invert_spd(information)
    except NotPositiveDefinite as exc:
        raise SingularInformation(f"hybrid information matrix singular: {exc}") from exc

    d = scenario.dim
    blocks = tuple(
        covariance[position_slice(i, d), position_slice(i, d)].copy()
        for i in range(1, scenario.n_nodes + 1)
    )
    delay_block = covariance[
        d * scenario.n_nodes : scenario.state_size,
        d * scenario.n_nodes : scenario.state_size,
    ].copy()
    return BoundResult(
        information=information,
        covariance_bound=covariance,
        position_blocks=blocks,
        delay_block=delay_block,
        sigma2_var_bound=float(covariance[-1, -1]),
        mc_samples=used,
    )


def rmse_from_mse(mse_block, n_entities: int) -> float:
    """Aggregate RMSE metric: sqrt(trace of an MSE block) / entity count."""
    mse_block = as_float_array(mse_block, "mse_block", ndim=2)
    if n_entities < 1:
        raise ValueError(f"n_entities must be >= 1, got {n_entities}")
    return float(np.sqrt(np.trace(mse_block)) / n_entities)


def error_ellipse(cov, confidence: float = 0.99):
    """Semi-axes and orientation of a confidence ellipse for a 2x2 covariance.

    Returns ``(major, minor, angle_rad)`` where the angle is the direction
    of the major axis (radians, counterclockwise from the x axis). The axes
    scale with the chi-square quantile for 2 degrees of freedom.
    """
    cov = as_float_array(cov, "cov", ndim=2)
    if cov.shape != (2, 2):
        raise ValueError(f"cov must be 2x2, got {cov.shape}")
    if not 0 < confidence < 1:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    scale = chi2.ppf(confidence, df=2)
    eigvals, eigvecs = np.linalg.eigh((cov + cov.T) / 2.0)
    if eigvals[0] < -1e-12 * max(1.0, eigvals[-1]):
        raise ValueError(f"cov is not positive semidefinite: eigenvalues {eigvals}")
    eigvals = np.clip(eigvals, 0.0, None)
    major = float(np.sqrt(scale * eigvals[1]))
    minor = float(np.sqrt(scale * eigvals[0]))
    angle = float(np.arctan2(eigvecs[1, 1], eigvecs[0, 1]))
    return major, minor, angle
