"""Iterative MAP estimation of node positions and turn-around delays.

The estimator maximizes the posterior of the stacked state (positions and
delays) given interval observations with correlated Gaussian timing noise
of unknown level. The noise variance is concentrated out analytically
(scaled inverse-variance prior), leaving the compact objective

    cost(x) = 0.5 * ln ||y - predicted(x)||^2_W + (beta/2) * ||mu - x||^2_P

where W is the inverse noise correlation, P the prior precision, and
``beta = 1 / (n_obs + 2)``. Each outer iteration linearizes the prediction
around the current state and solves the surrogate through a fixed-point
iteration in the increment; the data weight ``alpha`` is the reciprocal of
the current weighted residual power.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import (
    ConfigError,
    DimensionMismatch,
    NonFiniteIterate,
    NotPositiveDefinite,
    SingularNormalMatrix,
)
from .model import (
    ObservationSet,
    Scenario,
    StateVector,
    position_slice,
    predict_intervals,
    range_delay_jacobian,
    range_delay_vector,
    state_length,
)
from .numerics import (
    CholeskyFactor,
    lexicographic_lstsq,
    psd_sqrt,
    stacked_lstsq,
    weighted_sq_norm,
    whiten,
)
from .validation import as_float_array, check_length

# Floor on the weighted residual power; keeps the data weight finite when an
# iterate fits the observations (nearly) exactly.
RESIDUAL_FLOOR = 1e-30

# Relative scale of the optional per-column diagonal ridge (each column is
# damped against its own power so mixed meter/second units stay balanced).
RIDGE_RTOL = 1e-10

# When the data block outweighs the prior block by more than this factor,
# the inner solve switches from the stacked least-squares form to its exact
# data-dominated limit (prior resolved on the data null space only). Past
# this ratio the stacked form would round the prior away in double precision.
_DOMINANCE_RATIO = 1e6

# Spacing between default initial positions of multiple auxiliary nodes, so
# no two start coincident (coincident nodes have undefined range gradients).
_AUX_STRIDE = (0.37, 0.53, 0.29)


def prior_weight(n_obs: int) -> float:
    """Weight of the prior term after concentrating out the noise variance."""
    if n_obs < 1:
        raise DimensionMismatch(f"need at least one observation, got {n_obs}")
    return 1.0 / (n_obs + 2)


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian prior in information form.

    ``mean`` has state-vector layout. ``precision`` is block diagonal:
    isotropic blocks for anchor positions, zero blocks for unknown positions
    (noninformative), and a scaled identity for the delays. A zero block
    simply removes that coordinate from the prior term.
    """

    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        mean = as_float_array(self.mean, "prior mean", ndim=1)
        precision = as_float_array(self.precision, "prior precision", ndim=2)
        if precision.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionMismatch(
                f"prior precision shape {precision.shape} does not match mean "
                f"length {mean.shape[0]}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", precision)


@dataclass(frozen=True)
class EstimateResult:
    """Output of :func:`map_estimate`."""

    state: StateVector
    sigma2: float
    outer_iterations: int
    inner_iterations: int
    converged: bool
    cost: float


def default_initial_state(scenario: Scenario) -> StateVector:
    """Deterministic starting point for the iterative estimator.

    Anchors start at their prior means, the receiver at the anchor centroid,
    auxiliary nodes at the centroid plus the configured offset (successive
    auxiliaries are spread by a fixed stride so none coincide), and all
    delays at the prior mean delay.

    Raises:
        ConfigError: if two starting positions collide; pick a different
            ``aux_init_offset``.
    """
    d = scenario.dim
    anchor_means = np.array([scenario.node(i).prior_mean for i in scenario.anchor_ids])
    centroid = anchor_means.mean(axis=0)
    offset = np.asarray(scenario.aux_init_offset, dtype=float)
    stride = np.array(_AUX_STRIDE[:d])

    positions = np.empty((scenario.n_nodes, d))
    aux_count = 0
    for spec in scenario.nodes:
        if spec.role == "anchor":
            positions[spec.node_id - 1] = spec.prior_mean
        elif spec.role == "receiver":
            positions[spec.node_id - 1] = centroid
        else:
            positions[spec.node_id - 1] = centroid + offset + aux_count * stride
            aux_count += 1

    for spec in scenario.nodes:
        if spec.role == "anchor":
            continue
        p = positions[spec.node_id - 1]
        for other in scenario.nodes:
            if other.node_id != spec.node_id and np.allclose(
                p, positions[other.node_id - 1], atol=1e-9
            ):
                raise ConfigError(
                    f"initial position of node {spec.node_id} coincides with "
                    f"node {other.node_id}; adjust aux_init_offset"
                )
    delays = np.full(scenario.n_nodes - 1, scenario.mu_delta)
    return StateVector.from_parts(positions, delays)


def build_prior(scenario: Scenario, anchor_sigma_scale: float = 1.0) -> PriorSpec:
    """Prior for a scenario, optionally widening the anchor priors.

    ``anchor_sigma_scale`` multiplies every anchor's prior sigma on the
    estimator side only — used to study prior mismatch; the generative
    distribution is unaffected.
    """
    if anchor_sigma_scale <= 0:
        raise ConfigError(f"anchor_sigma_scale must be > 0, got {anchor_sigma_scale}")
    if scenario.sigma_delta <= 0:
        raise ConfigError("sigma_delta must be > 0 to form the prior in information form")
    d = scenario.dim
    size = scenario.state_size
    mean = default_initial_state(scenario).vector.copy()
    precision = np.zeros((size, size))
    for spec in scenario.nodes:
        if spec.role == "anchor":
            sl = position_slice(spec.node_id, d)
            sigma = spec.prior_sigma * anchor_sigma_scale
            precision[sl, sl] = np.eye(d) / sigma**2
    delay_block = slice(d * scenario.n_nodes, size)
    precision[delay_block, delay_block] = (
        np.eye(scenario.n_nodes - 1) / scenario.sigma_delta**2
    )
    return PriorSpec(mean, precision)


def noise_variance_estimate(state: StateVector, obs: ObservationSet) -> float:
    """Concentrated estimate of the timing-noise variance at a given state."""
    residual = obs.y - predict_intervals(state, obs.mapping, obs.c)
    return weighted_sq_norm(residual, obs.correlation_factor) / (obs.n_observations + 2)


def map_cost(state: StateVector, obs: ObservationSet, prior: PriorSpec, beta: float) -> float:
    """Compact MAP objective (lower is better)."""
    residual = obs.y - predict_intervals(state, obs.mapping, obs.c)
    power = max(weighted_sq_norm(residual, obs.correlation_factor), RESIDUAL_FLOOR)
    shift = prior.mean - state.vector
    return 0.5 * np.log(power) + 0.5 * beta * float(shift @ (prior.precision @ shift))


def fixed_point_increment(
    y_resid: np.ndarray,
    design: np.ndarray,
    prior_shift: np.ndarray,
    prior_precision: np.ndarray,
    beta: float,
    factor: CholeskyFactor,
    eps: float = 1e-4,
    max_iter: int = 100,
    ridge: bool = False,
    prior_root: np.ndarray | None = None,
):
    """Solve the linearized MAP surrogate for the state increment.

    Iterates the minimizer of

        alpha * ||y_resid - design @ inc||^2_W + beta * ||prior_shift - inc||^2_P

    with ``alpha = 1 / ||y_resid - design @ increment||^2_W`` evaluated at
    the previous increment, starting from zero, until the increment moves
    less than ``eps`` in Euclidean norm. Each application is solved as one
    stacked least-squares problem on the whitened data block and the prior
    square-root block rather than through the normal matrix
    ``alpha*S + beta*P``, which keeps a strongly weighted data block from
    erasing the prior in floating point; once alpha is so large that even
    the stacked form would round the prior away (near-interpolating
    iterates), the solve switches to the exact data-dominated limit, where
    the prior only resolves the directions the data leaves free. When the
    prior precision is zero the weight alpha cancels and a single
    application lands on the generalized least-squares solution.

    ``prior_root`` optionally supplies a precomputed symmetric square root
    of ``prior_precision`` (without the beta scaling) so repeated calls can
    share it.

    Returns:
        (increment, n_iterations, stabilized)

    Raises:
        SingularNormalMatrix: if some direction of the increment is
            constrained by neither the data nor the prior.
        NonFiniteIterate: if an iterate turns non-finite.
    """
    size = design.shape[1]
    whitened_design = whiten(factor, design)
    whitened_resid = whiten(factor, y_resid)
    if prior_root is None:
        prior_root = psd_sqrt(prior_precision)
    prior_block = np.sqrt(beta) * prior_root
    prior_rhs = prior_block @ prior_shift
    data_colsq = np.sum(whitened_design**2, axis=0)
    data_norm = float(np.linalg.norm(whitened_design))
    prior_norm = float(np.linalg.norm(prior_block))

    data_mat, data_rhs = whitened_design, whitened_resid
    if ridge:
        # Damp each column relative to its own data power (Levenberg
        # scaling): one shared magnitude would let the seconds-scaled
        # columns crush the meter-scaled ones. Columns the data never
        # touches get no ridge and stay with the prior.
        ridge_block = np.diag(np.sqrt(RIDGE_RTOL * data_colsq))
        data_mat = np.vstack([data_mat, ridge_block])
        data_rhs = np.concatenate([data_rhs, np.zeros(size)])

    increment = np.zeros(size)
    for iteration in range(1, max_iter + 1):
        residual = whitened_resid - whitened_design @ increment
        alpha = 1.0 / max(float(residual @ residual), RESIDUAL_FLOOR)
        root_alpha = float(np.sqrt(alpha))
        try:
            if prior_norm == 0.0:
                new = stacked_lstsq([(data_mat, data_rhs)])
            elif root_alpha * data_norm > _DOMINANCE_RATIO * prior_norm:
                new = lexicographic_lstsq(data_mat, data_rhs, prior_block, prior_rhs)
            else:
                new = stacked_lstsq(
                    [
                        (root_alpha * data_mat, root_alpha * data_rhs),
                        (prior_block, prior_rhs),
                    ]
                )
        except NotPositiveDefinite as exc:
            raise SingularNormalMatrix(
                f"increment underdetermined at inner iteration {iteration}: {exc}"
            ) from exc
        if not np.isfinite(new).all():
            raise NonFiniteIterate(f"non-finite increment at inner iteration {iteration}")
        step = float(np.linalg.norm(new - increment))
        increment = new
        if step < eps:
            return increment, iteration, True
    return increment, max_iter, False


def map_estimate(
    obs: ObservationSet,
    prior: PriorSpec,
    init: StateVector,
    eps: float = 1e-4,
    max_outer: int = 50,
    max_inner: int = 100,
    unit_balanced: bool = False,
    ridge: bool = False,
) -> EstimateResult:
    """Iterative MAP estimate of all node positions and turn-around delays.

    Outer iterations relinearize the interval prediction around the current
    state, solve for an increment with :func:`fixed_point_increment`, and
    apply it. Iteration stops once the state moves less than ``eps`` between
    outer iterations (or after ``max_outer`` iterations with
    ``converged=False``). ``unit_balanced=True`` measures convergence with
    delay coordinates scaled by c so all entries are in meters; the default
    applies the tolerance to the raw mixed-unit vector.

    A monitored safeguard aborts (``converged=False``) if the objective
    increases persistently, which indicates divergence of the linearized
    updates.
    """
    size = state_length(obs.n_nodes, obs.dim)
    check_length(init.vector, size, "init")
    check_length(prior.mean, size, "prior mean")
    beta = prior_weight(obs.n_observations)
    factor = obs.correlation_factor
    prior_root = psd_sqrt(prior.precision)

    step_scale = np.ones(size)
    if unit_balanced:
        step_scale[obs.dim * obs.n_nodes :] = obs.c

    current = init.vector.copy()
    inner_total = 0
    converged = False
    outer = 0
    cost_prev = map_cost(init, obs, prior, beta)
    worse_streak = 0
    for outer in range(1, max_outer + 1):
        state = StateVector(current, obs.n_nodes, obs.dim)
        y_resid = obs.y - obs.mapping @ range_delay_vector(state) / obs.c
        design = obs.mapping @ range_delay_jacobian(state) / obs.c
        prior_shift = prior.mean - current

        increment, n_inner, _ = fixed_point_increment(
            y_resid,
            design,
            prior_shift,
            prior.precision,
            beta,
            factor,
            eps=eps,
            max_iter=max_inner,
            ridge=ridge,
            prior_root=prior_root,
        )
        inner_total += n_inner
        current = current + increment
        if not np.isfinite(current).all():
            raise NonFiniteIterate(f"non-finite state after outer iteration {outer}")

        cost = map_cost(StateVector(current, obs.n_nodes, obs.dim), obs, prior, beta)
        if cost > cost_prev + 1e-12 * (1.0 + abs(cost_prev)):
            worse_streak += 1
            if worse_streak >= 3:
                break
        else:
            worse_streak = 0
        cost_prev = cost

        if float(np.linalg.norm(increment * step_scale)) < eps:
            converged = True
            break

    final_state = StateVector(current, obs.n_nodes, obs.dim)
    return EstimateResult(
        state=final_state,
        sigma2=noise_variance_estimate(final_state, obs),
        outer_iterations=outer,
        inner_iterations=inner_total,
        converged=converged,
        cost=cost_prev,
    )


class MapLocalizer(BaseEstimator):
    """Estimator-style wrapper around :func:`map_estimate`.

    Hyperparameters mirror the function arguments; ``fit`` stores the result
    in trailing-underscore attributes, so the class composes with tooling
    that expects ``get_params`` / ``set_params`` semantics.
    """

    def __init__(self, eps=1e-4, max_outer=50, max_inner=100, unit_balanced=False, ridge=False):
        self.eps = eps
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.unit_balanced = unit_balanced
        self.ridge = ridge

    def fit(self, observations: ObservationSet, prior: PriorSpec, init: StateVector):
        result = map_estimate(
            observations,
            prior,
            init,
            eps=self.eps,
            max_outer=self.max_outer,
            max_inner=self.max_inner,
            unit_balanced=self.unit_balanced,
            ridge=self.ridge,
        )
        self.state_ = result.state
        self.sigma2_ = result.sigma2
        self.outer_iterations_ = result.outer_iterations
        self.inner_iterations_ = result.inner_iterations
        self.converged_ = result.converged
        self.cost_ = result.cost
        self.result_ = result
        return self

    def predict(self, observations: ObservationSet) -> np.ndarray:
        """Predicted noise-free intervals at the fitted state."""
        if not hasattr(self, "state_"):
            raise RuntimeError("fit must be called before predict")
        return predict_intervals(self.state_, observations.mapping, observations.c)
