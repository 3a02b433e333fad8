"""Tests for the iterative MAP estimator and its building blocks."""

import numpy as np
import numpy.testing as npt
import pytest
from sklearn.base import clone

from asyncloc.errors import ConfigError, DimensionMismatch, SingularNormalMatrix
from asyncloc.estimate import (
    EstimateResult,
    MapLocalizer,
    PriorSpec,
    build_prior,
    default_initial_state,
    fixed_point_increment,
    map_cost,
    map_estimate,
    noise_variance_estimate,
    prior_weight,
)
from asyncloc.model import (
    NodeSpec,
    ObservationSet,
    Scenario,
    StateVector,
    mapping_matrix,
    noise_correlation,
    observation_structure,
    position_slice,
    predict_intervals,
    range_delay_jacobian,
    range_delay_vector,
)
from asyncloc.numerics import cholesky_spd
from asyncloc.simulate import TruthDraw, sample_truth, substream, synthesize_observations


def planar_scenario(shift=(0.0, 0.0), sigma=2e-9, sigma_delta=1e-8):
    dx, dy = shift
    nodes = (
        NodeSpec(1, "anchor", prior_mean=[0.0 + dx, 0.0 + dy], prior_sigma=0.2),
        NodeSpec(2, "anchor", prior_mean=[10.0 + dx, 0.0 + dy], prior_sigma=0.2),
        NodeSpec(3, "anchor", prior_mean=[5.0 + dx, 9.0 + dy], prior_sigma=0.2),
        NodeSpec(4, "auxiliary", truth=[7.0 + dx, 3.0 + dy]),
        NodeSpec(5, "receiver", truth=[4.0 + dx, 5.0 + dy]),
    )
    return Scenario(
        dim=2,
        c=299792458.0,
        sigma=sigma,
        mu_delta=1e-6,
        sigma_delta=sigma_delta,
        nodes=nodes,
        sequence=(1, 2, 1, 3, 1, 4, 2, 3, 2, 4, 3, 4),
    )


def exact_truth_state(scenario):
    """Anchors at their prior means, others at truth, delays at the mean."""
    positions = np.empty((scenario.n_nodes, scenario.dim))
    for spec in scenario.nodes:
        positions[spec.node_id - 1] = (
            spec.prior_mean if spec.role == "anchor" else spec.truth
        )
    return StateVector.from_parts(
        positions, np.full(scenario.n_nodes - 1, scenario.mu_delta)
    )


def one_observation_set(scenario, seed=10):
    rng = substream(seed, 0)
    truth = sample_truth(scenario, rng)
    return truth, synthesize_observations(truth, scenario, rng)


# ---------------------------------------------------------------------------
# scalar pieces


def test_prior_weight():
    assert prior_weight(10) == pytest.approx(1.0 / 12.0)
    with pytest.raises(DimensionMismatch):
        prior_weight(0)


def test_prior_spec_shape_check():
    with pytest.raises(DimensionMismatch):
        PriorSpec(mean=np.zeros(3), precision=np.eye(4))


def test_noise_variance_estimate_hand_value():
    # M=2 with neighbor correlation; residual [1, 0] gives
    # r' Q^-1 r = 9/8 and the estimate divides by M + 2 = 4
    scn = planar_scenario()
    mapping = mapping_matrix((1, 2, 1), 3, 2.0)
    state = StateVector.from_parts(
        np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 8.0]]), np.array([0.25, 0.5])
    )
    clean = predict_intervals(state, mapping, 2.0)
    obs = ObservationSet(
        y=clean + np.array([1.0, 0.0]),
        mapping=mapping,
        correlation=noise_correlation(2),
        sequence=(1, 2, 1),
        c=2.0,
        n_nodes=3,
        dim=2,
    )
    assert noise_variance_estimate(state, obs) == pytest.approx(0.28125, rel=1e-12)
    # scaling the residual by k scales the estimate by k^2
    obs2 = ObservationSet(
        y=clean + np.array([3.0, 0.0]),
        mapping=mapping,
        correlation=noise_correlation(2),
        sequence=(1, 2, 1),
        c=2.0,
        n_nodes=3,
        dim=2,
    )
    assert noise_variance_estimate(state, obs2) == pytest.approx(9 * 0.28125, rel=1e-12)
    obs3 = ObservationSet(
        y=clean,
        mapping=mapping,
        correlation=noise_correlation(2),
        sequence=(1, 2, 1),
        c=2.0,
        n_nodes=3,
        dim=2,
    )
    assert noise_variance_estimate(state, obs3) == 0.0


def test_map_cost_matches_profiled_log_posterior():
    # The compact objective must equal -beta times the log posterior with
    # the noise variance maximized out, up to the state-independent constant
    # 1/2 - 1/2 log(M + 2). Checked with an explicit correlation inverse.
    scn = planar_scenario()
    truth, obs = one_observation_set(scn, seed=12)
    prior = build_prior(scn)
    m = obs.n_observations
    beta = prior_weight(m)
    w = np.linalg.inv(obs.correlation)
    rng = np.random.default_rng(1)
    const = 0.5 - 0.5 * np.log(m + 2)
    # perturb each coordinate on its own scale (meters vs seconds)
    scale = np.concatenate(
        [np.full(scn.dim * scn.n_nodes, 0.1), np.full(scn.n_nodes - 1, 1e-8)]
    )
    for _ in range(5):
        vec = truth.state.vector + scale * rng.standard_normal(scn.state_size)
        state = StateVector(vec, scn.n_nodes, scn.dim)
        r = obs.y - predict_intervals(state, obs.mapping, obs.c)
        power = float(r @ w @ r)
        shift = prior.mean - vec
        log_post = (
            -0.5 * (m + 2) * np.log(power / (m + 2))
            - 0.5 * (m + 2)
            - 0.5 * float(shift @ prior.precision @ shift)
        )
        v = map_cost(state, obs, prior, beta)
        assert -beta * log_post - v == pytest.approx(const, abs=1e-12)


# ---------------------------------------------------------------------------
# inner fixed-point solver


def test_fixed_point_reduces_to_gls_without_priors():
    # linear model, noninformative prior: the increment is the generalized
    # least-squares solution and the second pass only confirms convergence
    rng = np.random.default_rng(5)
    design = rng.standard_normal((12, 5))
    y = rng.standard_normal(12)
    corr = noise_correlation(12)
    factor = cholesky_spd(corr)
    w = np.linalg.inv(corr)
    expected = np.linalg.solve(design.T @ w @ design, design.T @ w @ y)

    inc, n_iter, converged = fixed_point_increment(
        y, design, np.zeros(5), np.zeros((5, 5)), prior_weight(12), factor
    )
    assert converged
    assert n_iter == 2
    npt.assert_allclose(inc, expected, rtol=1e-12)


def test_fixed_point_scalar_case():
    # y=1, unit design, unit prior precision toward 0, beta=1: the update is
    # z <- 1/(1 + (1-z)^2) whose only real fixed point is z = 1 (the cubic
    # factors as (z-1)(z^2-z+1)), i.e. the residual is driven to zero
    factor = cholesky_spd(np.eye(1))
    inc, _, converged = fixed_point_increment(
        np.array([1.0]), np.array([[1.0]]), np.array([0.0]), np.array([[1.0]]),
        1.0, factor, eps=1e-10,
    )
    assert converged
    assert abs(inc[0] - 1.0) <= 1e-8


def test_fixed_point_zero_data_zero_shift():
    factor = cholesky_spd(noise_correlation(3))
    design = np.array([[1.0, 0.5], [0.0, 2.0], [1.0, 1.0]])
    inc, n_iter, converged = fixed_point_increment(
        np.zeros(3), design, np.zeros(2), np.eye(2), 0.2, factor
    )
    assert converged
    assert n_iter == 1
    npt.assert_array_equal(inc, np.zeros(2))


def test_fixed_point_underdetermined_raises():
    # 2 observations cannot pin 4 unknowns when the prior is silent
    factor = cholesky_spd(noise_correlation(2))
    design = np.random.default_rng(2).standard_normal((2, 4))
    with pytest.raises(SingularNormalMatrix):
        fixed_point_increment(
            np.ones(2), design, np.zeros(4), np.zeros((4, 4)), 0.25, factor
        )


# ---------------------------------------------------------------------------
# initialization and priors


def test_default_initial_state_layout():
    scn = planar_scenario()
    init = default_initial_state(scn)
    centroid = np.array([5.0, 3.0])
    npt.assert_array_equal(init.positions[0], [0.0, 0.0])
    npt.assert_allclose(init.positions[3], centroid + [1.0, 1.0])
    npt.assert_allclose(init.positions[4], centroid)
    npt.assert_array_equal(init.delays, np.full(4, 1e-6))


def test_default_initial_state_spreads_multiple_auxiliaries():
    nodes = (
        NodeSpec(1, "anchor", prior_mean=[0.0, 0.0], prior_sigma=0.2),
        NodeSpec(2, "anchor", prior_mean=[10.0, 0.0], prior_sigma=0.2),
        NodeSpec(3, "auxiliary", truth=[3.0, 3.0]),
        NodeSpec(4, "auxiliary", truth=[6.0, 2.0]),
        NodeSpec(5, "receiver", truth=[4.0, 7.0]),
    )
    scn = Scenario(
        dim=2, c=3e8, sigma=1e-9, mu_delta=1e-6, sigma_delta=1e-8,
        nodes=nodes, sequence=(1, 2, 3, 4, 1, 3, 2, 4),
    )
    init = default_initial_state(scn)
    npt.assert_allclose(init.positions[2], [6.0, 1.0])
    npt.assert_allclose(init.positions[3], [6.37, 1.53])


def test_default_initial_state_rejects_collisions():
    scn = planar_scenario()
    bad = Scenario(
        dim=scn.dim, c=scn.c, sigma=scn.sigma, mu_delta=scn.mu_delta,
        sigma_delta=scn.sigma_delta, nodes=scn.nodes, sequence=scn.sequence,
        aux_init_offset=(0.0, 0.0),  # auxiliary lands on the receiver
    )
    with pytest.raises(ConfigError, match="coincides"):
        default_initial_state(bad)


def test_build_prior_blocks():
    scn = planar_scenario()
    prior = build_prior(scn)
    # anchor sigma 0.2 -> precision 25 per coordinate
    npt.assert_allclose(prior.precision[position_slice(1, 2), position_slice(1, 2)],
                        25.0 * np.eye(2))
    # unknown positions carry a zero block
    npt.assert_array_equal(prior.precision[position_slice(4, 2), position_slice(4, 2)],
                           np.zeros((2, 2)))
    npt.assert_array_equal(prior.precision[position_slice(5, 2), position_slice(5, 2)],
                           np.zeros((2, 2)))
    # delay block at 1/sigma_delta^2
    npt.assert_allclose(np.diag(prior.precision)[10:], np.full(4, 1e16))
    npt.assert_array_equal(prior.mean, default_initial_state(scn).vector)


def test_build_prior_mismatch_scale():
    scn = planar_scenario()
    wide = build_prior(scn, anchor_sigma_scale=10.0)
    npt.assert_allclose(wide.precision[position_slice(1, 2), position_slice(1, 2)],
                        0.25 * np.eye(2))
    # the delay block is untouched
    npt.assert_allclose(np.diag(wide.precision)[10:], np.full(4, 1e16))
    with pytest.raises(ConfigError):
        build_prior(scn, anchor_sigma_scale=0.0)
    with pytest.raises(ConfigError):
        build_prior(planar_scenario(sigma_delta=0.0))


# ---------------------------------------------------------------------------
# the full estimator


def test_map_estimate_truth_init_is_stationary():
    scn = planar_scenario(sigma=0.0)
    truth_state = exact_truth_state(scn)
    obs = synthesize_observations(TruthDraw(truth_state, 0.0), scn, substream(1, 0))
    result = map_estimate(obs, build_prior(scn), truth_state)
    assert result.converged
    assert result.outer_iterations == 1
    npt.assert_allclose(result.state.vector, truth_state.vector, atol=1e-12)
    assert result.sigma2 == 0.0


def test_map_estimate_recovers_noiseless_truth():
    # zero noise with the truth at the prior means: the cost has a unique
    # bliss point (zero residual, zero prior shift) and the iteration must
    # find it from the generic default start
    scn = planar_scenario(sigma=0.0, sigma_delta=1e-9)
    truth_state = exact_truth_state(scn)
    obs = synthesize_observations(TruthDraw(truth_state, 0.0), scn, substream(14, 0))
    result = map_estimate(obs, build_prior(scn), default_initial_state(scn))
    assert result.converged
    npt.assert_allclose(result.state.positions, truth_state.positions, atol=1e-9)
    npt.assert_allclose(result.state.delays, truth_state.delays, rtol=0, atol=1e-15)


def test_map_estimate_translation_equivariance():
    shift = np.array([5.0, -3.0])
    scn0 = planar_scenario()
    scn1 = planar_scenario(shift=tuple(shift))
    results = []
    for scn in (scn0, scn1):
        rng = substream(11, 0)
        truth = sample_truth(scn, rng)
        obs = synthesize_observations(truth, scn, rng)
        results.append(map_estimate(obs, build_prior(scn), default_initial_state(scn)))
    assert results[0].converged and results[1].converged
    npt.assert_allclose(
        results[1].state.positions, results[0].state.positions + shift, atol=1e-9
    )
    npt.assert_allclose(
        results[1].state.delays, results[0].state.delays, rtol=0, atol=1e-12
    )
    assert results[1].outer_iterations == results[0].outer_iterations


def test_map_estimate_underdetermined_without_priors():
    # a 4-node network seen through pair sums leaves the silent prior
    # nothing to resolve: the inner solve must report the singularity
    scn = Scenario(
        dim=2, c=3e8, sigma=1e-9, mu_delta=1e-6, sigma_delta=1e-8,
        nodes=(
            NodeSpec(1, "anchor", prior_mean=[0.0, 0.0], prior_sigma=0.2),
            NodeSpec(2, "anchor", prior_mean=[8.0, 0.0], prior_sigma=0.2),
            NodeSpec(3, "auxiliary", truth=[4.0, 6.0]),
            NodeSpec(4, "receiver", truth=[3.0, 2.0]),
        ),
        sequence=(1, 2, 1, 3, 2, 3, 1, 2),
    )
    rng = substream(15, 0)
    truth = sample_truth(scn, rng)
    obs = synthesize_observations(truth, scn, rng)
    silent = PriorSpec(build_prior(scn).mean, np.zeros((scn.state_size, scn.state_size)))
    with pytest.raises(SingularNormalMatrix):
        map_estimate(obs, silent, default_initial_state(scn))


def test_map_estimate_option_smoke(nominal_scenario):
    truth, obs = one_observation_set(nominal_scenario, seed=21)
    prior = build_prior(nominal_scenario)
    init = default_initial_state(nominal_scenario)
    plain = map_estimate(obs, prior, init)
    tweaked = map_estimate(obs, prior, init, unit_balanced=True, ridge=True)
    assert plain.converged and tweaked.converged
    npt.assert_allclose(tweaked.state.positions, plain.state.positions, atol=1e-3)


@pytest.fixture(scope="module")
def nominal_trial_batch(nominal_scenario):
    """60 independent estimates on the bundled scenario, with one extra
    relinearized solve at each final state to probe stationarity."""
    scn = nominal_scenario
    structure = observation_structure(scn)
    prior = build_prior(scn)
    init = default_initial_state(scn)
    beta = prior_weight(scn.n_observations)
    out = []
    for t in range(60):
        rng = substream(77, t)
        truth = sample_truth(scn, rng)
        obs = synthesize_observations(truth, scn, rng, structure)
        result = map_estimate(obs, prior, init)
        state = result.state
        y_resid = obs.y - obs.mapping @ range_delay_vector(state) / obs.c
        design = obs.mapping @ range_delay_jacobian(state) / obs.c
        extra, _, _ = fixed_point_increment(
            y_resid, design, prior.mean - state.vector, prior.precision,
            beta, obs.correlation_factor,
        )
        out.append((result, float(np.linalg.norm(extra)), truth))
    return out


def test_map_estimate_final_state_is_stationary(nominal_trial_batch):
    # re-linearizing at the solution and solving once more must not move it
    # by anything comparable to the convergence tolerance
    assert all(r.converged for r, _, _ in nominal_trial_batch)
    extra_steps = [step for _, step, _ in nominal_trial_batch]
    assert max(extra_steps) < 1e-4


def test_noise_level_estimate_is_informative(nominal_trial_batch, nominal_scenario):
    # the concentrated variance estimate absorbs fitted degrees of freedom,
    # so its square root sits below sigma but must stay the right order
    sigma = nominal_scenario.sigma
    ratios = [np.sqrt(r.sigma2) / sigma for r, _, _ in nominal_trial_batch]
    assert 0.4 < float(np.median(ratios)) < 1.0


# ---------------------------------------------------------------------------
# estimator wrapper


def test_localizer_params_and_clone():
    loc = MapLocalizer(eps=1e-5, max_outer=30)
    params = loc.get_params()
    assert params["eps"] == 1e-5
    assert params["max_outer"] == 30
    assert params["ridge"] is False
    copy = clone(loc)
    assert copy is not loc
    assert copy.get_params() == params


def test_localizer_fit_predict(nominal_scenario):
    truth, obs = one_observation_set(nominal_scenario, seed=30)
    prior = build_prior(nominal_scenario)
    init = default_initial_state(nominal_scenario)
    loc = MapLocalizer()
    assert loc.fit(obs, prior, init) is loc
    assert loc.converged_
    assert isinstance(loc.result_, EstimateResult)
    assert loc.sigma2_ >= 0.0
    pred = loc.predict(obs)
    npt.assert_allclose(
        pred, predict_intervals(loc.state_, obs.mapping, obs.c), atol=1e-18
    )
    # predictions explain the observations to roughly the noise level
    assert np.abs(pred - obs.y).max() < 20 * nominal_scenario.sigma


def test_localizer_predict_requires_fit(nominal_scenario):
    truth, obs = one_observation_set(nominal_scenario, seed=31)
    with pytest.raises(RuntimeError, match="fit"):
        MapLocalizer().predict(obs)
