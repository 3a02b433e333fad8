"""Network model: state layout, geometry, and the observation structure.

Conventions used throughout the package
---------------------------------------

* Nodes are numbered ``1 .. N``. Nodes ``1 .. N-1`` are transceivers that
  transmit in a known round-robin sequence; node ``N`` is a passive
  receiver that only listens.
* The state vector stacks all node coordinates followed by the
  transceiver turn-around delays::

      [x_1 (d entries), ..., x_N (d entries), delta_1, ..., delta_{N-1}]

  for a total length ``d*N + N - 1``. Positions are in meters, delays in
  seconds.
* Unordered node pairs are ordered lexicographically:
  ``(1,2), (1,3), ..., (1,N), (2,3), ..., (N-1,N)``. Range vectors and the
  range rows of Jacobians follow this ordering.
* An observed interval for consecutive transmissions ``i`` then ``j`` is

      y = range(i,j)/c + delta_j + range(j,N)/c - range(i,N)/c + noise

  so each row of the mapping matrix built by :func:`mapping_matrix` touches
  exactly three range columns (+1, +1, -1) and one delay column. Delay
  columns carry the value ``c`` so that ``mapping @ range_delay_vector / c``
  reproduces the interval equation in seconds.
* Timing noise is correlated between consecutive observations (they share
  one timing measurement): unit diagonal, 1/3 on the first off-diagonals.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from .errors import (
    ConfigError,
    DegenerateGeometry,
    DimensionMismatch,
    InvalidSequence,
    MissingTruth,
)
from .numerics import CholeskyFactor, cholesky_spd
from .validation import as_float_array

# Nodes closer than this (meters) make range derivatives meaningless.
MIN_RANGE = 1e-9

ROLES = ("anchor", "auxiliary", "receiver")


# ---------------------------------------------------------------------------
# pair bookkeeping


@lru_cache(maxsize=128)
def _pair_arrays(n_nodes: int):
    """0-based (first, second) node indices for all pairs, lexicographic."""
    first, second = np.triu_indices(n_nodes, k=1)
    return first, second


def node_pairs(n_nodes: int):
    """All unordered node pairs (a, b), a < b, as 1-based ids."""
    first, second = _pair_arrays(n_nodes)
    return [(int(a) + 1, int(b) + 1) for a, b in zip(first, second)]


def pair_slot(a: int, b: int, n_nodes: int) -> int:
    """Index of unordered pair {a, b} (1-based ids) in the lexicographic order."""
    if a == b:
        raise ValueError(f"pair requires distinct nodes, got ({a}, {b})")
    lo, hi = min(a, b), max(a, b)
    if lo < 1 or hi > n_nodes:
        raise ValueError(f"pair ({a}, {b}) out of range for {n_nodes} nodes")
    return (lo - 1) * (2 * n_nodes - lo) // 2 + (hi - lo) - 1


def n_pair_slots(n_nodes: int) -> int:
    return n_nodes * (n_nodes - 1) // 2


def state_length(n_nodes: int, dim: int) -> int:
    return dim * n_nodes + n_nodes - 1


# ---------------------------------------------------------------------------
# state vector


@dataclass(frozen=True)
class StateVector:
    """Stacked node positions and turn-around delays (see module docstring)."""

    vector: np.ndarray
    n_nodes: int
    dim: int

    def __post_init__(self):
        vec = as_float_array(self.vector, "state vector", ndim=1)
        expected = state_length(self.n_nodes, self.dim)
        if vec.shape[0] != expected:
            raise DimensionMismatch(
                f"state vector: expected length {expected} for "
                f"{self.n_nodes} nodes in {self.dim}-d, got {vec.shape[0]}"
            )
        object.__setattr__(self, "vector", vec)

    @classmethod
    def from_parts(cls, positions, delays) -> "StateVector":
        positions = as_float_array(positions, "positions", ndim=2)
        delays = as_float_array(delays, "delays", ndim=1)
        n, d = positions.shape
        if delays.shape[0] != n - 1:
            raise DimensionMismatch(
                f"delays: expected {n - 1} entries for {n} nodes, got {delays.shape[0]}"
            )
        return cls(np.concatenate([positions.ravel(), delays]), n, d)

    @property
    def positions(self) -> np.ndarray:
        """(n_nodes, dim) array of node positions."""
        return self.vector[: self.dim * self.n_nodes].reshape(self.n_nodes, self.dim)

    @property
    def delays(self) -> np.ndarray:
        """(n_nodes - 1,) turn-around delays of the transceivers."""
        return self.vector[self.dim * self.n_nodes :]

    def replace_vector(self, vector) -> "StateVector":
        return StateVector(vector, self.n_nodes, self.dim)


def position_slice(node_id: int, dim: int) -> slice:
    """Slice of a node's coordinates inside the state vector (1-based id)."""
    return slice((node_id - 1) * dim, node_id * dim)


def delay_index(node_id: int, n_nodes: int, dim: int) -> int:
    """Index of transceiver ``node_id``'s delay inside the state vector."""
    if not 1 <= node_id <= n_nodes - 1:
        raise ValueError(f"node {node_id} is not a transceiver (1..{n_nodes - 1})")
    return dim * n_nodes + node_id - 1


# ---------------------------------------------------------------------------
# geometry


def pairwise_ranges(positions) -> np.ndarray:
    """Euclidean distances for all node pairs, in lexicographic pair order."""
    positions = as_float_array(positions, "positions", ndim=2)
    first, second = _pair_arrays(positions.shape[0])
    diff = positions[first] - positions[second]
    return np.sqrt(np.sum(diff * diff, axis=1))


def range_delay_vector(state: StateVector) -> np.ndarray:
    """All pairwise ranges followed by the turn-around delays."""
    return np.concatenate([pairwise_ranges(state.positions), state.delays])


def range_delay_jacobian(state: StateVector) -> np.ndarray:
    """Jacobian of :func:`range_delay_vector` with respect to the state.

    Range rows hold the unit direction between the pair's nodes (positive
    under the lower-id node's coordinates, negative under the other); delay
    rows are an identity block. Shape:
    ``(n_pairs + n_nodes - 1, state_length)``.

    Raises:
        DegenerateGeometry: if any pair is closer than ``MIN_RANGE`` meters.
    """
    positions = state.positions
    n, d = positions.shape
    first, second = _pair_arrays(n)
    diff = positions[first] - positions[second]
    rho = np.sqrt(np.sum(diff * diff, axis=1))
    if rho.size and rho.min() < MIN_RANGE:
        k = int(np.argmin(rho))
        raise DegenerateGeometry(
            f"nodes {first[k] + 1} and {second[k] + 1} nearly coincide "
            f"(range {rho[k]:.3e} m)"
        )
    unit = diff / rho[:, None]

    n_pairs = rho.shape[0]
    n_delays = n - 1
    jac = np.zeros((n_pairs + n_delays, state_length(n, d)))
    rows = np.repeat(np.arange(n_pairs), d)
    cols_a = (first[:, None] * d + np.arange(d)[None, :]).ravel()
    cols_b = (second[:, None] * d + np.arange(d)[None, :]).ravel()
    jac[rows, cols_a] = unit.ravel()
    jac[rows, cols_b] = -unit.ravel()
    jac[n_pairs:, d * n :] = np.eye(n_delays)
    return jac


# ---------------------------------------------------------------------------
# transmission sequence and observation structure


def check_sequence(sequence, n_nodes: int):
    """Validate a transmission sequence; returns it as a tuple of ints."""
    seq = tuple(int(s) for s in sequence)
    if len(seq) < 2:
        raise InvalidSequence(f"sequence needs at least two entries, got {len(seq)}")
    for k, s in enumerate(seq):
        if not 1 <= s <= n_nodes - 1:
            raise InvalidSequence(
                f"sequence[{k}] = {s}: transmitters must lie in 1..{n_nodes - 1} "
                f"(node {n_nodes} is the passive receiver)"
            )
    for k in range(len(seq) - 1):
        if seq[k] == seq[k + 1]:
            raise InvalidSequence(f"sequence[{k}:{k + 2}] repeats node {seq[k]}")
    return seq


def sequence_covers_all_pairs(sequence, n_nodes: int) -> bool:
    """True if every unordered transceiver pair appears consecutively."""
    seen = set()
    for i, j in zip(sequence[:-1], sequence[1:]):
        seen.add((min(i, j), max(i, j)))
    need = {(a, b) for a in range(1, n_nodes - 1) for b in range(a + 1, n_nodes)}
    return need <= seen


def generate_sequence(n_nodes: int) -> Tuple[int, ...]:
    """Round-robin sequence covering every transceiver pair consecutively.

    Starts with a star out of node 1 (1,2,1,3,...,1,K) and then appends the
    remaining pairs in lexicographic order, skipping a repeated transmitter
    when the previous entry already matches.
    """
    k = n_nodes - 1
    if k < 2:
        raise InvalidSequence(f"need at least 2 transceivers, got {k}")
    seq = []
    for b in range(2, k + 1):
        seq.extend([1, b])
    for a in range(2, k + 1):
        for b in range(a + 1, k + 1):
            if seq[-1] != a:
                seq.append(a)
            seq.append(b)
    return tuple(seq)


def mapping_matrix(sequence, n_nodes: int, c: float) -> np.ndarray:
    """Matrix mapping the range/delay vector to observed intervals (times c).

    Row m corresponds to the consecutive transmissions ``i = sequence[m]``,
    ``j = sequence[m + 1]`` and carries +1 at range column {i, j}, +1 at
    {j, N}, -1 at {i, N}, and ``c`` at delay column j. Dividing the product
    ``mapping @ range_delay_vector`` by ``c`` yields intervals in seconds.
    """
    seq = check_sequence(sequence, n_nodes)
    n_obs = len(seq) - 1
    n_ranges = n_pair_slots(n_nodes)
    h = np.zeros((n_obs, n_ranges + n_nodes - 1))
    for m in range(n_obs):
        i, j = seq[m], seq[m + 1]
        h[m, pair_slot(i, j, n_nodes)] = 1.0
        h[m, pair_slot(j, n_nodes, n_nodes)] = 1.0
        h[m, pair_slot(i, n_nodes, n_nodes)] = -1.0
        h[m, n_ranges + j - 1] = c
    return h


def noise_correlation(n_obs: int) -> np.ndarray:
    """Unit-diagonal correlation of the interval noise (1/3 between neighbors)."""
    if n_obs < 1:
        raise DimensionMismatch(f"need at least one observation, got {n_obs}")
    q = np.eye(n_obs)
    idx = np.arange(n_obs - 1)
    q[idx, idx + 1] = 1.0 / 3.0
    q[idx + 1, idx] = 1.0 / 3.0
    return q


def predict_intervals(state: StateVector, mapping, c: float) -> np.ndarray:
    """Noise-free observed intervals (seconds) for a given state."""
    mapping = as_float_array(mapping, "mapping", ndim=2)
    vec = range_delay_vector(state)
    if mapping.shape[1] != vec.shape[0]:
        raise DimensionMismatch(
            f"mapping has {mapping.shape[1]} columns, expected {vec.shape[0]}"
        )
    return mapping @ vec / c


# ---------------------------------------------------------------------------
# scenario description


@dataclass(frozen=True)
class NodeSpec:
    """Role and configuration of one node.

    Anchors carry an informative position prior (mean + isotropic sigma) and
    their true positions are drawn from it per trial. Auxiliary nodes and the
    receiver have noninformative priors and take their true positions from
    the scenario configuration.
    """

    node_id: int
    role: str
    prior_mean: Optional[np.ndarray] = None
    prior_sigma: Optional[float] = None
    truth: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"node {self.node_id}: unknown role {self.role!r}")
        if self.prior_mean is not None:
            object.__setattr__(
                self, "prior_mean", as_float_array(self.prior_mean, "prior_mean", ndim=1)
            )
        if self.truth is not None:
            object.__setattr__(self, "truth", as_float_array(self.truth, "truth", ndim=1))
        if self.role == "anchor":
            if self.prior_mean is None:
                raise ConfigError(f"node {self.node_id}: anchors need a prior_mean")
            if self.prior_sigma is None or self.prior_sigma <= 0:
                raise ConfigError(
                    f"node {self.node_id}: anchors need prior_sigma > 0, "
                    f"got {self.prior_sigma}"
                )
        elif self.truth is None:
            raise MissingTruth(
                f"node {self.node_id} ({self.role}): a true position is required "
                "because this node is never drawn from a prior"
            )


@dataclass(frozen=True)
class Scenario:
    """Full description of a network instance.

    ``sigma`` is the timing-noise standard deviation (seconds) used when
    synthesizing observations; ``mu_delta``/``sigma_delta`` parameterize the
    Gaussian prior on all turn-around delays. ``aux_init_offset`` places the
    default initialization of auxiliary nodes relative to the anchor
    centroid.
    """

    dim: int
    c: float
    sigma: float
    mu_delta: float
    sigma_delta: float
    nodes: Tuple[NodeSpec, ...]
    sequence: Tuple[int, ...]
    aux_init_offset: Tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda s: s.node_id))
        object.__setattr__(self, "nodes", nodes)
        n = len(nodes)
        if n < 3:
            raise ConfigError(f"need at least 3 nodes, got {n}")
        if [s.node_id for s in nodes] != list(range(1, n + 1)):
            raise ConfigError("node ids must be exactly 1..N with no gaps")
        receivers = [s.node_id for s in nodes if s.role == "receiver"]
        if receivers != [n]:
            raise ConfigError(
                f"exactly one receiver with the highest id {n} is required, "
                f"got receivers at {receivers}"
            )
        if not any(s.role == "anchor" for s in nodes):
            raise ConfigError("at least one anchor is required")
        for s in nodes:
            want = (self.dim,)
            for label, arr in (("prior_mean", s.prior_mean), ("truth", s.truth)):
                if arr is not None and arr.shape != want:
                    raise ConfigError(
                        f"node {s.node_id}: {label} has shape {arr.shape}, expected {want}"
                    )
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.sigma_delta < 0:
            raise ConfigError(f"sigma_delta must be >= 0, got {self.sigma_delta}")
        if self.c <= 0:
            raise ConfigError(f"c must be > 0, got {self.c}")
        if len(self.aux_init_offset) != self.dim:
            raise ConfigError(
                f"aux_init_offset needs {self.dim} entries, got {len(self.aux_init_offset)}"
            )
        object.__setattr__(self, "sequence", check_sequence(self.sequence, n))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def receiver_id(self) -> int:
        return self.n_nodes

    @property
    def anchor_ids(self) -> Tuple[int, ...]:
        return tuple(s.node_id for s in self.nodes if s.role == "anchor")

    @property
    def unknown_ids(self) -> Tuple[int, ...]:
        """Nodes whose positions carry no informative prior."""
        return tuple(s.node_id for s in self.nodes if s.role != "anchor")

    @property
    def n_observations(self) -> int:
        return len(self.sequence) - 1

    @property
    def state_size(self) -> int:
        return state_length(self.n_nodes, self.dim)

    def node(self, node_id: int) -> NodeSpec:
        return self.nodes[node_id - 1]


@dataclass(eq=False)
class ObservationSet:
    """One synthesized (or measured) batch of interval observations."""

    y: np.ndarray
    mapping: np.ndarray
    correlation: np.ndarray
    sequence: Tuple[int, ...]
    c: float
    n_nodes: int
    dim: int
    _factor: Optional[CholeskyFactor] = field(default=None, repr=False)

    def __post_init__(self):
        self.y = as_float_array(self.y, "y", ndim=1)
        n_obs = len(self.sequence) - 1
        if self.y.shape[0] != n_obs:
            raise DimensionMismatch(
                f"y: expected {n_obs} observations for this sequence, got {self.y.shape[0]}"
            )
        if self.mapping.shape[0] != n_obs or self.correlation.shape != (n_obs, n_obs):
            raise DimensionMismatch("mapping/correlation shapes inconsistent with y")

    @property
    def n_observations(self) -> int:
        return self.y.shape[0]

    @property
    def correlation_factor(self) -> CholeskyFactor:
        """Cached Cholesky factor of the noise correlation matrix."""
        if self._factor is None:
            self._factor = cholesky_spd(self.correlation)
        return self._factor


def observation_structure(scenario: Scenario):
    """(mapping, correlation, factor) shared by every draw of a scenario."""
    mapping = mapping_matrix(scenario.sequence, scenario.n_nodes, scenario.c)
    correlation = noise_correlation(scenario.n_observations)
    return mapping, correlation, cholesky_spd(correlation)
