"""Command-line interface: scenario files, experiment campaigns, CSV output.

Subcommands
-----------

* ``run``          — Monte Carlo campaign for one experiment kind; writes one
                     CSV per kind plus ``summary.csv`` and ``manifest.json``.
* ``estimate``     — run the estimator once on an observation file.
* ``bound``        — hybrid CRB for a scenario.
* ``gen-scenario`` — emit a scenario template to edit.

Outputs are deterministic: a fixed ``--seed`` reproduces byte-identical
CSV files. Scenario files are YAML key-value documents (see the bundled
``nominal.scenario`` for the format).
"""

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from scipy.stats import chi2

from . import __version__
from .bound import BoundResult, error_ellipse, hybrid_crb, rmse_from_mse
from .errors import CollisionError, ConfigError
from .estimate import build_prior, default_initial_state, map_estimate
from .model import (
    NodeSpec,
    ObservationSet,
    Scenario,
    generate_sequence,
    observation_structure,
    position_slice,
    sequence_covers_all_pairs,
)
from .simulate import sample_truth, substream, synthesize_observations, validate_no_collision

EXPERIMENT_KINDS = (
    "ellipses",
    "rmse_vs_sigma",
    "rmse_vs_sigma_delta",
    "delay_rmse",
    "multi_auxiliary",
    "convergence_hist",
    "prior_mismatch",
)

# Default sweep grids (seconds / meters).
SIGMA_GRID = tuple(s * 1e-9 for s in (0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0))
ANCHOR_SIGMA_VALUES = (0.03, 0.2)
DELAY_SIGMA_VALUES = (1e-9, 1e-7)
SWEEP_ANCHOR_SIGMA = 0.03

ELLIPSE_CONFIDENCE = 0.99

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

FAILURE_RATE_LIMIT = 0.10


# ---------------------------------------------------------------------------
# scenario file handling


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"{context}: missing required field {key!r}")
    return mapping[key]


def scenario_from_dict(doc: dict, origin: str = "scenario") -> Scenario:
    """Build and validate a Scenario from a parsed configuration document."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{origin}: expected a mapping at the top level")
    dim = int(_require(doc, "dim", origin))
    c = float(_require(doc, "c", origin))
    sigma = float(_require(doc, "sigma", origin))
    mu_delta = float(_require(doc, "mu_delta", origin))
    sigma_delta = float(_require(doc, "sigma_delta", origin))
    raw_nodes = _require(doc, "nodes", origin)
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ConfigError(f"{origin}.nodes: expected a non-empty list")

    nodes = []
    for k, entry in enumerate(raw_nodes):
        ctx = f"{origin}.nodes[{k}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{ctx}: expected a mapping")
        try:
            nodes.append(
                NodeSpec(
                    node_id=int(_require(entry, "id", ctx)),
                    role=str(_require(entry, "role", ctx)),
                    prior_mean=entry.get("prior_mean"),
                    prior_sigma=(
                        float(entry["prior_sigma"]) if entry.get("prior_sigma") is not None else None
                    ),
                    truth=entry.get("truth"),
                )
            )
        except (ConfigError, ValueError) as exc:
            raise ConfigError(f"{ctx}: {exc}") from exc

    n = len(nodes)
    raw_seq = doc.get("sequence", "auto")
    if isinstance(raw_seq, str):
        if raw_seq != "auto":
            raise ConfigError(f"{origin}.sequence: expected 'auto' or a list, got {raw_seq!r}")
        sequence = generate_sequence(n)
    else:
        sequence = tuple(int(s) for s in raw_seq)

    offset = doc.get("aux_init_offset", [1.0] * dim)
    try:
        scenario = Scenario(
            dim=dim,
            c=c,
            sigma=sigma,
            mu_delta=mu_delta,
            sigma_delta=sigma_delta,
            nodes=tuple(nodes),
            sequence=sequence,
            aux_init_offset=tuple(float(v) for v in offset),
        )
    except (ConfigError, ValueError) as exc:
        raise ConfigError(f"{origin}: {exc}") from exc

    if not sequence_covers_all_pairs(scenario.sequence, n) and not doc.get(
        "allow_partial_sequence", False
    ):
        raise ConfigError(
            f"{origin}.sequence: not every transceiver pair transmits consecutively; "
            "set allow_partial_sequence: true to accept reduced observability"
        )
    return scenario


def load_scenario(path) -> Scenario:
    """Load and validate a scenario file (YAML key-value document)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    return scenario_from_dict(doc, origin=str(path))


def bundled_scenario_path(name: str) -> Path:
    """Filesystem path of a scenario shipped with the package."""
    ref = resources.files("asyncloc").joinpath(f"scenarios/{name}.scenario")
    with resources.as_file(ref) as real:
        return Path(real)


def scenario_with(
    scenario: Scenario,
    sigma: Optional[float] = None,
    anchor_sigma: Optional[float] = None,
    delay_sigma: Optional[float] = None,
) -> Scenario:
    """Copy of a scenario with selected noise/prior levels replaced."""
    nodes = scenario.nodes
    if anchor_sigma is not None:
        nodes = tuple(
            dataclasses.replace(s, prior_sigma=anchor_sigma) if s.role == "anchor" else s
            for s in nodes
        )
    return dataclasses.replace(
        scenario,
        sigma=scenario.sigma if sigma is None else sigma,
        sigma_delta=scenario.sigma_delta if delay_sigma is None else delay_sigma,
        nodes=nodes,
    )


# ---------------------------------------------------------------------------
# campaign machinery


@dataclass
class ExperimentSpec:
    """Parameters of one ``run`` invocation."""

    scenario_path: str
    kind: str
    trials: int = 1000
    seed: int = 1234
    out_dir: str = "."
    strict_collision: bool = False
    ridge: bool = False
    workers: int = 1
    mc_samples: int = 1000
    mismatch_factor: float = 10.0
    sigma_grid: Tuple[float, ...] = SIGMA_GRID


@dataclass
class PointStats:
    """Aggregated Monte Carlo results at one sweep point."""

    n_trials: int
    n_converged: int
    n_failed: int
    n_collisions: int
    mse: np.ndarray
    mean_state: np.ndarray
    outer_counts: List[int]
    bound: BoundResult

    @property
    def convergence_rate(self) -> float:
        return self.n_converged / self.n_trials if self.n_trials else 0.0

    @property
    def mean_outer(self) -> float:
        counted = [k for k in self.outer_counts if k > 0]
        return float(np.mean(counted)) if counted else float("nan")


_POOL_CTX: dict = {}


def _pool_init(ctx):
    _POOL_CTX.update(ctx)


def _pool_trial(t):
    return _one_trial(t, **_POOL_CTX)


def _one_trial(t, scenario, prior, init, structure, seed, point_key, ridge, strict):
    """Synthesize one trial and estimate; returns a compact result tuple."""
    rng = substream(seed, point_key, 1 + t)
    truth = sample_truth(scenario, rng)
    collided = not validate_no_collision(truth, scenario)
    if collided and strict:
        raise CollisionError(
            f"trial {t}: a turn-around delay is below the maximum flight time"
        )
    obs = synthesize_observations(truth, scenario, rng, structure)
    try:
        result = map_estimate(obs, prior, init, ridge=ridge)
    except Exception:
        return None, -1, False, collided
    err = result.state.vector - truth.state.vector
    return (
        (err, result.state.vector.copy()),
        result.outer_iterations,
        result.converged,
        collided,
    )


def run_point_campaign(
    scenario: Scenario,
    trials: int,
    seed: int,
    point_key: int,
    prior_scale: float = 1.0,
    mc_samples: int = 1000,
    ridge: bool = False,
    strict_collision: bool = False,
    workers: int = 1,
) -> PointStats:
    """Monte Carlo campaign at one sweep point.

    The estimator uses a prior with anchor sigmas scaled by ``prior_scale``;
    truth generation and the bound always use the configured (true) prior.
    Per-trial random substreams are keyed by (seed, point, trial), so results
    are independent of worker scheduling.
    """
    structure = observation_structure(scenario)
    prior_est = build_prior(scenario, anchor_sigma_scale=prior_scale)
    prior_true = build_prior(scenario)
    init = default_initial_state(scenario)
    bound = hybrid_crb(
        scenario,
        prior=prior_true,
        mc_samples=mc_samples,
        rng=substream(seed, point_key, 0),
    )

    ctx = dict(
        scenario=scenario,
        prior=prior_est,
        init=init,
        structure=structure,
        seed=seed,
        point_key=point_key,
        ridge=ridge,
        strict=strict_collision,
    )
    if workers > 1:
        import multiprocessing as mp

        with mp.Pool(workers, initializer=_pool_init, initargs=(ctx,)) as pool:
            results = pool.map(_pool_trial, range(trials), chunksize=max(1, trials // (4 * workers)))
    else:
        results = [_one_trial(t, **ctx) for t in range(trials)]

    size = scenario.state_size
    mse_sum = np.zeros((size, size))
    state_sum = np.zeros(size)
    outer_counts: List[int] = []
    n_converged = 0
    n_failed = 0
    n_collisions = 0
    for payload, outer, converged, collided in results:
        outer_counts.append(outer)
        n_collisions += int(collided)
        if payload is None:
            n_failed += 1
            continue
        if converged:
            err, est = payload
            mse_sum += np.outer(err, err)
            state_sum += est
            n_converged += 1

    mse = mse_sum / n_converged if n_converged else np.full((size, size), np.nan)
    mean_state = state_sum / n_converged if n_converged else np.full(size, np.nan)
    return PointStats(
        n_trials=trials,
        n_converged=n_converged,
        n_failed=n_failed,
        n_collisions=n_collisions,
        mse=mse,
        mean_state=mean_state,
        outer_counts=outer_counts,
        bound=bound,
    )


def unknown_position_indices(scenario: Scenario) -> np.ndarray:
    """State-vector indices of all coordinates with noninformative priors."""
    idx: List[int] = []
    for i in scenario.unknown_ids:
        sl = position_slice(i, scenario.dim)
        idx.extend(range(sl.start, sl.stop))
    return np.array(idx, dtype=int)


def delay_indices(scenario: Scenario) -> np.ndarray:
    return np.arange(scenario.dim * scenario.n_nodes, scenario.state_size)


def point_rmse_row(scenario: Scenario, stats: PointStats) -> Dict[str, float]:
    """Estimator RMSE and matching bound values for one sweep point."""
    theta_u = unknown_position_indices(scenario)
    delays = delay_indices(scenario)
    n_u = len(scenario.unknown_ids)
    n_d = scenario.n_nodes - 1
    cov = stats.bound.covariance_bound
    return {
        "rmse_theta_u": rmse_from_mse(stats.mse[np.ix_(theta_u, theta_u)], n_u),
        "hcrb_theta_u": rmse_from_mse(cov[np.ix_(theta_u, theta_u)], n_u),
        "rmse_delta": rmse_from_mse(stats.mse[np.ix_(delays, delays)], n_d),
        "hcrb_delta": rmse_from_mse(cov[np.ix_(delays, delays)], n_d),
    }


# ---------------------------------------------------------------------------
# CSV output


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


ELLIPSE_HEADER = (
    "node_id",
    "role",
    "nominal_x",
    "nominal_y",
    "mean_est_x",
    "mean_est_y",
    "mse_xx",
    "mse_xy",
    "mse_yy",
    "bound_xx",
    "bound_xy",
    "bound_yy",
    "mse_major",
    "mse_minor",
    "mse_angle_rad",
    "bound_major",
    "bound_minor",
    "bound_angle_rad",
    "chi2_scale",
    "n_trials",
)

RMSE_HEADER = (
    "sigma_s",
    "sweep_label",
    "sweep_value",
    "rmse_theta_u",
    "hcrb_theta_u",
    "rmse_delta",
    "hcrb_delta",
    "mean_outer_iterations",
    "convergence_rate",
    "n_trials",
)

HIST_HEADER = ("outer_iterations", "count")

MISMATCH_HEADER = (
    "sigma_s",
    "mismatch_factor",
    "rmse_theta_u",
    "hcrb_theta_u",
    "ratio_theta_u",
    "rmse_delta",
    "hcrb_delta",
    "ratio_delta",
    "convergence_rate",
    "n_trials",
)


def ellipse_rows(scenario: Scenario, stats: PointStats) -> List[List]:
    if scenario.dim != 2:
        raise ConfigError("ellipse output requires a 2-d scenario")
    scale = float(chi2.ppf(ELLIPSE_CONFIDENCE, df=2))
    rows = []
    for spec in scenario.nodes:
        sl = position_slice(spec.node_id, 2)
        nominal = spec.prior_mean if spec.role == "anchor" else spec.truth
        mse_block = stats.mse[sl, sl]
        bound_block = stats.bound.position_blocks[spec.node_id - 1]
        mse_el = error_ellipse(mse_block, ELLIPSE_CONFIDENCE)
        bound_el = error_ellipse(bound_block, ELLIPSE_CONFIDENCE)
        rows.append(
            [
                spec.node_id,
                spec.role,
                nominal[0],
                nominal[1],
                stats.mean_state[sl][0],
                stats.mean_state[sl][1],
                mse_block[0, 0],
                mse_block[0, 1],
                mse_block[1, 1],
                bound_block[0, 0],
                bound_block[0, 1],
                bound_block[1, 1],
                mse_el[0],
                mse_el[1],
                mse_el[2],
                bound_el[0],
                bound_el[1],
                bound_el[2],
                scale,
                stats.n_trials,
            ]
        )
    return rows


# ---------------------------------------------------------------------------
# experiment driver


def run_experiment(spec: ExperimentSpec) -> dict:
    """Run one experiment kind and write its outputs.

    Returns a manifest dictionary (also written to ``manifest.json``) whose
    ``max_failure_rate`` entry feeds the CLI exit code.
    """
    if spec.kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {spec.kind!r}; choose from {EXPERIMENT_KINDS}")
    if spec.trials < 1:
        raise ConfigError(f"trials must be >= 1, got {spec.trials}")
    scenario = load_scenario(spec.scenario_path)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    common = dict(
        mc_samples=spec.mc_samples,
        ridge=spec.ridge,
        strict_collision=spec.strict_collision,
        workers=spec.workers,
    )

    outputs: List[str] = []
    kind_stats: dict = {}
    max_failure = 0.0

    def campaign(variant, point_key, prior_scale=1.0):
        nonlocal max_failure
        stats = run_point_campaign(
            variant,
            trials=spec.trials,
            seed=spec.seed,
            point_key=point_key,
            prior_scale=prior_scale,
            **common,
        )
        max_failure = max(max_failure, 1.0 - stats.convergence_rate)
        return stats

    if spec.kind in ("ellipses", "multi_auxiliary"):
        stats = campaign(scenario, 0)
        path = out_dir / f"{spec.kind}.csv"
        write_csv(path, ELLIPSE_HEADER, ellipse_rows(scenario, stats))
        outputs.append(path.name)
        kind_stats = {
            "mean_outer_iterations": stats.mean_outer,
            "convergence_rate": stats.convergence_rate,
            "collisions": stats.n_collisions,
            **point_rmse_row(scenario, stats),
        }

    elif spec.kind in ("rmse_vs_sigma", "rmse_vs_sigma_delta", "delay_rmse"):
        if spec.kind == "rmse_vs_sigma":
            variants = [("anchor_sigma", v, dict(anchor_sigma=v)) for v in ANCHOR_SIGMA_VALUES]
        else:
            variants = [
                ("delay_sigma", v, dict(anchor_sigma=SWEEP_ANCHOR_SIGMA, delay_sigma=v))
                for v in DELAY_SIGMA_VALUES
            ]
        rows = []
        point = 0
        for label, value, overrides in variants:
            for sigma in spec.sigma_grid:
                variant = scenario_with(scenario, sigma=sigma, **overrides)
                stats = campaign(variant, point)
                point += 1
                r = point_rmse_row(variant, stats)
                rows.append(
                    [
                        sigma,
                        label,
                        value,
                        r["rmse_theta_u"],
                        r["hcrb_theta_u"],
                        r["rmse_delta"],
                        r["hcrb_delta"],
                        stats.mean_outer,
                        stats.convergence_rate,
                        stats.n_trials,
                    ]
                )
        path = out_dir / f"{spec.kind}.csv"
        write_csv(path, RMSE_HEADER, rows)
        outputs.append(path.name)
        kind_stats = {"sweep_points": point}

    elif spec.kind == "convergence_hist":
        stats = campaign(scenario, 0)
        counts = np.bincount([k for k in stats.outer_counts if k > 0])
        rows = [[k, int(counts[k])] for k in range(len(counts)) if counts[k] > 0]
        path = out_dir / f"{spec.kind}.csv"
        write_csv(path, HIST_HEADER, rows)
        outputs.append(path.name)
        kind_stats = {
            "mean_outer_iterations": stats.mean_outer,
            "convergence_rate": stats.convergence_rate,
        }

    elif spec.kind == "prior_mismatch":
        stats = campaign(scenario, 0, prior_scale=spec.mismatch_factor)
        r = point_rmse_row(scenario, stats)
        rows = [
            [
                scenario.sigma,
                spec.mismatch_factor,
                r["rmse_theta_u"],
                r["hcrb_theta_u"],
                r["rmse_theta_u"] / r["hcrb_theta_u"],
                r["rmse_delta"],
                r["hcrb_delta"],
                r["rmse_delta"] / r["hcrb_delta"],
                stats.convergence_rate,
                stats.n_trials,
            ]
        ]
        path = out_dir / f"{spec.kind}.csv"
        write_csv(path, MISMATCH_HEADER, rows)
        outputs.append(path.name)
        kind_stats = {"ratio_theta_u": r["rmse_theta_u"] / r["hcrb_theta_u"]}

    summary_path = out_dir / "summary.csv"
    write_csv(
        summary_path,
        ("kind", "file", "seed", "trials", "scenario"),
        [[spec.kind, name, spec.seed, spec.trials, Path(spec.scenario_path).name] for name in outputs],
    )

    manifest = {
        "version": f"asyncloc {__version__}",
        "kind": spec.kind,
        "seed": spec.seed,
        "trials": spec.trials,
        "mc_samples": spec.mc_samples,
        "scenario": Path(spec.scenario_path).name,
        "outputs": outputs + [summary_path.name],
        "stats": kind_stats,
        "max_failure_rate": max_failure,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# scenario templates


def nominal_scenario_dict() -> dict:
    return {
        "dim": 2,
        "c": 299792458.0,
        "sigma": 2.0e-9,
        "mu_delta": 1.0e-6,
        "sigma_delta": 1.0e-8,
        "aux_init_offset": [1.0, 1.0],
        "sequence": "auto",
        "nodes": [
            {"id": 1, "role": "anchor", "prior_mean": [0.0, 0.0], "prior_sigma": 0.2},
            {"id": 2, "role": "anchor", "prior_mean": [10.0, 0.0], "prior_sigma": 0.2},
            {"id": 3, "role": "anchor", "prior_mean": [10.0, 10.0], "prior_sigma": 0.2},
            {"id": 4, "role": "anchor", "prior_mean": [0.0, 10.0], "prior_sigma": 0.2},
            {"id": 5, "role": "auxiliary", "truth": [7.0, 3.0]},
            {"id": 6, "role": "receiver", "truth": [4.0, 6.0]},
        ],
    }


def multi_aux_scenario_dict() -> dict:
    aux_positions = [
        [2.0, 2.0],
        [5.0, 2.0],
        [8.0, 2.0],
        [2.0, 5.0],
        [5.0, 5.0],
        [8.0, 5.0],
        [2.0, 8.0],
        [5.0, 8.0],
        [8.0, 8.0],
        [6.5, 3.5],
    ]
    nodes = [
        {"id": 1, "role": "anchor", "prior_mean": [0.0, 0.0], "prior_sigma": 0.2},
        {"id": 2, "role": "anchor", "prior_mean": [10.0, 0.0], "prior_sigma": 0.2},
        {"id": 3, "role": "anchor", "prior_mean": [10.0, 10.0], "prior_sigma": 0.2},
        {"id": 4, "role": "anchor", "prior_mean": [0.0, 10.0], "prior_sigma": 0.2},
    ]
    nodes += [
        {"id": 5 + k, "role": "auxiliary", "truth": pos} for k, pos in enumerate(aux_positions)
    ]
    nodes.append({"id": 15, "role": "receiver", "truth": [4.5, 6.5]})
    doc = nominal_scenario_dict()
    doc["nodes"] = nodes
    return doc


SCENARIO_FLAVORS = {"nominal": nominal_scenario_dict, "multi-aux": multi_aux_scenario_dict}


# ---------------------------------------------------------------------------
# subcommands


def _default_scenario_path(kind: Optional[str]) -> Path:
    name = "multi_aux" if kind == "multi_auxiliary" else "nominal"
    return bundled_scenario_path(name)


def cmd_run(args) -> int:
    scenario_path = args.scenario or _default_scenario_path(args.kind)
    sigma_grid = SIGMA_GRID
    if args.sigmas:
        sigma_grid = tuple(float(s) * 1e-9 for s in args.sigmas.split(","))
    spec = ExperimentSpec(
        scenario_path=str(scenario_path),
        kind=args.kind,
        trials=args.trials,
        seed=args.seed,
        out_dir=args.out,
        strict_collision=args.strict_collision,
        ridge=args.ridge,
        workers=args.workers,
        mc_samples=args.mc_samples,
        mismatch_factor=args.mismatch_factor,
        sigma_grid=sigma_grid,
    )
    manifest = run_experiment(spec)
    print(f"wrote {', '.join(manifest['outputs'])} to {args.out}")
    if manifest["max_failure_rate"] > FAILURE_RATE_LIMIT:
        print(
            f"failure rate {manifest['max_failure_rate']:.1%} exceeds "
            f"{FAILURE_RATE_LIMIT:.0%}",
            file=sys.stderr,
        )
        return EXIT_RUNTIME
    return EXIT_OK


def _read_observation_file(path: Path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "y" not in reader.fieldnames:
                raise ConfigError(f"{path}: expected a CSV with a 'y' column")
            values = [float(row["y"]) for row in reader]
    except OSError as exc:
        raise ConfigError(f"cannot read observation file {path}: {exc}") from exc
    if not values:
        raise ConfigError(f"{path}: no observations found")
    return np.array(values)


def cmd_estimate(args) -> int:
    scenario_path = args.scenario or _default_scenario_path(None)
    scenario = load_scenario(scenario_path)
    y = _read_observation_file(Path(args.obs))
    if y.shape[0] != scenario.n_observations:
        raise ConfigError(
            f"{args.obs}: {y.shape[0]} observations, but the scenario sequence "
            f"produces {scenario.n_observations}"
        )
    mapping, correlation, factor = observation_structure(scenario)
    obs = ObservationSet(
        y=y,
        mapping=mapping,
        correlation=correlation,
        sequence=scenario.sequence,
        c=scenario.c,
        n_nodes=scenario.n_nodes,
        dim=scenario.dim,
        _factor=factor,
    )
    result = map_estimate(
        obs,
        build_prior(scenario),
        default_initial_state(scenario),
        ridge=args.ridge,
    )
    positions = result.state.positions
    payload = {
        "positions": {str(i + 1): [float(v) for v in positions[i]] for i in range(scenario.n_nodes)},
        "delays": {str(j + 1): float(v) for j, v in enumerate(result.state.delays)},
        "sigma2": result.sigma2,
        "sigma_hat": float(np.sqrt(result.sigma2)),
        "outer_iterations": result.outer_iterations,
        "inner_iterations": result.inner_iterations,
        "converged": result.converged,
        "cost": result.cost,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "estimate.json").write_text(text + "\n")
    return EXIT_OK if result.converged else EXIT_RUNTIME


def cmd_bound(args) -> int:
    scenario_path = args.scenario or _default_scenario_path(None)
    scenario = load_scenario(scenario_path)
    result = hybrid_crb(
        scenario,
        mc_samples=args.samples,
        rng=substream(args.seed, 0),
    )
    theta_u = unknown_position_indices(scenario)
    delays = delay_indices(scenario)
    cov = result.covariance_bound
    payload = {
        "mc_samples": result.mc_samples,
        "position_bound_traces": {
            str(i + 1): float(np.trace(result.position_blocks[i]))
            for i in range(scenario.n_nodes)
        },
        "rmse_theta_u": rmse_from_mse(
            cov[np.ix_(theta_u, theta_u)], len(scenario.unknown_ids)
        ),
        "rmse_delta": rmse_from_mse(cov[np.ix_(delays, delays)], scenario.n_nodes - 1),
        "sigma2_var_bound": result.sigma2_var_bound,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "bound.json").write_text(text + "\n")
    return EXIT_OK


def cmd_gen_scenario(args) -> int:
    doc = SCENARIO_FLAVORS[args.flavor]()
    text = yaml.safe_dump(doc, sort_keys=False)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asyncloc",
        description="Passive self-localization in asynchronous ranging networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo experiment campaign")
    run.add_argument("--scenario", help="scenario file (default: bundled nominal)")
    run.add_argument("--kind", required=True, choices=EXPERIMENT_KINDS)
    run.add_argument("--trials", type=int, default=1000)
    run.add_argument("--seed", type=int, default=1234)
    run.add_argument("--out", default=".", help="output directory")
    run.add_argument("--strict-collision", action="store_true", help="abort on delay/flight-time collisions")
    run.add_argument("--ridge", action="store_true", help="add a tiny diagonal ridge to the normal equations")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--mc-samples", type=int, default=1000, help="bound Monte Carlo samples")
    run.add_argument("--mismatch-factor", type=float, default=10.0)
    run.add_argument("--sigmas", help="comma-separated sweep noise levels in ns (overrides default grid)")
    run.set_defaults(func=cmd_run)

    est = sub.add_parser("estimate", help="estimate from one observation file")
    est.add_argument("--scenario", help="scenario file (default: bundled nominal)")
    est.add_argument("--obs", required=True, help="CSV file with a 'y' column (seconds)")
    est.add_argument("--out", help="directory for estimate.json")
    est.add_argument("--ridge", action="store_true")
    est.set_defaults(func=cmd_estimate)

    bnd = sub.add_parser("bound", help="hybrid CRB for a scenario")
    bnd.add_argument("--scenario", help="scenario file (default: bundled nominal)")
    bnd.add_argument("--samples", type=int, default=1000)
    bnd.add_argument("--seed", type=int, default=1234)
    bnd.add_argument("--out", help="directory for bound.json")
    bnd.set_defaults(func=cmd_bound)

    gen = sub.add_parser("gen-scenario", help="emit a scenario template")
    gen.add_argument("--out", required=True)
    gen.add_argument("--flavor", choices=sorted(SCENARIO_FLAVORS), default="nominal")
    gen.set_defaults(func=cmd_gen_scenario)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CollisionError as exc:
        print(f"collision: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
