"""Render asyncloc experiment CSVs into deterministic SVG figures.

The input schemas are the CSV headers written by the ``asyncloc run``
command; this package consumes those files only and never imports the
estimator. Six figure kinds are supported:

- ``ellipses`` / ``multi_auxiliary`` — per-node scatter with two ellipse
  families: the covariance bound (solid black) and the measured MSE
  (dashed red). Semi-axes arrive pre-scaled to 99% confidence in the CSV
  (the ``chi2_scale`` column records the factor applied upstream).
- ``rmse_vs_sigma`` / ``rmse_vs_sigma_delta`` — position RMSE and its bound
  against the timing-noise level, log-log, one curve pair per sweep value.
- ``delay_rmse`` — same layout for the turn-around-delay RMSE.
- ``convergence_hist`` — histogram of outer iteration counts.

Rendering is a pure function of the CSV: byte-identical inputs produce
byte-identical SVG output (fixed hash salt, no timestamps).
"""

import argparse
import csv
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "asyncloc-figures"

import matplotlib.pyplot as plt
from matplotlib.lines import Line2D
from matplotlib.patches import Ellipse


class SchemaError(ValueError):
    """The CSV does not match the documented schema for the figure kind."""


ELLIPSE_COLUMNS = (
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

RMSE_COLUMNS = (
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

HIST_COLUMNS = ("outer_iterations", "count")

KIND_COLUMNS = {
    "ellipses": ELLIPSE_COLUMNS,
    "multi_auxiliary": ELLIPSE_COLUMNS,
    "rmse_vs_sigma": RMSE_COLUMNS,
    "rmse_vs_sigma_delta": RMSE_COLUMNS,
    "delay_rmse": RMSE_COLUMNS,
    "convergence_hist": HIST_COLUMNS,
}


@dataclass(frozen=True)
class FigureJob:
    kind: str
    csv_path: Path
    out_path: Path


def read_rows(kind, csv_path):
    """Validated rows of a figure CSV, as a list of column->string dicts.

    Raises:
        SchemaError: unknown kind, header mismatch (with the missing and
            unexpected column names), or a file with no data rows.
    """
    if kind not in KIND_COLUMNS:
        raise SchemaError(
            f"unknown figure kind {kind!r}; choose from {sorted(KIND_COLUMNS)}"
        )
    expected = KIND_COLUMNS[kind]
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise SchemaError(f"{csv_path}: file is empty") from None
        if header != expected:
            missing = [c for c in expected if c not in header]
            unexpected = [c for c in header if c not in expected]
            raise SchemaError(
                f"{csv_path}: header does not match the {kind!r} schema; "
                f"missing columns {missing}, unexpected columns {unexpected}"
            )
        rows = [dict(zip(header, row)) for row in reader if row]
    if not rows:
        raise SchemaError(f"{csv_path}: no data rows")
    return rows


def _ellipse(x, y, major, minor, angle_rad, **style):
    return Ellipse(
        (x, y),
        width=2.0 * major,
        height=2.0 * minor,
        angle=math.degrees(angle_rad),
        fill=False,
        **style,
    )


def _render_ellipses(rows, title):
    fig, ax = plt.subplots(figsize=(6.4, 6.4))
    n_bound = n_mse = 0
    for row in rows:
        x, y = float(row["nominal_x"]), float(row["nominal_y"])
        ax.plot(x, y, marker="x", color="black", markersize=6)
        ax.plot(
            float(row["mean_est_x"]), float(row["mean_est_y"]),
            marker="+", color="red", markersize=6,
        )
        ax.annotate(
            row["node_id"], (x, y),
            textcoords="offset points", xytext=(4, 4), fontsize=8,
        )
        bound_axes = (float(row["bound_major"]), float(row["bound_minor"]))
        if all(math.isfinite(v) for v in bound_axes):
            ax.add_patch(
                _ellipse(
                    x, y, *bound_axes, float(row["bound_angle_rad"]),
                    edgecolor="black", linestyle="solid", linewidth=1.2,
                )
            )
            n_bound += 1
        mse_axes = (float(row["mse_major"]), float(row["mse_minor"]))
        if all(math.isfinite(v) for v in mse_axes):
            ax.add_patch(
                _ellipse(
                    x, y, *mse_axes, float(row["mse_angle_rad"]),
                    edgecolor="red", linestyle="dashed", linewidth=1.2,
                )
            )
            n_mse += 1
    ax.set_aspect("equal", adjustable="datalim")
    ax.autoscale_view()
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    ax.legend(
        handles=[
            Line2D([], [], color="black", linestyle="solid", label="bound (99%)"),
            Line2D([], [], color="red", linestyle="dashed", label="measured MSE (99%)"),
        ],
        loc="best",
        fontsize=8,
    )
    return fig, {
        "n_nodes": len(rows),
        "n_bound_ellipses": n_bound,
        "n_mse_ellipses": n_mse,
    }


def _render_rmse(rows, value_col, bound_col, ylabel, title):
    groups = {}
    for row in rows:
        groups.setdefault((row["sweep_label"], row["sweep_value"]), []).append(row)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    n_curves = 0
    for (label, value), group in groups.items():
        group = sorted(group, key=lambda r: float(r["sigma_s"]))
        x = [float(r["sigma_s"]) for r in group]
        (line,) = ax.plot(
            x, [float(r[value_col]) for r in group],
            marker="o", linestyle="solid", label=f"RMSE, {label}={value}",
        )
        ax.plot(
            x, [float(r[bound_col]) for r in group],
            linestyle="dashed", color=line.get_color(),
            label=f"bound, {label}={value}",
        )
        n_curves += 2
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("timing noise sigma (s)")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, which="both", linewidth=0.3, alpha=0.5)
    ax.legend(fontsize=8)
    return fig, {"n_curves": n_curves, "n_points": len(rows)}


def _render_hist(rows, title):
    counts = {int(r["outer_iterations"]): int(r["count"]) for r in rows}
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    ax.bar(list(counts), list(counts.values()), width=0.9, color="0.35")
    ax.set_xticks(list(counts))
    ax.set_xlabel("outer iterations")
    ax.set_ylabel("trials")
    ax.set_title(title)
    return fig, {"n_bins": len(counts), "n_trials": sum(counts.values())}


def render(job: FigureJob):
    """Build the figure for a job.

    Returns ``(figure, info)`` where ``info`` holds count diagnostics
    (ellipses drawn, curves plotted, histogram bins). The caller owns the
    figure and should close it after saving.
    """
    rows = read_rows(job.kind, job.csv_path)
    if job.kind in ("ellipses", "multi_auxiliary"):
        title = (
            "Per-node 99% error ellipses"
            if job.kind == "ellipses"
            else "Per-node 99% error ellipses (multi-auxiliary network)"
        )
        return _render_ellipses(rows, title)
    if job.kind == "rmse_vs_sigma":
        return _render_rmse(
            rows, "rmse_theta_u", "hcrb_theta_u",
            "position RMSE (m)", "Position RMSE vs timing noise",
        )
    if job.kind == "rmse_vs_sigma_delta":
        return _render_rmse(
            rows, "rmse_theta_u", "hcrb_theta_u",
            "position RMSE (m)", "Position RMSE vs timing noise (delay-prior sweep)",
        )
    if job.kind == "delay_rmse":
        return _render_rmse(
            rows, "rmse_delta", "hcrb_delta",
            "turn-around delay RMSE (s)", "Delay RMSE vs timing noise",
        )
    return _render_hist(rows, "Outer iterations to convergence")


def render_to_file(job: FigureJob) -> dict:
    """Render a job and write deterministic SVG; no file is written on error."""
    fig, info = render(job)
    try:
        fig.savefig(job.out_path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return info


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render_figures",
        description="Render an asyncloc experiment CSV to an SVG figure",
    )
    parser.add_argument("kind", help=f"one of {sorted(KIND_COLUMNS)}")
    parser.add_argument("csv", type=Path, help="input CSV written by 'asyncloc run'")
    parser.add_argument("out", type=Path, help="output SVG path")
    args = parser.parse_args(argv)
    try:
        info = render_to_file(FigureJob(args.kind, args.csv, args.out))
    except (SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    detail = ", ".join(f"{k}={v}" for k, v in sorted(info.items()))
    print(f"wrote {args.out} ({detail})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
