"""Tests for the CSV-to-SVG renderers, on synthetic and real CLI outputs."""

import csv
import math
import subprocess
import sys

import pytest

from asyncloc_figures.render import (
    ELLIPSE_COLUMNS,
    HIST_COLUMNS,
    RMSE_COLUMNS,
    FigureJob,
    SchemaError,
    main,
    read_rows,
    render,
    render_to_file,
)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def ellipse_csv(path, n_nodes=3):
    rows = []
    for k in range(n_nodes):
        rows.append(
            [
                k + 1,
                "anchor" if k < n_nodes - 1 else "receiver",
                float(k), float(k % 2),          # nominal position
                k + 0.01, (k % 2) + 0.02,        # mean estimate
                0.04, 0.001, 0.05,               # mse block
                0.03, 0.0005, 0.04,              # bound block
                0.6, 0.4, 0.3,                   # mse ellipse
                0.5, 0.35, 0.2,                  # bound ellipse
                9.21034037197618, 100,
            ]
        )
    write_csv(path, ELLIPSE_COLUMNS, rows)


def rmse_csv(path):
    rows = []
    for value in ("0.03", "0.2"):
        for i, sigma in enumerate((1e-10, 1e-9, 5e-9)):
            rows.append(
                [sigma, "anchor_sigma", value, 0.1 * (i + 1), 0.09 * (i + 1),
                 2e-9 * (i + 1), 1.8e-9 * (i + 1), 5.0, 1.0, 50]
            )
    write_csv(path, RMSE_COLUMNS, rows)


def hist_csv(path):
    write_csv(path, HIST_COLUMNS, [[3, 10], [4, 25], [5, 7]])


def test_ellipse_figure_counts(tmp_path):
    src = tmp_path / "ellipses.csv"
    ellipse_csv(src, n_nodes=4)
    out = tmp_path / "ellipses.svg"
    info = render_to_file(FigureJob("ellipses", src, out))
    assert info == {"n_nodes": 4, "n_bound_ellipses": 4, "n_mse_ellipses": 4}
    assert out.read_bytes().lstrip().startswith(b"<?xml")


def test_rmse_figure_curve_per_sweep_value(tmp_path):
    src = tmp_path / "rmse_vs_sigma.csv"
    rmse_csv(src)
    fig, info = render(FigureJob("rmse_vs_sigma", src, tmp_path / "x.svg"))
    try:
        assert info == {"n_curves": 4, "n_points": 6}
    finally:
        import matplotlib.pyplot as plt

        plt.close(fig)


def test_delay_rmse_uses_delay_columns(tmp_path):
    src = tmp_path / "delay_rmse.csv"
    rmse_csv(src)
    out = tmp_path / "delay.svg"
    info = render_to_file(FigureJob("delay_rmse", src, out))
    assert info["n_curves"] == 4
    assert out.exists()


def test_hist_figure_bins(tmp_path):
    src = tmp_path / "convergence_hist.csv"
    hist_csv(src)
    info = render_to_file(FigureJob("convergence_hist", src, tmp_path / "h.svg"))
    assert info == {"n_bins": 3, "n_trials": 42}


def test_rendering_is_deterministic(tmp_path):
    src = tmp_path / "ellipses.csv"
    ellipse_csv(src)
    outs = []
    for name in ("a.svg", "b.svg"):
        out = tmp_path / name
        render_to_file(FigureJob("ellipses", src, out))
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_schema_mismatch_diagnoses_columns(tmp_path, capsys):
    src = tmp_path / "bad.csv"
    write_csv(src, ("node_id", "wrong_col"), [[1, 2]])
    out = tmp_path / "bad.svg"
    assert main(["ellipses", str(src), str(out)]) == 2
    err = capsys.readouterr().err
    assert "nominal_x" in err and "wrong_col" in err
    assert not out.exists()  # nothing written on error


def test_empty_csv_is_an_error(tmp_path, capsys):
    src = tmp_path / "empty.csv"
    write_csv(src, HIST_COLUMNS, [])
    out = tmp_path / "empty.svg"
    assert main(["convergence_hist", str(src), str(out)]) == 2
    assert "no data rows" in capsys.readouterr().err
    assert not out.exists()

    headerless = tmp_path / "zero.csv"
    headerless.write_text("")
    with pytest.raises(SchemaError, match="empty"):
        read_rows("convergence_hist", headerless)


def test_missing_file_and_unknown_kind(tmp_path, capsys):
    assert main(["ellipses", str(tmp_path / "nope.csv"), str(tmp_path / "o.svg")]) == 2
    src = tmp_path / "h.csv"
    hist_csv(src)
    assert main(["no_such_kind", str(src), str(tmp_path / "o.svg")]) == 2
    assert "no_such_kind" in capsys.readouterr().err


def test_non_finite_ellipses_are_skipped_not_fatal(tmp_path):
    src = tmp_path / "ellipses.csv"
    row = [
        1, "receiver", 0.0, 0.0, 0.0, 0.0,
        0.04, 0.0, 0.05, 0.03, 0.0, 0.04,
        math.nan, math.nan, 0.0, 0.5, 0.35, 0.2,
        9.21034037197618, 0,
    ]
    write_csv(src, ELLIPSE_COLUMNS, [row])
    info = render_to_file(FigureJob("ellipses", src, tmp_path / "e.svg"))
    assert info == {"n_nodes": 1, "n_bound_ellipses": 1, "n_mse_ellipses": 0}


# ---------------------------------------------------------------------------
# end-to-end: consume real CSVs produced by the installed asyncloc CLI


def run_cli(*args):
    proc = subprocess.run(
        ["asyncloc", *args], capture_output=True, text=True, check=False
    )
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="session")
def cli_outputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run_cli("run", "--kind", "ellipses", "--trials", "3", "--mc-samples", "5",
            "--seed", "5", "--out", str(root / "ellipses"))
    run_cli("run", "--kind", "multi_auxiliary", "--trials", "2", "--mc-samples", "3",
            "--seed", "5", "--out", str(root / "multi_auxiliary"))
    run_cli("run", "--kind", "convergence_hist", "--trials", "6", "--mc-samples", "3",
            "--seed", "5", "--out", str(root / "convergence_hist"))
    for kind in ("rmse_vs_sigma", "rmse_vs_sigma_delta", "delay_rmse"):
        run_cli("run", "--kind", kind, "--trials", "2", "--mc-samples", "3",
                "--seed", "5", "--sigmas", "1,2", "--out", str(root / kind))
    return root


ALL_KINDS = (
    "ellipses",
    "multi_auxiliary",
    "rmse_vs_sigma",
    "rmse_vs_sigma_delta",
    "delay_rmse",
    "convergence_hist",
)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_renders_every_kind_from_real_output(kind, cli_outputs, tmp_path):
    src = cli_outputs / kind / f"{kind}.csv"
    out = tmp_path / f"{kind}.svg"
    assert main([kind, str(src), str(out)]) == 0
    assert out.exists() and out.stat().st_size > 0


def test_ellipse_counts_equal_node_counts(cli_outputs, tmp_path):
    # the bundled networks have 6 and 15 nodes; every node must get both
    # of its ellipse families
    for kind, n_nodes in (("ellipses", 6), ("multi_auxiliary", 15)):
        src = cli_outputs / kind / f"{kind}.csv"
        info = render_to_file(FigureJob(kind, src, tmp_path / f"{kind}.svg"))
        assert info["n_nodes"] == n_nodes
        assert info["n_bound_ellipses"] == n_nodes
        assert info["n_mse_ellipses"] == n_nodes


def test_console_script_runs(cli_outputs, tmp_path):
    src = cli_outputs / "ellipses" / "ellipses.csv"
    out = tmp_path / "cli.svg"
    proc = subprocess.run(
        [sys.executable, "-m", "asyncloc_figures.render", "ellipses", str(src), str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "wrote" in proc.stdout
    assert out.exists()
