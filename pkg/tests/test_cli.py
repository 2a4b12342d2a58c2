import csv

import numpy as np
import pytest

from vitransport.cli import (
    COMPARE_COLUMNS,
    OUTPUT_ENV,
    SUMMARY_COLUMNS,
    UsageError,
    compare_runs,
    main,
    parse_h,
    read_summary,
    run_directory,
    validate_combination,
)
from vitransport.mesh import read_vtk_counts


def bench(tmp_path, *args, name=None):
    out = tmp_path / (name or "_".join(a.lstrip("-") for a in args))
    code = main(["bench", *args, "--out", str(out)])
    return code, out


def numeric_row(path):
    row = read_summary(path / "summary.csv")
    row.pop("wall_time")
    return row


@pytest.mark.parametrize("text, seed", [("10", 10), ("1/10", 10), ("0.1", 10), ("0.025", 40), ("1", 1)])
def test_parse_h(text, seed):
    assert parse_h(text) == seed


@pytest.mark.parametrize("text", ["0", "-3", "0.3", "abc", "1/0"])
def test_parse_h_rejects(text):
    with pytest.raises(UsageError):
        parse_h(text)


@pytest.mark.parametrize(
    "problem, formulation, solver",
    [
        ("adr3d", "supg", "tron"),
        ("adr3d", "dg", "tron"),
        ("adr2d", "gal", "tron"),
        ("diff3d", "supg", "rs"),
        ("diff2d", "supg", "ss"),
        ("miscible2d", "gal", "rs"),
        ("cavity", "gal", "rs"),
    ],
)
def test_invalid_specs(problem, formulation, solver):
    with pytest.raises(UsageError):
        validate_combination(problem, formulation, solver)


@pytest.mark.parametrize(
    "problem, formulation", [("diff2d", "gal"), ("diff2d", "dg"), ("diff3d", "gal"), ("diff3d", "dg")]
)
def test_tron_allowed_for_symmetric_pairs(problem, formulation):
    validate_combination(problem, formulation, "tron")


def test_invalid_pair_exits_before_compute(tmp_path, capsys):
    with pytest.raises(SystemExit) as err:
        main(["bench", "--problem", "adr3d", "--formulation", "supg", "--solver", "tron", "--out", str(tmp_path / "x")])
    assert err.value.code == 2
    assert "symmetric" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


@pytest.mark.parametrize("sub, columns", [("bench", SUMMARY_COLUMNS), ("compare", COMPARE_COLUMNS)])
def test_help_documents_every_column(sub, columns, capsys):
    with pytest.raises(SystemExit):
        main([sub, "--help"])
    text = capsys.readouterr().out
    for column in columns:
        assert column in text


def test_unconstrained_row(tmp_path):
    code, out = bench(tmp_path, "--problem", "diff3d", "--formulation", "gal", "--solver", "none", "--h", "10")
    assert code == 0
    row = read_summary(out / "summary.csv")
    assert list(row) == list(SUMMARY_COLUMNS)
    assert float(row["min"]) == pytest.approx(-0.0224497, abs=1e-6)
    assert float(row["max"]) == pytest.approx(0.368322, abs=1e-6)
    assert row["total"] == "1331"
    assert read_vtk_counts(out / "solution.vtk") == (1331, 1000)


def test_bounded_row(tmp_path):
    code, out = bench(tmp_path, "--problem", "diff3d", "--formulation", "gal", "--solver", "rs", "--h", "1/10")
    assert code == 0
    row = read_summary(out / "summary.csv")
    assert float(row["min"]) >= -1e-8
    assert row["violating"] == "0"
    assert int(row["unconstrained_violating"]) > 0
    assert float(row["merit"]) <= 1e-8


def test_runs_are_reproducible(tmp_path):
    args = ("--problem", "adr3d", "--formulation", "supg", "--solver", "ss", "--h", "10")
    _, a = bench(tmp_path, *args, name="a")
    _, b = bench(tmp_path, *args, name="b")
    assert numeric_row(a) == numeric_row(b)
    assert compare_runs(a, b, tmp_path / "cmp") == 0.0


def test_compare_solvers_on_dg(tmp_path):
    common = ("--problem", "adr3d", "--formulation", "dg", "--h", "10")
    _, ss = bench(tmp_path, *common, "--solver", "ss")
    _, rs = bench(tmp_path, *common, "--solver", "rs")
    assert float(read_summary(ss / "summary.csv")["min"]) >= 0.0
    assert main(["compare", str(ss), str(rs), "--out", str(tmp_path / "cmp")]) == 0
    with open(tmp_path / "cmp" / "compare.csv") as fh:
        row = next(csv.DictReader(fh))
    assert list(row) == list(COMPARE_COLUMNS)
    assert float(row["max_abs_difference"]) <= 1e-6
    assert (tmp_path / "cmp" / "difference.vtk").exists()


def test_compare_rejects_mismatched_spaces(tmp_path):
    _, a = bench(tmp_path, "--problem", "diff3d", "--formulation", "gal", "--solver", "none", "--h", "4")
    _, b = bench(tmp_path, "--problem", "diff3d", "--formulation", "dg", "--solver", "none", "--h", "4")
    with pytest.raises(UsageError):
        compare_runs(a, b, tmp_path / "cmp")


def test_nonconvergence_gives_nonzero_exit(tmp_path):
    code, out = bench(
        tmp_path, "--problem", "diff3d", "--formulation", "gal", "--solver", "ss", "--h", "10", "--max-outer", "1"
    )
    assert code == 1
    assert read_summary(out / "summary.csv")["converged"] == "0"


def test_default_layout_uses_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert main(["bench", "--problem", "diff3d", "--formulation", "dg", "--solver", "clip", "--h", "3"]) == 0
    out = run_directory(tmp_path, "diff3d", "dg", "clip", 3)
    assert out == tmp_path / "diff3d" / "dg-clip-h3"
    data = np.load(out / "solution.npz")
    assert data["c"].shape == (8 * 27,)
    assert data["c"].min() >= 0.0


def test_miscible_bench(tmp_path):
    code, out = bench(tmp_path, "--problem", "miscible2d", "--formulation", "dg", "--solver", "rs", "--h", "5", "--steps", "2")
    assert code == 0
    row = read_summary(out / "summary.csv")
    assert row["h"] == "5"
    assert row["violating"] == "0"
    assert (out / "history.csv").exists() and (out / "config.txt").exists()


def test_mesh_info(capsys):
    assert main(["mesh-info", "--problem", "diff3d", "--h", "4"]) == 0
    text = capsys.readouterr().out
    assert "cells            64" in text
    assert "nodes            125" in text


def test_mesh_info_needs_a_source():
    with pytest.raises(SystemExit) as err:
        main(["mesh-info"])
    assert err.value.code == 2
