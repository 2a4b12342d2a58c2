"""Command-line benchmark harness.

``vitransport bench`` assembles and solves one benchmark and writes
``summary.csv``, ``solution.vtk`` and ``solution.npz`` under
``<root>/<problem>/<formulation>-<solver>-h<h>/``.  ``vitransport compare``
reports the difference between two such runs and ``vitransport mesh-info``
prints mesh statistics.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, transient
from .benchmarks import ALLOWED, build_problem
from .fem import field_stats
from .linalg import PRECONDITIONERS
from .mesh import build_structured_quad_mesh, extrude_to_hex, load_square_with_hole, read_gmsh, write_vtk
from .vi import SOLVERS, BoxConstrainedSystem, check_complementarity, solve_bounded

OUTPUT_ENV = "VITRANSPORT_OUTPUT"
PROBLEMS = tuple(ALLOWED) + ("miscible2d",)
PAIRS = dict(ALLOWED, miscible2d=("dg",))
SYMMETRIC = {("diff2d", "gal"), ("diff2d", "dg"), ("diff3d", "gal"), ("diff3d", "dg")}

SUMMARY_COLUMNS = {
    "problem": "benchmark name",
    "formulation": "gal, supg or dg",
    "solver": "none, clip, ss, rs or tron",
    "h": "cells per side of the structured mesh (0 for the bundled holed mesh)",
    "min": "smallest value of the reported solution",
    "max": "largest value of the reported solution",
    "violating": "dofs of the reported solution outside [lb, ub]",
    "total": "number of dofs",
    "unconstrained_min": "smallest value of the unconstrained solution (miscible2d: of any step)",
    "unconstrained_max": "largest value of the unconstrained solution (miscible2d: of any step)",
    "unconstrained_violating": "dofs of the unconstrained solution outside [lb, ub] (miscible2d: worst step)",
    "linear_iterations": "Krylov iterations of the unconstrained solve (miscible2d: transport, summed)",
    "outer_iterations": "outer iterations of the bound-constrained solver (0 for none/clip; summed for miscible2d)",
    "inner_iterations": "Krylov iterations inside the bound-constrained solver (miscible2d: Darcy iterations)",
    "merit": "complementarity merit 1/2 |Phi|^2 of the reported solution (nan for miscible2d)",
    "converged": "1 if every sub-solver converged, else 0",
    "wall_time": "seconds; informational, excluded from reproducibility checks",
}

COMPARE_COLUMNS = {
    "run_a": "first run directory",
    "run_b": "second run directory",
    "dofs": "number of compared dofs",
    "max_abs_difference": "infinity norm of the dof-wise difference",
}


class UsageError(ValueError):
    pass


def _columns_help(columns):
    width = max(len(k) for k in columns)
    return "\n".join(f"  {k.ljust(width)}  {v}" for k, v in columns.items())


def parse_h(text) -> int:
    """Cells per side from ``10``, ``1/10`` or ``0.1``."""
    text = str(text).strip()
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"cannot read resolution {text!r}") from exc
    if value <= 0:
        raise UsageError("resolution must be positive")
    seed = value if value >= 1 else 1 / value
    if seed.denominator != 1:
        raise UsageError(f"resolution {text!r} does not give a whole number of cells per side")
    return int(seed)


def output_root(arg=None) -> Path:
    if arg is not None:
        return Path(arg)
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def run_directory(root, problem, formulation, solver, seed) -> Path:
    return Path(root) / problem / f"{formulation}-{solver}-h{seed}"


def validate_combination(problem, formulation, solver):
    if problem not in PAIRS:
        raise UsageError(f"unknown problem {problem!r}; choose from {', '.join(PROBLEMS)}")
    if formulation not in PAIRS[problem]:
        raise UsageError(
            f"formulation {formulation!r} is not defined for {problem}; choose from {', '.join(PAIRS[problem])}"
        )
    if solver not in SOLVERS:
        raise UsageError(f"unknown solver {solver!r}; choose from {', '.join(SOLVERS)}")
    if solver == "tron" and (problem, formulation) not in SYMMETRIC:
        raise UsageError(f"tron needs a symmetric operator; {problem}/{formulation} is not symmetric")


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float) or isinstance(value, np.floating):
        return repr(float(value))
    return str(value)


def write_summary(path, row):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerow([_fmt(row[k]) if k != "wall_time" else f"{row[k]:.6f}" for k in SUMMARY_COLUMNS])


def read_summary(path) -> dict:
    with open(path, newline="") as fh:
        return next(csv.DictReader(fh))


def _export(out, mesh, space, c, extra_cell=None):
    point = {"concentration": space.nodal_average(c)} if space.is_dg else {"concentration": c}
    cell = {"concentration_avg": space.cell_values(c).mean(axis=1)}
    cell.update(extra_cell or {})
    write_vtk(out / "solution.vtk", mesh, point_data=point, cell_data=cell)
    np.savez(
        out / "solution.npz",
        c=c,
        kind=space.kind,
        num_cells=mesh.num_cells,
        num_nodes=mesh.num_nodes,
        dim=mesh.dim,
    )


def run_benchmark(args) -> int:
    validate_combination(args.problem, args.formulation, args.solver)
    if args.problem == "miscible2d":
        return _run_miscible(args)
    t0 = time.perf_counter()
    seed = parse_h(args.h) if args.h is not None and args.problem != "adr2d" else None
    problem = build_problem(args.problem, args.formulation, None if seed is None else 1.0 / seed)
    lb = problem.lb if args.lb is None else args.lb
    ub = problem.ub if args.ub is None else args.ub
    if args.preconditioner is not None:
        problem.preconditioner = args.preconditioner
    vi_opts = problem.vi_options(abs_tol=args.abs_tol, max_outer=args.max_outer)
    lin_opts = problem.krylov_options(rel_tol=args.rel_tol, max_iters=args.max_linear)
    sysK, sysf = problem.system.K, problem.system.f
    result = solve_bounded(sysK, sysf, lb, ub, args.solver, opts=vi_opts, linear_opts=lin_opts)
    stats = field_stats(result.c, lb, ub)
    raw = field_stats(result.c_unconstrained, lb, ub)
    merit = check_complementarity(BoxConstrainedSystem(sysK, sysf, lb, ub), result.c).merit
    report = result.report
    converged = bool(result.converged)
    mesh_seed = 0 if problem.h is None else int(round(1.0 / problem.h))
    row = {
        "problem": args.problem,
        "formulation": args.formulation,
        "solver": args.solver,
        "h": mesh_seed,
        "min": stats.min_value,
        "max": stats.max_value,
        "violating": stats.violating_dofs,
        "total": stats.total_dofs,
        "unconstrained_min": raw.min_value,
        "unconstrained_max": raw.max_value,
        "unconstrained_violating": raw.violating_dofs,
        "linear_iterations": result.linear_report.iterations,
        "outer_iterations": 0 if report is None else report.outer_iterations,
        "inner_iterations": 0 if report is None else report.inner_iterations,
        "merit": merit,
        "converged": converged,
        "wall_time": time.perf_counter() - t0,
    }
    out = Path(args.out) if args.out else run_directory(output_root(), args.problem, args.formulation, args.solver, mesh_seed)
    out.mkdir(parents=True, exist_ok=True)
    write_summary(out / "summary.csv", row)
    _export(out, problem.mesh, problem.space, result.c)
    _print_row(row, out)
    return 0 if converged else 1


def _run_miscible(args) -> int:
    overrides = {"solver": args.solver}
    base = transient.load_config(args.config) if args.config else transient.MiscibleConfig()
    if args.steps is not None:
        overrides["t_end"] = args.steps * base.dt
    if args.h is not None:
        seed = parse_h(args.h)
        overrides.update(nx=2 * seed, ny=seed)
    cfg = dataclasses.replace(base, **overrides)
    out = Path(args.out) if args.out else run_directory(output_root(), "miscible2d", args.formulation, args.solver, cfg.ny)
    t0 = time.perf_counter()
    converged = True
    try:
        res = transient.run(cfg, out_dir=out, vtk_every=args.vtk_every)
        state, sim = res.state, res.simulation
    except transient.StepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        converged = False
        state, sim = None, None
    if state is None:
        row = {k: 0 for k in SUMMARY_COLUMNS}
        row.update(problem="miscible2d", formulation=args.formulation, solver=args.solver, h=cfg.ny, converged=False)
        row.update({k: float("nan") for k in ("min", "max", "unconstrained_min", "unconstrained_max", "merit")})
        row["wall_time"] = time.perf_counter() - t0
        out.mkdir(parents=True, exist_ok=True)
        write_summary(out / "summary.csv", row)
        return 1
    hist = state.history
    stats = field_stats(state.c, cfg.c_min, cfg.c_max)
    row = {
        "problem": "miscible2d",
        "formulation": args.formulation,
        "solver": args.solver,
        "h": cfg.ny,
        "min": stats.min_value,
        "max": stats.max_value,
        "violating": stats.violating_dofs,
        "total": stats.total_dofs,
        "unconstrained_min": min(r.unconstrained_min for r in hist),
        "unconstrained_max": max(r.unconstrained_max for r in hist),
        "unconstrained_violating": max(r.unconstrained_violating for r in hist),
        "linear_iterations": sum(r.transport_iterations for r in hist),
        "outer_iterations": sum(r.vi_iterations for r in hist),
        "inner_iterations": sum(r.darcy_iterations for r in hist),
        "merit": float("nan"),
        "converged": converged,
        "wall_time": time.perf_counter() - t0,
    }
    write_summary(out / "summary.csv", row)
    extra = {"permeability": sim.permeability}
    if state.cell_velocity is not None:
        extra["velocity"] = state.cell_velocity
    _export(out, sim.mesh, sim.space, state.c, extra)
    _print_row(row, out)
    return 0 if converged else 1


def _print_row(row, out):
    print(
        f"{row['problem']} {row['formulation']}-{row['solver']} h={row['h']}: "
        f"min {row['min']:.7g} max {row['max']:.7g} violating {row['violating']}/{row['total']} "
        f"converged {bool(row['converged'])} -> {out}"
    )


def compare_runs(dir_a, dir_b, out=None) -> float:
    """Write the dof-wise difference of two runs; return its infinity norm."""
    dir_a, dir_b = Path(dir_a), Path(dir_b)
    a = np.load(dir_a / "solution.npz")
    b = np.load(dir_b / "solution.npz")
    for key in ("kind", "num_cells", "num_nodes", "dim"):
        if a[key] != b[key]:
            raise UsageError(f"runs do not share a mesh and space ({key}: {a[key]} vs {b[key]})")
    if a["c"].shape != b["c"].shape:
        raise UsageError("runs do not share a mesh and space (dof counts differ)")
    diff = np.abs(a["c"] - b["c"])
    norm = float(diff.max()) if diff.size else 0.0
    out = Path(out) if out is not None else output_root() / "compare" / f"{_label(dir_a)}__vs__{_label(dir_b)}"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_COLUMNS)
        writer.writerow([str(dir_a), str(dir_b), diff.size, repr(norm)])
    mesh = _mesh_of(dir_a)
    if mesh is not None:
        _write_difference_vtk(out / "difference.vtk", mesh, str(a["kind"]), diff)
    return norm


def _label(path: Path) -> str:
    return "_".join(path.resolve().parts[-2:])


def _mesh_of(run_dir: Path):
    summary = read_summary(run_dir / "summary.csv")
    problem, formulation, h = summary["problem"], summary["formulation"], int(summary["h"])
    if problem == "miscible2d":
        cfg_path = run_dir / "config.txt"
        cfg = transient.load_config(cfg_path) if cfg_path.exists() else transient.MiscibleConfig()
        return transient.build_mesh(cfg)
    return build_problem(problem, formulation, None if h == 0 else 1.0 / h).mesh


def _write_difference_vtk(path, mesh, kind, diff):
    if kind == "DG1":
        per_cell = diff.reshape(mesh.num_cells, -1)
        point = np.zeros(mesh.num_nodes)
        np.maximum.at(point, np.asarray(mesh.cells).ravel(), per_cell.ravel())
        write_vtk(path, mesh, point_data={"abs_difference": point}, cell_data={"max_abs_difference": per_cell.max(axis=1)})
    else:
        write_vtk(path, mesh, point_data={"abs_difference": diff})


def mesh_info(args) -> int:
    if args.mesh:
        mesh = read_gmsh(args.mesh)
    elif args.problem == "miscible2d":
        mesh = transient.build_mesh(transient.load_config(args.config) if args.config else transient.MiscibleConfig())
    else:
        seed = parse_h(args.h) if args.h is not None else None
        mesh = _bare_mesh(args.problem, seed)
    tags, counts = np.unique(np.asarray(mesh.boundary_tags), return_counts=True)
    print(f"kind             {mesh.cell_kind}")
    print(f"dimension        {mesh.dim}")
    print(f"nodes            {mesh.num_nodes}")
    print(f"cells            {mesh.num_cells}")
    print(f"interior faces   {mesh.num_interior_faces}")
    print(f"boundary faces   {len(mesh.boundary_tags)}")
    for t, n in zip(tags, counts):
        print(f"  tag {int(t):<4d}       {int(n)} faces")
    return 0


def _bare_mesh(problem, seed):
    if problem == "adr2d":
        return load_square_with_hole()
    if problem == "diff2d":
        seed = seed or 200
        return build_structured_quad_mesh(seed, seed)
    seed = seed or 10
    return extrude_to_hex(build_structured_quad_mesh(seed, seed), seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitransport",
        description="Bound-preserving transport benchmarks.",
        epilog=f"Artifacts go under ${OUTPUT_ENV} (default ./runs) unless --out is given.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser(
        "bench",
        help="solve one benchmark and write summary.csv and VTK",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Solve one benchmark.  Exit status is 1 if any sub-solver did not converge.",
        epilog="summary.csv columns:\n" + _columns_help(SUMMARY_COLUMNS)
        + f"\n\nOutput directory: ${OUTPUT_ENV}/<problem>/<formulation>-<solver>-h<h>/",
    )
    bench.add_argument("--problem", required=True, choices=PROBLEMS)
    bench.add_argument("--formulation", required=True, choices=("gal", "supg", "dg"))
    bench.add_argument("--solver", default="rs", choices=SOLVERS)
    bench.add_argument("--h", default=None, help="cells per side, or the mesh size as 1/N or a decimal")
    bench.add_argument("--lb", type=float, default=None, help="lower bound (default: problem's)")
    bench.add_argument("--ub", type=float, default=None, help="upper bound (default: problem's)")
    bench.add_argument("--out", default=None, help="output directory (overrides the default layout)")
    bench.add_argument("--abs-tol", type=float, default=1e-8, help="bound-constrained solver tolerance")
    bench.add_argument("--rel-tol", type=float, default=1e-7, help="unconstrained Krylov tolerance")
    bench.add_argument("--max-outer", type=int, default=500)
    bench.add_argument("--max-linear", type=int, default=10000)
    bench.add_argument(
        "--preconditioner",
        default=None,
        choices=PRECONDITIONERS,
        help="Krylov preconditioner (default: lu for diff2d and adr2d/dg, ilu0 otherwise)",
    )
    bench.add_argument("--config", default=None, help="miscible2d: key = value config file")
    bench.add_argument("--steps", type=int, default=None, help="miscible2d: number of time steps")
    bench.add_argument("--vtk-every", type=int, default=0, help="miscible2d: VTK snapshot interval")

    compare = sub.add_parser(
        "compare",
        help="difference between two runs",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="compare.csv columns:\n" + _columns_help(COMPARE_COLUMNS),
    )
    compare.add_argument("run_a")
    compare.add_argument("run_b")
    compare.add_argument("--out", default=None)

    info = sub.add_parser("mesh-info", help="print mesh statistics")
    info.add_argument("--problem", choices=PROBLEMS, default=None)
    info.add_argument("--h", default=None)
    info.add_argument("--mesh", default=None, help="Gmsh .msh file (optionally gzipped)")
    info.add_argument("--config", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "bench":
            return run_benchmark(args)
        if args.command == "compare":
            norm = compare_runs(args.run_a, args.run_b, args.out)
            print(f"max |a - b| = {norm:.6e}")
            return 0
        if args.mesh is None and args.problem is None:
            raise UsageError("mesh-info needs --problem or --mesh")
        return mesh_info(args)
    except UsageError as exc:
        parser.exit(2, f"vitransport: error: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
