import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vitransport.fem import field_stats
from vitransport.linalg import KrylovOptions, SparseMatrix
from vitransport.vi import (
    SOLVERS,
    BoxConstrainedSystem,
    ConvergenceError,
    ViOptions,
    brute_force_mcp,
    check_complementarity,
    clip,
    fb,
    fb_residual,
    merit,
    solve_bounded,
    solve_reduced_space,
    solve_semismooth,
    solve_tron,
)

VI_SOLVERS = {"ss": solve_semismooth, "rs": solve_reduced_space, "tron": solve_tron}
TIGHT = ViOptions(abs_tol=1e-12, inner=KrylovOptions(rel_tol=1e-3, preconditioner="none"))


def random_system(rng, n, symmetric):
    G = rng.standard_normal((n, n))
    K = G @ G.T / n + 0.5 * np.eye(n)
    if not symmetric:
        S = rng.standard_normal((n, n))
        K = K + 0.5 * (S - S.T)
    f = rng.standard_normal(n) * 2
    kind = rng.integers(0, 4, n)
    lo = -rng.uniform(0, 1, n)
    hi = rng.uniform(0, 1, n)
    lb = np.where((kind == 1) | (kind == 3), lo, -np.inf)
    ub = np.where((kind == 2) | (kind == 3), hi, np.inf)
    return BoxConstrainedSystem(SparseMatrix.from_dense(K), f, lb, ub)


# --- Fischer-Burmeister ------------------------------------------------------


@pytest.mark.parametrize("a, b, expected", [(0, 0, 0), (3, 4, -2), (0, 5, 0), (-1, 0, 2)])
def test_fb_values(a, b, expected):
    assert fb(a, b) == pytest.approx(expected, abs=1e-15)


def test_fb_zero_set_on_grid():
    g = np.linspace(-2, 2, 41)
    A, B = np.meshgrid(g, g)
    zero = np.abs(fb(A, B)) <= 1e-12
    complementary = (A >= 0) & (B >= 0) & (A * B == 0)
    np.testing.assert_array_equal(zero, complementary)


def test_fb_residual_unbounded_row_is_negative_residual(rng):
    K = SparseMatrix.from_dense([[2.0, 1.0], [1.0, 3.0]])
    sys = BoxConstrainedSystem(K, [1.0, 2.0], [-np.inf, 0.0], [np.inf, np.inf])
    c = np.array([0.3, 0.4])
    assert fb_residual(sys, c)[0] == pytest.approx(-(sys.residual(c)[0]))


def test_fb_residual_one_dimensional_hand_value():
    sys = BoxConstrainedSystem(SparseMatrix.from_dense([[1.0]]), [-1.0], 0.0, np.inf)
    assert fb_residual(sys, [0.0])[0] == pytest.approx(fb(0.0, 1.0), abs=0)
    assert fb_residual(sys, [0.0])[0] == 0.0


def test_fb_residual_vanishes_at_interior_solution(rng):
    K = np.array([[4.0, 1.0], [1.0, 3.0]])
    c = np.linalg.solve(K, [1.0, 2.0])
    sys = BoxConstrainedSystem(SparseMatrix.from_dense(K), [1.0, 2.0], -1.0, 1.0)
    np.testing.assert_allclose(fb_residual(sys, c), 0.0, atol=1e-15)


@pytest.mark.parametrize(
    "lb, ub, c, h",
    [
        (0.0, np.inf, 0.0, 2.0),
        (-np.inf, 1.0, 1.0, -2.0),
        (0.0, 1.0, 0.0, 2.0),
        (0.0, 1.0, 1.0, -2.0),
        (0.0, 1.0, 0.5, 0.0),
        (0.5, 0.5, 0.5, 7.0),
    ],
)
def test_fb_residual_zero_for_each_bound_pattern(lb, ub, c, h):
    sys = BoxConstrainedSystem(SparseMatrix.from_dense([[1.0]]), [c - h], lb, ub)
    assert abs(fb_residual(sys, [c])[0]) <= 1e-15


@pytest.mark.parametrize(
    "lb, ub, c, h",
    [(0.0, np.inf, 0.0, -1.0), (-np.inf, 1.0, 1.0, 1.0), (0.0, 1.0, 0.5, 1.0), (0.0, 1.0, 1.5, 0.0)],
)
def test_fb_residual_nonzero_off_solution(lb, ub, c, h):
    sys = BoxConstrainedSystem(SparseMatrix.from_dense([[1.0]]), [c - h], lb, ub)
    assert abs(fb_residual(sys, [c])[0]) > 1e-3


# --- system and clip ---------------------------------------------------------


def test_system_validation():
    K = SparseMatrix.identity(2)
    with pytest.raises(ValueError):
        BoxConstrainedSystem(K, [1.0, 2.0], [1.0, 0.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        BoxConstrainedSystem(K, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        BoxConstrainedSystem(SparseMatrix.from_dense(np.ones((2, 3))), [1.0, 2.0])


def test_vi_options_validation():
    with pytest.raises(ValueError):
        ViOptions(abs_tol=0.0)


@pytest.mark.parametrize(
    "c, expected", [([-1.0, 0.5, 2.0], [0.0, 0.5, 1.0]), ([0.1, 0.2, 0.9], [0.1, 0.2, 0.9])]
)
def test_clip_examples(c, expected):
    np.testing.assert_array_equal(clip(c, 0.0, 1.0), expected)


@given(arrays(float, st.integers(1, 30), elements=st.floats(-1e6, 1e6)))
def test_clip_idempotent(c):
    once = clip(c, -1.0, 2.0)
    np.testing.assert_array_equal(clip(once, -1.0, 2.0), once)
    assert np.all((once >= -1.0) & (once <= 2.0))


# --- hand-solved examples ----------------------------------------------------


@pytest.mark.parametrize("solver", ["ss", "rs", "tron"])
@pytest.mark.parametrize(
    "K, f, lb, expected",
    [
        ([[1.0]], [-1.0], 0.0, [0.0]),
        ([[2.0]], [-4.0], 0.0, [0.0]),
        ([[2.0, -1.0], [-1.0, 2.0]], [-3.0, 0.0], 0.0, [0.0, 0.0]),
    ],
)
def test_hand_solved_lower_bound(solver, K, f, lb, expected):
    sys = BoxConstrainedSystem(SparseMatrix.from_dense(K), f, lb, np.inf)
    c, rep = VI_SOLVERS[solver](sys, np.ones(len(f)))
    assert rep.converged
    np.testing.assert_allclose(c, expected, atol=1e-10)


def test_brute_force_two_dimensional_example():
    sys = BoxConstrainedSystem(SparseMatrix.from_dense([[2.0, -1.0], [-1.0, 2.0]]), [-3.0, 0.0], 0.0, np.inf)
    c = brute_force_mcp(sys)
    np.testing.assert_array_equal(c, [0.0, 0.0])
    np.testing.assert_allclose(sys.residual(c), [3.0, 0.0])


@pytest.mark.parametrize("solver", ["ss", "rs", "tron"])
def test_interior_problem_equals_unconstrained_solve(solver):
    K = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]])
    f = np.array([1.0, 0.5, 0.2])
    exact = np.linalg.solve(K, f)
    sys = BoxConstrainedSystem(SparseMatrix.from_dense(K), f, -10.0, 10.0)
    c, rep = VI_SOLVERS[solver](sys, exact)
    assert rep.outer_iterations <= 1
    np.testing.assert_allclose(c, exact, atol=1e-12)
    np.testing.assert_allclose(brute_force_mcp(sys), exact, atol=1e-12)


def test_tron_rejects_nonsymmetric():
    sys = BoxConstrainedSystem(SparseMatrix.from_dense([[2.0, 1.0], [0.0, 2.0]]), [1.0, 1.0], 0.0)
    with pytest.raises(ValueError, match="symmetric"):
        solve_tron(sys, np.zeros(2))


def test_brute_force_limits():
    with pytest.raises(ValueError):
        brute_force_mcp(BoxConstrainedSystem(SparseMatrix.identity(13), np.ones(13), 0.0))


def test_brute_force_reports_multiple_solutions():
    # K = -1 on c >= 0: c = 0 (h = 1 > 0) and c = 1 (h = 0) both qualify
    sys = BoxConstrainedSystem(SparseMatrix.from_dense([[-1.0]]), [-1.0], 0.0, np.inf)
    with pytest.raises(ConvergenceError):
        brute_force_mcp(sys)


# --- oracle agreement --------------------------------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_brute_force_self_check(seed):
    sys = random_system(np.random.default_rng(seed), 6, symmetric=seed % 2 == 0)
    rep = check_complementarity(sys, brute_force_mcp(sys))
    assert rep.bound_violation <= 1e-10
    assert rep.sign_violation <= 1e-10


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8), symmetric=st.booleans())
def test_solvers_match_oracle(seed, n, symmetric):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, n, symmetric)
    expected = brute_force_mcp(sys)
    start = sys.project(rng.standard_normal(n))
    names = ["ss", "rs", "tron"] if symmetric else ["ss", "rs"]
    for name in names:
        c, rep = VI_SOLVERS[name](sys, start, TIGHT)
        assert rep.converged, (name, rep.message)
        np.testing.assert_allclose(c, expected, atol=1e-8, err_msg=name)


@pytest.mark.parametrize("solver", ["ss", "rs", "tron"])
@pytest.mark.parametrize("seed", range(4))
def test_unique_solution_from_any_start(solver, seed):
    rng = np.random.default_rng(100 + seed)
    sys = random_system(rng, 8, symmetric=True)
    sols = []
    for _ in range(5):
        start = sys.project(rng.uniform(-3, 3, 8))
        c, rep = VI_SOLVERS[solver](sys, start)
        assert rep.converged
        sols.append(c)
    for c in sols[1:]:
        np.testing.assert_allclose(c, sols[0], atol=1e-7)


@pytest.mark.parametrize("solver", ["ss", "rs", "tron"])
def test_every_iterate_is_feasible(solver):
    rng = np.random.default_rng(7)
    sys = random_system(rng, 10, symmetric=True)
    start = sys.project(rng.uniform(-3, 3, 10))
    for k in range(1, 12):
        c, _ = VI_SOLVERS[solver](sys, start, ViOptions(max_outer=k))
        assert np.all(c >= sys.lb - 1e-12) and np.all(c <= sys.ub + 1e-12)


def test_semismooth_merit_is_monotone(diff3d_gal_10):
    p = diff3d_gal_10
    run = solve_bounded(p.system.K, p.system.f, p.lb, p.ub, "ss", opts=p.vi_options())
    hist = run.report.merit_history
    assert len(hist) > 2
    assert all(b <= a for a, b in zip(hist, hist[1:]))


# --- reports and failure modes -----------------------------------------------


def test_nonconvergence_is_reported(diff3d_gal_10):
    p = diff3d_gal_10
    run = solve_bounded(p.system.K, p.system.f, p.lb, p.ub, "ss", opts=p.vi_options(max_outer=1))
    assert not run.converged
    assert run.report.message == "iteration limit"


def test_trace_csv(tmp_path, diff3d_gal_10):
    p = diff3d_gal_10
    path = tmp_path / "trace.csv"
    run = solve_bounded(p.system.K, p.system.f, p.lb, p.ub, "rs", opts=p.vi_options(trace=path))
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "merit", "step_length", "active_count"]
    assert len(rows) == run.report.outer_iterations + 2
    assert float(rows[-1][1]) == pytest.approx(run.report.merit, rel=1e-6, abs=1e-30)


def test_check_complementarity_on_unconstrained_solution(diff3d_gal_10):
    p = diff3d_gal_10
    run = solve_bounded(p.system.K, p.system.f, p.lb, p.ub, "none")
    rep = check_complementarity(BoxConstrainedSystem(p.system.K, p.system.f, p.lb, p.ub), run.c)
    assert rep.bound_violation == pytest.approx(-run.c.min(), rel=1e-12)


def test_solve_bounded_rejects_unknown_solver():
    with pytest.raises(ValueError):
        solve_bounded(SparseMatrix.identity(2), np.ones(2), 0.0, 1.0, "ipm")


@pytest.mark.parametrize("solver", SOLVERS)
def test_driver_sequence(solver, diff3d_gal_10):
    p = diff3d_gal_10
    run = solve_bounded(p.system.K, p.system.f, p.lb, p.ub, solver, opts=p.vi_options())
    np.testing.assert_array_equal(run.c_clip, clip(run.c_unconstrained, p.lb, p.ub))
    if solver == "none":
        np.testing.assert_array_equal(run.c, run.c_unconstrained)
        assert field_stats(run.c).violating_dofs > 0
    else:
        assert field_stats(run.c, p.lb, p.ub).violating_dofs == 0
    if solver in ("ss", "rs", "tron"):
        sys = BoxConstrainedSystem(p.system.K, p.system.f, p.lb, p.ub)
        assert run.report.converged
        assert merit(sys, run.c) <= 1e-8


def test_cross_solver_agreement_on_cube(diff3d_gal_10):
    p = diff3d_gal_10
    sols = {
        s: solve_bounded(p.system.K, p.system.f, p.lb, p.ub, s, opts=p.vi_options()).c for s in ("ss", "rs", "tron")
    }
    for a in sols:
        for b in sols:
            assert np.abs(sols[a] - sols[b]).max() <= 1e-6


def test_reduced_space_agrees_with_semismooth_on_supg(adr3d_supg_10):
    p = adr3d_supg_10
    runs = [solve_bounded(p.system.K, p.system.f, p.lb, p.ub, s, opts=p.vi_options()) for s in ("rs", "ss")]
    assert runs[0].c.min() >= 0.0
    assert np.abs(runs[0].c - runs[1].c).max() <= 1e-6
