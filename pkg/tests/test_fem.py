import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vitransport.benchmarks import DISPERSIVITY, build_problem
from vitransport.fem import (
    AssemblyError,
    DirichletBC,
    Dispersion,
    Expression,
    FunctionSpace,
    Interpolant,
    abc_velocity,
    assemble_dg,
    assemble_galerkin_diffusion,
    assemble_load,
    assemble_mass,
    assemble_supg,
    box_source_2d,
    dispersion_tensor,
    field_stats,
    penalty_constant,
    point_source_forcing_3d,
    vortex_velocity_2d,
)
from vitransport.mesh import build_structured_quad_mesh, extrude_to_hex

SQUARE_TAGS = (1, 2, 3, 4)


def direct_solve(system):
    return spla.spsolve(system.K.scipy.tocsc(), system.f)


# --- spaces ------------------------------------------------------------------


@pytest.mark.parametrize("seed", [1, 3, 10])
def test_dof_counts(seed):
    mesh = extrude_to_hex(build_structured_quad_mesh(seed, seed), seed)
    assert FunctionSpace(mesh, "CG1").dof_count == (seed + 1) ** 3
    assert FunctionSpace(mesh, "DG1").dof_count == 8 * seed**3


def test_unknown_space_kind(unit_square_4):
    with pytest.raises(ValueError):
        FunctionSpace(unit_square_4, "CG2")


@pytest.mark.parametrize("dim, gamma", [(2, 3.0), (3, 8.0 / 3.0)])
def test_penalty_constant(dim, gamma):
    assert penalty_constant(dim) == pytest.approx(gamma, rel=1e-15)


# --- coefficient fields ------------------------------------------------------


def test_dispersion_along_x():
    D = dispersion_tensor([1.0, 0.0], 1e-1, 1e-5, 1e-9)
    np.testing.assert_allclose(D, np.diag([0.100000001, 1.0001e-5]), rtol=1e-14, atol=1e-20)


@settings(max_examples=50, deadline=None)
@given(v=arrays(float, 3, elements=st.floats(-10, 10)), a=st.floats(0, 1), d=st.floats(0, 1e-3))
def test_dispersion_isotropic_when_dispersivities_match(v, a, d):
    D = dispersion_tensor(v, a, a, d)
    speed = np.linalg.norm(v)
    expected = (d + a * speed) if speed >= 1e-12 else d
    np.testing.assert_allclose(D, expected * np.eye(3), atol=1e-12 * max(1.0, expected))


@settings(max_examples=50, deadline=None)
@given(
    v=arrays(float, 3, elements=st.floats(-5, 5)).filter(lambda v: np.linalg.norm(v) > 1e-3),
    al=st.floats(0, 1),
    at=st.floats(0, 1),
    ad=st.floats(0, 1e-3),
)
def test_dispersion_eigenvalues(v, al, at, ad):
    D = dispersion_tensor(v, al, at, ad)
    np.testing.assert_allclose(D, D.T, atol=0)
    s = np.linalg.norm(v)
    expected = np.sort([ad + al * s, ad + at * s, ad + at * s])
    np.testing.assert_allclose(np.linalg.eigvalsh(D), expected, atol=1e-12)


def test_dispersion_stagnant_fallback():
    np.testing.assert_array_equal(dispersion_tensor([0.0, 0.0], 0.1, 1e-5, 1e-9), 1e-9 * np.eye(2))


@pytest.mark.parametrize("bad", [(-1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, -1.0)])
def test_dispersion_rejects_negative(bad):
    with pytest.raises(ValueError):
        dispersion_tensor([1.0, 0.0], *bad)
    with pytest.raises(ValueError):
        Dispersion(Interpolant(vortex_velocity_2d), *bad)


@pytest.mark.parametrize(
    "func, x, expected",
    [
        (abc_velocity, (0.0, 0.0, 0.0), (1.0, 0.3, 0.65)),
        (abc_velocity, (1.0, 1.0, 1.0), (-1.0, -0.3, 0.65)),
        (vortex_velocity_2d, (0.0, 0.0), (1.0, 1.0)),
    ],
)
def test_velocity_values(func, x, expected):
    np.testing.assert_allclose(func(np.array(x)), expected, atol=1e-14)


def test_abc_velocity_periods(rng):
    x = rng.uniform(0, 1, (20, 3))
    # common periods of the terms: 1 in x, 2 in y (cos 3 pi y), 2 in z (cos 5 pi z)
    for shift in ([1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]):
        np.testing.assert_allclose(abc_velocity(x + shift), abc_velocity(x), atol=1e-12)


@pytest.mark.parametrize(
    "x, expected",
    [((0.45, 0.25, 0.15), 1.0), ((0.0, 0.0, 0.0), 0.0), ((0.85, 0.45, 0.25), 1.0), ((0.95, 0.95, 0.95), 0.0)],
)
def test_point_source_values(x, expected):
    assert point_source_forcing_3d(np.array(x)) == expected


def test_point_source_integral_over_cube():
    mesh = extrude_to_hex(build_structured_quad_mesh(10, 10), 10)
    # Gauss points never sit on the box faces, so the pointwise rule is exact here
    F = assemble_load(FunctionSpace(mesh, "CG1"), Expression(point_source_forcing_3d))
    assert F.sum() == pytest.approx(0.008, rel=1e-12)


@pytest.mark.parametrize("x, expected", [((0.5, 0.61), 1.0), ((0.5, 0.5), 0.0), ((0.1, 0.61), 0.0)])
def test_box_source_2d_support(x, expected):
    assert box_source_2d(np.array(x)) == expected


# --- field statistics --------------------------------------------------------


@pytest.mark.parametrize(
    "values, lo, hi, expected",
    [
        ([-1.0, 0.0, 0.5, 2.0], 0.0, 1.0, (-1.0, 2.0, 2, 4)),
        ([0.0, 0.0, 0.0], 0.0, np.inf, (0.0, 0.0, 0, 3)),
    ],
)
def test_field_stats_examples(values, lo, hi, expected):
    s = field_stats(values, lo, hi)
    assert (s.min_value, s.max_value, s.violating_dofs, s.total_dofs) == expected


@given(arrays(float, st.integers(1, 50), elements=st.floats(-5, 5)))
def test_field_stats_counts_bounded(values):
    s = field_stats(values, 0.0, 1.0)
    assert 0 <= s.violating_dofs <= s.total_dofs
    assert s.violating_dofs == np.count_nonzero((values < 0) | (values > 1))


def test_field_stats_rejects_nonfinite():
    with pytest.raises(ValueError):
        field_stats([0.0, np.nan])


# --- Galerkin ----------------------------------------------------------------


def rectangle_stiffness(a, b):
    """Closed-form bilinear stiffness of an a-by-b rectangle, counter-clockwise nodes."""
    kx = np.array([[2, -2, -1, 1], [-2, 2, 1, -1], [-1, 1, 2, -2], [1, -1, -2, 2]])
    ky = np.array([[2, 1, -1, -2], [1, 2, -2, -1], [-1, -2, 2, 1], [-2, -1, 1, 2]])
    return b / (6 * a) * kx + a / (6 * b) * ky


def test_galerkin_strip_matches_hand_integration():
    mesh = build_structured_quad_mesh(2, 1)
    space = FunctionSpace(mesh, "CG1")
    system = assemble_galerkin_diffusion(space, np.eye(2), 0.0)
    expected = np.zeros((6, 6))
    for cell in mesh.cells:
        expected[np.ix_(cell, cell)] += rectangle_stiffness(0.5, 1.0)
    np.testing.assert_allclose(system.K_free.to_dense(), expected, atol=1e-14)


def test_galerkin_zero_data_gives_zero(unit_square_4):
    space = FunctionSpace(unit_square_4, "CG1")
    system = assemble_galerkin_diffusion(space, np.eye(2), 0.0, [DirichletBC(SQUARE_TAGS, 0.0)])
    np.testing.assert_array_equal(direct_solve(system), 0.0)


def test_dirichlet_rows_are_identity(cube_3):
    space = FunctionSpace(cube_3, "CG1")
    bc = DirichletBC((1, 2), lambda x: 1.0 + x[:, 2])
    system = assemble_galerkin_diffusion(space, np.eye(3), 1.0, [bc])
    dofs = system.constrained_dofs
    K = system.K.to_dense()
    np.testing.assert_array_equal(K[dofs], np.eye(space.dof_count)[dofs])
    np.testing.assert_array_equal(K[:, dofs], np.eye(space.dof_count)[:, dofs])
    np.testing.assert_allclose(system.f[dofs], 1.0 + space.dof_coords[dofs, 2])


def test_dirichlet_unknown_tag(unit_square_4):
    with pytest.raises(ValueError, match="do not exist"):
        assemble_galerkin_diffusion(FunctionSpace(unit_square_4, "CG1"), np.eye(2), 0.0, [DirichletBC(99, 0.0)])


def test_evaluator_failure_names_cell(unit_square_4):
    def bad(x):
        out = np.ones(x.shape[:-1])
        out[x[..., 0] > 0.8] = np.nan
        return out

    with pytest.raises(AssemblyError, match="cell"):
        assemble_galerkin_diffusion(FunctionSpace(unit_square_4, "CG1"), np.eye(2), Expression(bad))


def test_mass_matrix_integrates_constants(cube_3):
    for kind in ("CG1", "DG1"):
        M = assemble_mass(FunctionSpace(cube_3, kind))
        assert M.is_symmetric()
        assert M.scipy.sum() == pytest.approx(1.0, rel=1e-13)


def test_lepotier_diffusion_violates_nonnegativity():
    problem = build_problem("diff2d", "gal", 1 / 200)
    stats = field_stats(direct_solve(problem.system), 0.0)
    assert stats.min_value < 0


# --- constant reproduction ---------------------------------------------------


def advection_square(kind, seed=6):
    mesh = build_structured_quad_mesh(seed, seed)
    v = Interpolant(vortex_velocity_2d)
    return FunctionSpace(mesh, kind), v, Dispersion(v, **DISPERSIVITY)


@pytest.mark.parametrize("formulation", ["gal", "supg", "dg"])
@pytest.mark.parametrize("kappa", [0.0, 0.7, 3.0])
def test_constant_boundary_values_are_reproduced(formulation, kappa):
    space, v, D = advection_square("DG1" if formulation == "dg" else "CG1")
    bcs = [DirichletBC(SQUARE_TAGS, kappa)]
    if formulation == "gal":
        system = assemble_galerkin_diffusion(space, D, 0.0, bcs, velocity=v)
    elif formulation == "supg":
        system = assemble_supg(space, D, v, 0.0, bcs)
    else:
        system = assemble_dg(space, D, v, 0.0, bcs)
    np.testing.assert_allclose(direct_solve(system), kappa, atol=1e-10)


# --- SUPG --------------------------------------------------------------------


def test_supg_without_stabilization_equals_galerkin():
    space, v, D = advection_square("CG1")
    bcs = [DirichletBC(SQUARE_TAGS, 0.0)]
    supg = assemble_supg(space, D, v, 1.0, bcs, stabilization=False)
    gal = assemble_galerkin_diffusion(space, D, 1.0, bcs, velocity=v)
    np.testing.assert_allclose(supg.K.to_dense(), gal.K.to_dense(), atol=1e-15)
    np.testing.assert_allclose(supg.f, gal.f, atol=1e-15)


def test_supg_is_nonsymmetric():
    space, v, D = advection_square("CG1")
    assert not assemble_supg(space, D, v, 1.0).K_free.is_symmetric()


def test_supg_rejects_stagnant_velocity(unit_square_4):
    space = FunctionSpace(unit_square_4, "CG1")
    still = Expression(lambda x: np.zeros(x.shape), grad=lambda x: np.zeros(x.shape + (2,)))
    with pytest.raises(AssemblyError):
        assemble_supg(space, np.eye(2), still, 1.0)
    gal = assemble_galerkin_diffusion(space, np.eye(2), 1.0)
    supg = assemble_supg(space, np.eye(2), still, 1.0, allow_stagnant=True)
    np.testing.assert_allclose(supg.K.to_dense(), gal.K.to_dense(), atol=1e-15)


def test_supg_needs_velocity(unit_square_4):
    with pytest.raises(ValueError):
        assemble_supg(FunctionSpace(unit_square_4, "CG1"), np.eye(2), None, 1.0)


def test_holed_square_supg_violates_both_bounds():
    problem = build_problem("adr2d", "supg")
    stats = field_stats(direct_solve(problem.system), 0.0, 1.0)
    assert stats.min_value < 0 and stats.max_value > 1


# --- DG ----------------------------------------------------------------------


def test_dg_single_cell_equals_galerkin_block():
    mesh = build_structured_quad_mesh(1, 1)
    D = np.array([[2.0, 0.3], [0.3, 1.0]])
    dg_space = FunctionSpace(mesh, "DG1")
    dg = assemble_dg(dg_space, D, None, 0.0).K_free.to_dense()
    cg = assemble_galerkin_diffusion(FunctionSpace(mesh, "CG1"), D, 0.0).K_free.to_dense()
    dofs, nodes = dg_space.cell_dofs[0], mesh.cells[0]
    np.testing.assert_allclose(dg[np.ix_(dofs, dofs)], cg[np.ix_(nodes, nodes)], atol=1e-14)


@pytest.mark.parametrize("with_velocity", [False, True])
def test_dg_independent_of_side_convention(with_velocity):
    space, v, D = advection_square("DG1")
    vel = v if with_velocity else None
    bcs = [DirichletBC(SQUARE_TAGS, 0.5)]
    a = assemble_dg(space, D, vel, 1.0, bcs)
    b = assemble_dg(space, D, vel, 1.0, bcs, swap_sides=True)
    scale = a.K.max_abs()
    assert np.abs(a.K.to_dense() - b.K.to_dense()).max() <= 1e-12 * scale
    np.testing.assert_allclose(a.f, b.f, atol=1e-12)


@pytest.mark.parametrize("epsilon, symmetric", [(-1, True), (0, False), (1, False)])
def test_dg_symmetry_by_epsilon(epsilon, symmetric):
    space, _, _ = advection_square("DG1", seed=3)
    D = np.array([[1.0, 0.2], [0.2, 0.5]])
    assert assemble_dg(space, D, None, 0.0, epsilon=epsilon).K_free.is_symmetric() == symmetric


def test_dg_argument_checks(unit_square_4):
    with pytest.raises(ValueError):
        assemble_dg(FunctionSpace(unit_square_4, "CG1"), np.eye(2), None, 0.0)
    with pytest.raises(ValueError):
        assemble_dg(FunctionSpace(unit_square_4, "DG1"), np.eye(2), None, 0.0, epsilon=2)


def test_dg_dirichlet_dofs_are_on_tagged_faces():
    # 3x3 cells: corner cells own 3 boundary-face nodes, edge cells 2
    space = FunctionSpace(build_structured_quad_mesh(3, 3), "DG1")
    dofs = DirichletBC(SQUARE_TAGS).dofs(space)
    assert len(dofs) == 4 * 3 + 4 * 2
    assert not np.isin(space.cell_dofs[4], dofs).any()


# --- benchmark rows ----------------------------------------------------------

# Rows from a sparse direct solve of the assembled systems.  Min and max agree
# with REFERENCE_EXTREMES to 2e-3; the violating counts are this
# discretization's own and are frozen as regression values.
FROZEN_ROWS = [
    ("diff3d", "gal", -0.022449711269924233, 0.3683223050576911, 103, 1331),
    ("diff3d", "dg", -0.022601255225564165, 0.3728024853407175, 831, 8000),
    ("adr3d", "supg", -0.013567578090385576, 0.18748879555961595, 87, 1331),
    ("adr3d", "dg", -0.015060727294997318, 0.25842837325297896, 1322, 8000),
]

REFERENCE_EXTREMES = {
    ("diff3d", "gal"): (-0.0224497, 0.368322),
    ("diff3d", "dg"): (-0.0226040, 0.372831),
    ("adr3d", "supg"): (-0.0135676, 0.187489),
    ("adr3d", "dg"): (-0.0151514, 0.259127),
}


@pytest.mark.parametrize("name, formulation, lo, hi, bad, total", FROZEN_ROWS)
def test_benchmark_rows_frozen(name, formulation, lo, hi, bad, total):
    problem = build_problem(name, formulation, 1 / 10)
    stats = field_stats(direct_solve(problem.system), problem.lb, problem.ub)
    assert stats.min_value == pytest.approx(lo, abs=1e-9)
    assert stats.max_value == pytest.approx(hi, abs=1e-9)
    assert (stats.violating_dofs, stats.total_dofs) == (bad, total)
    ref_lo, ref_hi = REFERENCE_EXTREMES[name, formulation]
    assert abs(stats.min_value - ref_lo) <= 2e-3
    assert abs(stats.max_value - ref_hi) <= 2e-3
