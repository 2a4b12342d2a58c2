"""Finite element spaces, coefficient fields and assembly."""

from .assembly import (
    AssemblyError,
    as_coefficient,
    assemble_dg,
    assemble_galerkin_diffusion,
    assemble_load,
    assemble_mass,
    assemble_supg,
    penalty_constant,
)
from .coefficients import (
    BOX_SOURCE_2D,
    POINT_SOURCE_BOXES,
    VELOCITY_FLOOR,
    CellwiseConstant,
    Coefficient,
    Constant,
    Dispersion,
    Expression,
    Interpolant,
    NodalField,
    abc_velocity,
    box_source_2d,
    dispersion_tensor,
    lepotier_diffusivity,
    point_source_forcing_3d,
    vortex_velocity_2d,
)
from .space import (
    AssembledSystem,
    DirichletBC,
    FieldStats,
    FunctionSpace,
    apply_dirichlet,
    collect_dirichlet,
    field_stats,
    write_stats_csv,
)
