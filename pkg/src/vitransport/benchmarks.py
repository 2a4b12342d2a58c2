"""Steady benchmark problems: anisotropic diffusion and advection-diffusion.

``diff2d``
    Heterogeneous anisotropic diffusion on the unit square (quadrilaterals),
    box source, zero boundary values, bounds ``[0, inf)``.
``adr2d``
    Vortex flow with flow-induced dispersion on the unit square with a
    square hole (triangles); zero on the outer boundary, one on the hole,
    no source, bounds ``[0, 1]``.
``diff3d`` / ``adr3d``
    Dispersion driven by an ABC-type flow in the unit cube (hexahedra),
    eight box sources, zero on all faces, bounds ``[0, inf)``.  ``adr3d``
    adds the advection term.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import fem
from .fem import (
    DirichletBC,
    Dispersion,
    FunctionSpace,
    Interpolant,
    abc_velocity,
    box_source_2d,
    lepotier_diffusivity,
    point_source_forcing_3d,
    vortex_velocity_2d,
)
from .vi import ViOptions
from .linalg import KrylovOptions
from .mesh import build_structured_quad_mesh, extrude_to_hex, load_square_with_hole

STEADY_PROBLEMS = ("diff2d", "adr2d", "diff3d", "adr3d")
FORMULATIONS = ("gal", "supg", "dg")
DISPERSIVITY = dict(alpha_l=1e-1, alpha_t=1e-5, alpha_d=1e-9)

ALLOWED = {
    "diff2d": ("gal", "dg"),
    "adr2d": ("gal", "supg", "dg"),
    "diff3d": ("gal", "dg"),
    "adr3d": ("gal", "supg", "dg"),
}


@dataclasses.dataclass
class SteadyProblem:
    name: str
    formulation: str
    system: fem.AssembledSystem
    lb: float
    ub: float
    h: float | None
    preconditioner: str = "ilu0"

    def krylov_options(self, rel_tol=1e-7, **kw):
        """Krylov options with this problem's preconditioner."""
        return KrylovOptions(rel_tol=rel_tol, preconditioner=self.preconditioner, **kw)

    def vi_options(self, **kw):
        """Bound-constrained solver options whose inner solves use this problem's preconditioner."""
        return ViOptions(inner=KrylovOptions(rel_tol=1e-3, max_iters=2000, preconditioner=self.preconditioner), **kw)

    @property
    def space(self):
        return self.system.space

    @property
    def mesh(self):
        return self.system.space.mesh


def seed_from_h(h) -> int:
    """Cells per side for a structured mesh of size ``h``."""
    seed = int(round(1.0 / float(h)))
    if seed < 1 or abs(seed * float(h) - 1.0) > 1e-9:
        raise ValueError(f"h = {h} is not the reciprocal of a positive integer")
    return seed


def _assemble(formulation, space, D, velocity, f, bcs, h):
    if formulation == "gal":
        return fem.assemble_galerkin_diffusion(space, D, f, bcs, velocity=velocity)
    if formulation == "supg":
        return fem.assemble_supg(space, D, velocity, f, bcs, h=h)
    return fem.assemble_dg(space, D, velocity, f, bcs, h=h)


def build_problem(name: str, formulation: str, h=None, box=None) -> SteadyProblem:
    """Assemble one of the steady benchmarks.

    ``h`` is the structured mesh size (``1 / cells per side``); the holed
    square uses its bundled triangulation and ignores ``h``.  ``box`` overrides
    the 2D source support ``((x0, y0), (x1, y1))``.
    """
    if name not in ALLOWED:
        raise ValueError(f"unknown problem {name!r}; expected one of {STEADY_PROBLEMS}")
    if formulation not in ALLOWED[name]:
        raise ValueError(f"formulation {formulation!r} is not available for {name}")
    kind = "DG1" if formulation == "dg" else "CG1"

    if name == "diff2d":
        seed = seed_from_h(h if h is not None else 1 / 200)
        mesh = build_structured_quad_mesh(seed, seed)
        space = FunctionSpace(mesh, kind)
        source = box_source_2d if box is None else (lambda x: box_source_2d(x, box))
        D = Interpolant(lepotier_diffusivity)
        system = _assemble(formulation, space, D, None, Interpolant(source), [DirichletBC((1, 2, 3, 4), 0.0)], 1.0 / seed)
        # the eps = 1e-4 anisotropy defeats ILU(0); factor exactly instead
        return SteadyProblem(name, formulation, system, 0.0, np.inf, 1.0 / seed, preconditioner="lu")

    if name == "adr2d":
        mesh = load_square_with_hole()
        space = FunctionSpace(mesh, kind)
        v = Interpolant(vortex_velocity_2d)
        D = Dispersion(v, **DISPERSIVITY)
        bcs = [DirichletBC((12, 13, 14, 15), 0.0), DirichletBC((16, 17, 18, 19), 1.0)]
        system = _assemble(formulation, space, D, v, 0.0, bcs, None)
        # ILU(0)-GMRES stalls on the DG vortex system; factor exactly instead
        preconditioner = "lu" if formulation == "dg" else "ilu0"
        return SteadyProblem(name, formulation, system, 0.0, 1.0, None, preconditioner=preconditioner)

    seed = seed_from_h(h if h is not None else 1 / 10)
    mesh = extrude_to_hex(build_structured_quad_mesh(seed, seed), seed)
    space = FunctionSpace(mesh, kind)
    v = Interpolant(abc_velocity)
    D = Dispersion(v, **DISPERSIVITY)
    velocity = v if name == "adr3d" else None
    bcs = [DirichletBC((1, 2, 3, 4, 5, 6), 0.0)]
    system = _assemble(formulation, space, D, velocity, Interpolant(point_source_forcing_3d), bcs, 1.0 / seed)
    return SteadyProblem(name, formulation, system, 0.0, np.inf, 1.0 / seed)
