"""Matrix and load-vector assembly for the Galerkin, SUPG and SIPG formulations.

All routines integrate cell by cell in vectorized chunks, scatter element
blocks as COO triplets and sum them into CSR.  Dirichlet conditions are
eliminated symmetrically at the end (see :func:`~vitransport.fem.space.apply_dirichlet`).
"""

from __future__ import annotations

import numpy as np

from ..linalg import SparseMatrix
from .coefficients import VELOCITY_FLOOR, Coefficient, Constant, Expression
from .geometry import cell_points, chunks, face_points, points_in_cells
from .space import AssembledSystem, FunctionSpace, apply_dirichlet, collect_dirichlet

# Default rule sizes (Gauss points per direction on boxes, degree on triangles).
VOLUME_ORDER = 2
FACE_ORDER = 5
DG_VOLUME_ORDER = 2


class AssemblyError(ValueError):
    pass


def as_coefficient(value) -> Coefficient:
    if isinstance(value, Coefficient):
        return value
    if callable(value):
        return Expression(value)
    return Constant(value)


def penalty_constant(dim: int) -> float:
    """Interior-penalty constant ``2 (d + 1) / d``."""
    return 2.0 * (dim + 1) / dim


def _evaluate(method, ps, label):
    """Evaluate a coefficient; name the first offending cell on failure."""
    try:
        out = np.asarray(method(ps), dtype=float)
    except Exception as exc:  # pragma: no cover - reported with context below
        raise AssemblyError(f"{label} evaluation failed near cell {int(ps.cells[0])}: {exc}") from exc
    bad = ~np.isfinite(out)
    if bad.any():
        cell = ps.cells[np.flatnonzero(bad.reshape(len(ps.cells), -1).any(axis=1))[0]]
        raise AssemblyError(f"{label} is not finite in cell {int(cell)}")
    return out


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, dofs, blocks):
        k = dofs.shape[1]
        self.rows.append(np.repeat(dofs, k, axis=1).ravel())
        self.cols.append(np.tile(dofs, (1, k)).ravel())
        self.vals.append(blocks.ravel())

    def matrix(self, n) -> SparseMatrix:
        if not self.rows:
            return SparseMatrix.from_coo([], [], [], (n, n))
        return SparseMatrix.from_coo(
            np.concatenate(self.rows), np.concatenate(self.cols), np.concatenate(self.vals), (n, n)
        )


def _finish(space, K, F, bcs):
    dofs, values = collect_dirichlet(space, bcs)
    A, b = apply_dirichlet(K, F, dofs, values)
    return AssembledSystem(A, b, space, dofs, values, K_free=K, f_free=F)


def _cell_h(mesh, cells, h):
    if h is None:
        return mesh.cell_diameters()[cells]
    return np.full(len(cells), float(h))


# ---------------------------------------------------------------------------
# continuous formulations
# ---------------------------------------------------------------------------


def _continuous(space, D, f, bcs, velocity, supg, h, order, allow_stagnant, label):
    if space.is_dg:
        raise ValueError(f"{label} needs a CG1 space")
    mesh = space.mesh
    D = as_coefficient(D)
    f = as_coefficient(0.0 if f is None else f)
    velocity = None if velocity is None else as_coefficient(velocity)
    n = space.dof_count
    trip = _Triplets()
    F = np.zeros(n)
    for cells in chunks(mesh.num_cells):
        ps = cell_points(mesh, cells, order, hessian=supg)
        G, N, w = ps.grad, ps.N, ps.weights
        Dq = _evaluate(D.values, ps, "diffusivity")
        fq = _evaluate(f.values, ps, "forcing")
        Ke = np.einsum("cqia,cqab,cqjb,cq->cij", G, Dq, G, w)
        test = N
        if velocity is not None:
            vq = _evaluate(velocity.values, ps, "velocity")
            vgrad = np.einsum("cqa,cqka->cqk", vq, G)
            Ke += np.einsum("cqi,cqj,cq->cij", N, vgrad, w)
            if supg:
                speed = np.linalg.norm(vq, axis=-1)
                slow = speed < VELOCITY_FLOOR
                if slow.any() and not allow_stagnant:
                    cell = cells[np.flatnonzero(slow.any(axis=1))[0]]
                    raise AssemblyError(f"velocity below {VELOCITY_FLOOR:g} in cell {int(cell)}")
                hc = _cell_h(mesh, cells, h)
                tau = np.where(slow, 0.0, hc[:, None] / (2.0 * np.where(slow, 1.0, speed)))
                dD = _evaluate(D.gradient, ps, "diffusivity gradient")
                divD = np.einsum("cqaba->cqb", dD)
                div_flux = np.einsum("cqb,cqkb->cqk", divD, G) + np.einsum("cqab,cqkab->cqk", Dq, ps.hess)
                Ke += np.einsum("cq,cqi,cqj,cq->cij", tau, vgrad, vgrad - div_flux, w)
                test = N + tau[..., None] * vgrad
        F_e = np.einsum("cqi,cq,cq->ci", test, fq, w)
        dofs = space.cell_dofs[cells]
        trip.add(dofs, Ke)
        np.add.at(F, dofs, F_e)
    return _finish(space, trip.matrix(n), F, bcs)


def assemble_galerkin_diffusion(space: FunctionSpace, D, f, bcs=(), velocity=None, order=VOLUME_ORDER):
    """Continuous Galerkin system for ``-div(D grad c) (+ v . grad c) = f``.

    Parameters
    ----------
    space : FunctionSpace
        A CG1 space on a triangle, quadrilateral or hexahedral mesh.
    D, f : Coefficient, callable or number
        Diffusivity tensor and volumetric source.
    bcs : sequence of DirichletBC
    velocity : Coefficient, optional
        Adds the unstabilized advection term ``(w, v . grad c)``.
    order : int
        Gauss points per direction (degree of the rule on triangles).
    """
    return _continuous(space, D, f, bcs, velocity, False, None, order, True, "Galerkin assembly")


def assemble_supg(
    space: FunctionSpace,
    D,
    velocity,
    f,
    bcs=(),
    h=None,
    stabilization=True,
    order=VOLUME_ORDER,
    allow_stagnant=False,
):
    """Streamline-upwind Petrov-Galerkin system for steady advection-diffusion.

    The test function is ``w + tau v . grad w`` with ``tau = h / (2 |v|)``.
    The strong residual keeps ``div(D grad c)``, which on bilinear and
    trilinear cells is nonzero through the mixed second derivatives and on
    any cell through the gradient of ``D``.

    ``h`` is a constant element size (structured meshes) or ``None`` to use
    each cell's diameter.  Where ``|v|`` falls below the velocity floor the
    assembly fails unless ``allow_stagnant`` is set, in which case ``tau`` is
    zero there.  ``stabilization=False`` gives the plain Galerkin
    advection-diffusion system.
    """
    if velocity is None:
        raise ValueError("SUPG needs a velocity field")
    return _continuous(
        space, D, f, bcs, velocity, stabilization, h, order, allow_stagnant, "SUPG assembly"
    )


def assemble_mass(space: FunctionSpace, order=2) -> SparseMatrix:
    """Consistent mass matrix ``(w, u)``."""
    mesh = space.mesh
    trip = _Triplets()
    for cells in chunks(mesh.num_cells):
        ps = cell_points(mesh, cells, order)
        trip.add(space.cell_dofs[cells], np.einsum("cqi,cqj,cq->cij", ps.N, ps.N, ps.weights))
    return trip.matrix(space.dof_count)


def assemble_load(space: FunctionSpace, f, order=2) -> np.ndarray:
    """Load vector ``(w, f)``."""
    mesh = space.mesh
    f = as_coefficient(f)
    F = np.zeros(space.dof_count)
    for cells in chunks(mesh.num_cells):
        ps = cell_points(mesh, cells, order)
        fq = _evaluate(f.values, ps, "forcing")
        np.add.at(F, space.cell_dofs[cells], np.einsum("cqi,cq,cq->ci", ps.N, fq, ps.weights))
    return F


# ---------------------------------------------------------------------------
# interior-penalty discontinuous Galerkin
# ---------------------------------------------------------------------------


def assemble_dg(
    space: FunctionSpace,
    D,
    velocity,
    f,
    bcs=(),
    epsilon=-1,
    gamma=None,
    h=None,
    volume_order=DG_VOLUME_ORDER,
    face_order=FACE_ORDER,
    swap_sides=False,
):
    """Interior-penalty DG system with optional upwinded advection.

    Bilinear form, with ``[w] = w+ - w-`` and ``{q} = (q+ + q-) / 2`` on an
    interior face with unit normal ``n`` pointing out of the (+) cell::

        (grad w, D grad c) - <[w] n, {D grad c}> + eps <{D grad w}, [c] n>
          + gamma / h <[w], [c]>
          - (grad w, v c) + <[w], vn+ c+ - vn- c->  + <w, vn c>_boundary

    where ``vn = (v.n + |v.n|) / 2`` is evaluated with each side's outward
    normal.  ``epsilon = -1`` is the symmetric interior penalty method.

    Parameters
    ----------
    velocity : Coefficient or None
        ``None`` drops all advective terms.
    gamma : float, optional
        Penalty constant, default ``2 (d + 1) / d``.
    h : float, optional
        Element size in the penalty; ``None`` averages the two cell diameters.
    swap_sides : bool
        Exchange the (+) and (-) cells of every interior face.  The assembled
        operator does not depend on this choice.
    """
    if not space.is_dg:
        raise ValueError("DG assembly needs a DG1 space")
    if epsilon not in (-1, 0, 1):
        raise ValueError("epsilon must be -1, 0 or +1")
    mesh = space.mesh
    if mesh.num_cells > 1 and mesh.num_interior_faces == 0:
        raise AssemblyError("mesh has no interior faces; build them before DG assembly")
    gamma = penalty_constant(mesh.dim) if gamma is None else float(gamma)
    D = as_coefficient(D)
    f = as_coefficient(0.0 if f is None else f)
    velocity = None if velocity is None else as_coefficient(velocity)
    n = space.dof_count
    trip = _Triplets()
    F = np.zeros(n)

    for cells in chunks(mesh.num_cells):
        ps = cell_points(mesh, cells, volume_order)
        G, w = ps.grad, ps.weights
        Dq = _evaluate(D.values, ps, "diffusivity")
        Ke = np.einsum("cqia,cqab,cqjb,cq->cij", G, Dq, G, w)
        if velocity is not None:
            vq = _evaluate(velocity.values, ps, "velocity")
            Ke -= np.einsum("cqia,cqa,cqj,cq->cij", G, vq, ps.N, w)
        fq = _evaluate(f.values, ps, "forcing")
        dofs = space.cell_dofs[cells]
        trip.add(dofs, Ke)
        np.add.at(F, dofs, np.einsum("cqi,cq,cq->ci", ps.N, fq, w))

    diam = mesh.cell_diameters() if h is None else None
    left_all, right_all = np.asarray(mesh.interior_left), np.asarray(mesh.interior_right)
    normals_all = np.asarray(mesh.interior_normals)
    if swap_sides:
        left_all, right_all, normals_all = right_all, left_all, -normals_all
    for faces in chunks(mesh.num_interior_faces):
        L, R, nrm = left_all[faces], right_all[faces], normals_all[faces]
        x, wf = face_points(mesh, mesh.interior_nodes[faces], face_order)
        pl = points_in_cells(mesh, L, x, wf)
        pr = points_in_cells(mesh, R, x, wf)
        Dl = _evaluate(D.values, pl, "diffusivity")
        Dr = _evaluate(D.values, pr, "diffusivity")
        jump = np.concatenate([pl.N, -pr.N], axis=2)
        flux_l = np.einsum("fqab,fqkb,fa->fqk", Dl, pl.grad, nrm)
        flux_r = np.einsum("fqab,fqkb,fa->fqk", Dr, pr.grad, nrm)
        avg = 0.5 * np.concatenate([flux_l, flux_r], axis=2)
        hf = (0.5 * (diam[L] + diam[R]) if diam is not None else np.full(len(faces), float(h)))
        Kf = (
            -np.einsum("fqi,fqj,fq->fij", jump, avg, wf)
            + epsilon * np.einsum("fqi,fqj,fq->fij", avg, jump, wf)
            + np.einsum("f,fqi,fqj,fq->fij", gamma / hf, jump, jump, wf)
        )
        if velocity is not None:
            vl = _evaluate(velocity.values, pl, "velocity")
            vr = _evaluate(velocity.values, pr, "velocity")
            an_l = np.einsum("fqa,fa->fq", vl, nrm)
            an_r = -np.einsum("fqa,fa->fq", vr, nrm)
            vn_l = 0.5 * (an_l + np.abs(an_l))
            vn_r = 0.5 * (an_r + np.abs(an_r))
            upwind = np.concatenate([vn_l[..., None] * pl.N, -vn_r[..., None] * pr.N], axis=2)
            Kf += np.einsum("fqi,fqj,fq->fij", jump, upwind, wf)
        trip.add(np.concatenate([space.cell_dofs[L], space.cell_dofs[R]], axis=1), Kf)

    if velocity is not None and len(mesh.boundary_cells):
        for faces in chunks(len(mesh.boundary_cells)):
            owner = np.asarray(mesh.boundary_cells)[faces]
            nrm = np.asarray(mesh.boundary_normals)[faces]
            x, wf = face_points(mesh, mesh.boundary_faces[faces], face_order)
            pb = points_in_cells(mesh, owner, x, wf)
            vb = _evaluate(velocity.values, pb, "velocity")
            an = np.einsum("fqa,fa->fq", vb, nrm)
            vn = 0.5 * (an + np.abs(an))
            Kb = np.einsum("fqi,fq,fqj,fq->fij", pb.N, vn, pb.N, wf)
            trip.add(space.cell_dofs[owner], Kb)

    return _finish(space, trip.matrix(n), F, bcs)
