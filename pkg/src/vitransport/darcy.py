"""Lowest-order Raviart-Thomas mixed discretization of Darcy flow.

Velocity dofs live on faces: the dof of a face is the average velocity
component along the face's global normal, which points from the lower to
the higher numbered cell (outward on the boundary).  Pressure is constant
per cell.  The discrete system is

    [ K_vv  K_vp ] [v]   [f_v]
    [ K_pv   0   ] [p] = [ 0 ]

with ``K_vv = (w, mu/k v)``, ``K_vp = -(div w, p)``, ``K_pv = K_vp^T`` and
``f_v = (w, rho b) - <w.n, p_D>`` on pressure boundaries.  Normal-velocity
boundary conditions are imposed strongly on face dofs.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import reference as ref
from .fem.geometry import cell_points
from .fem.coefficients import CellwiseConstant, Coefficient, Constant, Expression
from .linalg import (
    KrylovOptions,
    SolveReport,
    SparseMatrix,
    block_matrix,
    cg_solve,
    gmres_solve,
    ilu0_factor,
)
from .mesh import CELL_FACES, Mesh

__all__ = [
    "DarcyFields",
    "DarcyBlockSystem",
    "LumpingError",
    "assemble_rt0_darcy",
    "solve_darcy_schur",
    "solve_darcy_direct",
    "cell_divergence",
    "cell_velocity",
    "face_fluxes",
]

# (axis, side) of each local face in the reference box, in CELL_FACES order
_REF_FACES = {
    "quad4": ((1, 0), (0, 1), (1, 1), (0, 0)),
    "hex8": ((2, 0), (2, 1), (1, 0), (0, 1), (1, 1), (0, 0)),
}


class LumpingError(ArithmeticError):
    pass


def _scalar_field(value, mesh):
    """Coerce a number, per-cell array, callable or coefficient."""
    if isinstance(value, Coefficient):
        return value
    if callable(value):
        return Expression(value)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1 and len(arr) == mesh.num_cells:
        return CellwiseConstant(arr)
    if arr.ndim == 0:
        return Constant(arr)
    raise ValueError(f"expected a scalar or one value per cell, got shape {arr.shape}")


def _vector_field(value):
    if isinstance(value, Coefficient):
        return value
    if callable(value):
        return Expression(value)
    return Constant(np.asarray(value, dtype=float))


@dataclasses.dataclass
class DarcyFields:
    """Material data and boundary conditions.

    ``permeability`` and ``viscosity`` may be numbers, per-cell arrays or
    coefficients.  ``pressure_bc`` and ``velocity_bc`` map boundary tags to a
    value (number or function of points); ``velocity_bc`` prescribes the
    outward normal velocity.  Untagged boundary faces carry zero pressure.
    """

    permeability: object = 1.0
    viscosity: object = 1.0
    density: float = 1.0
    body_force: object = None
    pressure_bc: dict = dataclasses.field(default_factory=dict)
    velocity_bc: dict = dataclasses.field(default_factory=dict)


@dataclasses.dataclass
class DarcyBlockSystem:
    K_vv: SparseMatrix
    K_vp: SparseMatrix
    K_pv: SparseMatrix
    f_v: np.ndarray
    f_p: np.ndarray
    mesh: Mesh
    cell_faces: np.ndarray
    cell_signs: np.ndarray
    face_areas: np.ndarray
    face_normals: np.ndarray
    constrained_faces: np.ndarray

    @property
    def n_velocity(self) -> int:
        return self.K_vv.nrows

    @property
    def n_pressure(self) -> int:
        return self.K_pv.nrows

    def block(self) -> SparseMatrix:
        return block_matrix([[self.K_vv, self.K_vp], [self.K_pv, None]])

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.f_v, self.f_p])


def _face_numbering(mesh: Mesh):
    """Global face ids and orientation signs per (cell, local face)."""
    ni = mesh.num_interior_faces
    all_nodes = np.concatenate([np.asarray(mesh.interior_nodes), np.asarray(mesh.boundary_faces)])
    owner = np.concatenate([np.asarray(mesh.interior_left), np.asarray(mesh.boundary_cells)])
    normals = np.concatenate([np.asarray(mesh.interior_normals), np.asarray(mesh.boundary_normals)])
    keys = np.sort(all_nodes, axis=1)
    local = CELL_FACES[mesh.cell_kind]
    cell_keys = np.stack([np.sort(np.asarray(mesh.cells)[:, list(f)], axis=1) for f in local], axis=1)
    nf = len(local)
    # match by lexicographic search on the sorted key rows
    order = np.lexsort(keys.T[::-1])
    sorted_keys = keys[order]
    flat = cell_keys.reshape(-1, keys.shape[1])
    view = lambda a: np.ascontiguousarray(a).view([("", a.dtype)] * a.shape[1]).ravel()
    pos = np.searchsorted(view(sorted_keys), view(flat))
    cell_faces = order[pos].reshape(mesh.num_cells, nf)
    if not np.array_equal(keys[cell_faces.ravel()], flat):
        raise ValueError("face numbering failed: mesh faces are inconsistent")
    cells = np.repeat(np.arange(mesh.num_cells)[:, None], nf, axis=1)
    signs = np.where(owner[cell_faces] == cells, 1.0, -1.0)
    return cell_faces, signs, all_nodes, normals, ni


def _face_area(mesh, nodes):
    X = mesh.nodes[nodes]
    if X.shape[1] == 2:
        return np.linalg.norm(X[:, 1] - X[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(X[:, 2] - X[:, 0], X[:, 3] - X[:, 1]), axis=1)


def _basis(mesh, areas_local, signs, order=2):
    """Physical RT0 basis at quadrature points.

    Returns ``x`` (C, Q, d), ``phi`` (C, Q, nf, d), ``div`` (C, Q, nf) and
    ``weights`` (C, Q).
    """
    kind = mesh.cell_kind
    d = mesh.dim
    xi, w = ref.box_rule(d, order)
    verts = mesh.nodes[mesh.cells]
    N = ref.shape(kind, xi)
    dN = ref.shape_grad(kind, xi)
    J = np.einsum("cka,qkb->cqab", verts, dN)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise ValueError("inverted cell in Darcy mesh")
    nf = len(_REF_FACES[kind])
    psi = np.zeros((len(xi), nf, d))
    for k, (axis, side) in enumerate(_REF_FACES[kind]):
        psi[:, k, axis] = xi[:, axis] if side == 1 else xi[:, axis] - 1.0
    scale = areas_local * signs  # (C, nf)
    phi = np.einsum("cqab,qkb->cqka", J, psi) / det[..., None, None] * scale[:, None, :, None]
    div = (1.0 / det)[..., None] * scale[:, None, :]
    x = np.einsum("qk,cka->cqa", N, verts)
    return x, phi, div, det * w[None, :]


def assemble_rt0_darcy(mesh: Mesh, fields: DarcyFields, order=2) -> DarcyBlockSystem:
    """Assemble the RT0 / piecewise-constant block system on quads or hexes."""
    if mesh.cell_kind not in _REF_FACES:
        raise ValueError(f"RT0 is implemented for quad4 and hex8 cells, not {mesh.cell_kind}")
    cell_faces, signs, face_nodes, face_normals, _ = _face_numbering(mesh)
    n_faces = len(face_nodes)
    areas = _face_area(mesh, face_nodes)
    x, phi, div, wq = _basis(mesh, areas[cell_faces], signs, order)
    cells = np.arange(mesh.num_cells)

    pts = cell_points(mesh, cells, order)
    k = np.asarray(_scalar_field(fields.permeability, mesh).values(pts), dtype=float)
    mu = np.asarray(_scalar_field(fields.viscosity, mesh).values(pts), dtype=float)
    if np.any(k <= 0) or np.any(mu <= 0):
        raise ValueError("permeability and viscosity must be positive")
    weight = mu / k
    Kloc = np.einsum("cq,cqia,cqja,cq->cij", weight, phi, phi, wq)
    nf = cell_faces.shape[1]
    rows = np.repeat(cell_faces, nf, axis=1).ravel()
    cols = np.tile(cell_faces, (1, nf)).ravel()
    K_vv = sp.coo_matrix((Kloc.ravel(), (rows, cols)), shape=(n_faces, n_faces)).tocsr()
    # -(q, div w) with q = 1 on each cell: minus the signed face areas
    Bloc = -np.einsum("cqi,cq->ci", div, wq)
    K_pv = sp.coo_matrix(
        (Bloc.ravel(), (np.repeat(cells, nf), cell_faces.ravel())), shape=(mesh.num_cells, n_faces)
    ).tocsr()
    f_v = np.zeros(n_faces)
    if fields.body_force is not None:
        b = np.asarray(_vector_field(fields.body_force).values(pts), dtype=float)
        b = np.broadcast_to(b, x.shape)
        np.add.at(f_v, cell_faces, fields.density * np.einsum("cqia,cqa,cq->ci", phi, b, wq))

    ni = mesh.num_interior_faces
    btags = np.asarray(mesh.boundary_tags)
    for tag, value in fields.pressure_bc.items():
        sel = np.flatnonzero(btags == tag)
        if len(sel) == 0:
            raise ValueError(f"pressure boundary tag {tag} does not exist")
        faces = ni + sel
        centres = mesh.nodes[face_nodes[faces]].mean(axis=1)
        p = np.asarray(value(centres), dtype=float) if callable(value) else np.full(len(faces), float(value))
        # w . n = 1 on the face (average normal velocity dof), integrated over its area
        f_v[faces] -= areas[faces] * p

    constrained = []
    values = []
    for tag, value in fields.velocity_bc.items():
        sel = np.flatnonzero(btags == tag)
        if len(sel) == 0:
            raise ValueError(f"velocity boundary tag {tag} does not exist")
        faces = ni + sel
        centres = mesh.nodes[face_nodes[faces]].mean(axis=1)
        vn = np.asarray(value(centres), dtype=float) if callable(value) else np.full(len(faces), float(value))
        constrained.append(faces)
        values.append(vn)
    K_pv_s = K_pv
    if constrained:
        dofs = np.concatenate(constrained)
        vals = np.concatenate(values)
        g = np.zeros(n_faces)
        g[dofs] = vals
        f_v = f_v - K_vv @ g
        f_p = -(K_pv @ g)
        keep = np.ones(n_faces)
        keep[dofs] = 0.0
        D = sp.diags(keep)
        K_vv = D @ K_vv @ D + sp.diags(1.0 - keep)
        K_pv_s = K_pv @ D
        f_v[dofs] = vals
    else:
        dofs = np.zeros(0, dtype=np.int64)
        f_p = np.zeros(mesh.num_cells)
    K_pv_m = SparseMatrix(K_pv_s)
    return DarcyBlockSystem(
        K_vv=SparseMatrix(K_vv),
        K_vp=K_pv_m.transpose(),
        K_pv=K_pv_m,
        f_v=f_v,
        f_p=f_p,
        mesh=mesh,
        cell_faces=cell_faces,
        cell_signs=signs,
        face_areas=areas,
        face_normals=face_normals,
        constrained_faces=dofs,
    )


class _SchurPreconditioner:
    """Full block factorization with ILU(0) on ``K_vv`` and an inner CG on ``S_p``."""

    def __init__(self, sys: DarcyBlockSystem, inner_rtol=1e-2):
        diag = sys.K_vv.diagonal()
        if np.any(diag == 0):
            raise LumpingError(f"zero diagonal in the velocity block at face {int(np.flatnonzero(diag == 0)[0])}")
        self.nv = sys.n_velocity
        self.Kvv = ilu0_factor(sys.K_vv)
        self.B = sys.K_pv.scipy
        self.Bt = sys.K_vp.scipy
        # -S_p is symmetric positive definite
        self.Sp = SparseMatrix(self.B @ sp.diags(1.0 / diag) @ self.Bt)
        self.Sp_pc = ilu0_factor(self.Sp)
        self.inner = KrylovOptions(rel_tol=inner_rtol, max_iters=500, preconditioner="ilu0")
        self.inner_iterations = 0

    def __call__(self, r):
        rv, rp = r[: self.nv], r[self.nv :]
        yv = self.Kvv(rv)
        rhs = rp - self.B @ yv
        zp, rep = cg_solve(self.Sp, -rhs, opts=self.inner, M=self.Sp_pc, check_symmetry=False)
        self.inner_iterations += rep.iterations
        xv = yv - self.Kvv(self.Bt @ zp)
        return np.concatenate([xv, zp])


def solve_darcy_schur(sys: DarcyBlockSystem, opts: KrylovOptions | None = None, x0=None, precondition=True):
    """Flexible GMRES on the full block system with the Schur preconditioner.

    Returns ``(v, p, report)``.  With ``precondition=False`` the same outer
    iteration runs unpreconditioned.
    """
    opts = opts or KrylovOptions(rel_tol=1e-10, max_iters=5000, restart=50, preconditioner="none")
    A = sys.block()
    M = _SchurPreconditioner(sys) if precondition else (lambda r: r)
    x, rep = gmres_solve(A, sys.rhs(), x0=x0, opts=opts, M=M, flexible=True)
    nv = sys.n_velocity
    return x[:nv], x[nv:], rep


def solve_darcy_direct(sys: DarcyBlockSystem):
    """Sparse direct solve of the block system (reference and small meshes)."""
    x = spla.spsolve(sys.block().scipy.tocsc(), sys.rhs())
    nv = sys.n_velocity
    return x[:nv], x[nv:]


def cell_divergence(v, sys: DarcyBlockSystem) -> np.ndarray:
    """Integral of ``div v`` over each cell from signed face fluxes."""
    v = np.asarray(v, dtype=float)
    return np.sum(sys.cell_signs * sys.face_areas[sys.cell_faces] * v[sys.cell_faces], axis=1)


def face_fluxes(v, sys: DarcyBlockSystem) -> np.ndarray:
    """Volumetric flux through each face along its global normal."""
    return sys.face_areas * np.asarray(v, dtype=float)


def cell_velocity(v, sys: DarcyBlockSystem, order=2) -> np.ndarray:
    """Cell-averaged velocity vectors ``(num_cells, d)``."""
    x, phi, _, wq = _basis(sys.mesh, sys.face_areas[sys.cell_faces], sys.cell_signs, order)
    vol = wq.sum(axis=1)
    integral = np.einsum("cqka,ck,cq->ca", phi, np.asarray(v, dtype=float)[sys.cell_faces], wq)
    return integral / vol[:, None]
