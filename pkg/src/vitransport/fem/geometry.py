"""Quadrature-point geometry for cells and faces."""

import dataclasses

import numpy as np

from . import reference as ref


@dataclasses.dataclass
class PointSet:
    """Basis data at a batch of points, each living inside one cell.

    Arrays are indexed ``[cell, point, ...]``: ``x`` (C, Q, d), ``N`` (C, Q, k),
    ``grad`` (C, Q, k, d), ``weights`` (C, Q) already scaled by the measure,
    and ``verts`` (C, k, d) for the owning cells.
    """

    cells: np.ndarray
    x: np.ndarray
    N: np.ndarray
    grad: np.ndarray
    weights: np.ndarray
    verts: np.ndarray
    hess: np.ndarray | None = None


def _jacobian(verts, dN):
    # J[c, q, a, b] = d x_a / d xi_b
    if dN.ndim == 3:
        return np.einsum("cka,qkb->cqab", verts, dN)
    return np.einsum("cka,cqkb->cqab", verts, dN)


def cell_points(mesh, cells, order, hessian=False) -> PointSet:
    """Volume quadrature on ``cells`` with the given rule order."""
    kind = mesh.cell_kind
    xi, w = ref.cell_rule(kind, order)
    verts = mesh.nodes[mesh.cells[cells]]
    N = ref.shape(kind, xi)
    dN = ref.shape_grad(kind, xi)
    J = _jacobian(verts, dN)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        bad = cells[np.flatnonzero((det <= 0).any(axis=1))[0]]
        raise ValueError(f"cell {bad} is inverted or degenerate")
    Jinv = np.linalg.inv(J)
    grad = np.einsum("qkb,cqba->cqka", dN, Jinv)
    x = np.einsum("qk,cka->cqa", N, verts)
    hess = None
    if hessian:
        # constant-Jacobian pull-back; exact on parallelograms and boxes
        H = ref.shape_hess(kind, xi)
        hess = np.einsum("cqia,qkij,cqjb->cqkab", Jinv, H, Jinv)
    C = len(cells)
    return PointSet(
        cells=np.asarray(cells),
        x=x,
        N=np.broadcast_to(N, (C,) + N.shape),
        grad=grad,
        weights=det * w[None, :],
        verts=verts,
        hess=hess,
    )


def inverse_map(mesh, cells, x, iterations=8):
    """Reference coordinates of physical points ``x`` (C, Q, d) in ``cells``."""
    kind = mesh.cell_kind
    verts = mesh.nodes[mesh.cells[cells]]
    d = mesh.dim
    xi = np.full(x.shape, 1.0 / 3.0 if kind == "tri3" else 0.5)
    for _ in range(iterations):
        flat = xi.reshape(-1, d)
        N = ref.shape(kind, flat).reshape(x.shape[:2] + (-1,))
        dN = ref.shape_grad(kind, flat).reshape(x.shape[:2] + (-1, d))
        r = np.einsum("cqk,cka->cqa", N, verts) - x
        J = _jacobian(verts, dN)
        step = np.linalg.solve(J, r[..., None])[..., 0]
        xi = xi - step
        if np.max(np.abs(step)) < 1e-14:
            break
    return xi


def points_in_cells(mesh, cells, x, weights) -> PointSet:
    """Basis data at arbitrary physical points located in ``cells``."""
    kind = mesh.cell_kind
    d = mesh.dim
    xi = inverse_map(mesh, cells, x)
    flat = xi.reshape(-1, d)
    shp = x.shape[:2]
    N = ref.shape(kind, flat).reshape(shp + (-1,))
    dN = ref.shape_grad(kind, flat).reshape(shp + (-1, d))
    verts = mesh.nodes[mesh.cells[cells]]
    J = _jacobian(verts, dN)
    grad = np.einsum("cqkb,cqba->cqka", dN, np.linalg.inv(J))
    return PointSet(cells=np.asarray(cells), x=x, N=N, grad=grad, weights=weights, verts=verts)


def face_points(mesh, face_nodes, order):
    """Physical quadrature points and area-weighted weights on faces."""
    xi, w = ref.face_rule(mesh.cell_kind, order)
    X = mesh.nodes[face_nodes]
    if X.shape[1] == 2:
        t = xi[:, 0]
        x = (1 - t)[None, :, None] * X[:, None, 0] + t[None, :, None] * X[:, None, 1]
        length = np.linalg.norm(X[:, 1] - X[:, 0], axis=1)
        return x, length[:, None] * w[None, :]
    if X.shape[1] == 3:
        # flat triangle face (not produced by the supported cell kinds)
        raise NotImplementedError("triangular faces are not supported")
    s, t = xi[:, 0], xi[:, 1]
    phi = np.stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t], axis=1)
    dphi_s = np.stack([-(1 - t), 1 - t, t, -t], axis=1)
    dphi_t = np.stack([-(1 - s), -s, s, 1 - s], axis=1)
    x = np.einsum("qk,fka->fqa", phi, X)
    ds = np.einsum("qk,fka->fqa", dphi_s, X)
    dt = np.einsum("qk,fka->fqa", dphi_t, X)
    area = np.linalg.norm(np.cross(ds, dt), axis=2)
    return x, area * w[None, :]


def chunks(n, size=4096):
    for start in range(0, n, size):
        yield np.arange(start, min(n, start + size))
