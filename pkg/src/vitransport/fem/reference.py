"""Reference-cell shape functions and quadrature rules.

Reference cells are the unit simplex and the unit box ``[0, 1]^d``.
"""

import numpy as np

from ..mesh import CELL_FACES

_BOX_CORNERS = {
    "quad4": np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float),
    "hex8": np.array(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
         [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
        dtype=float,
    ),
}
REFERENCE_VERTICES = {
    "tri3": np.array([[0, 0], [1, 0], [0, 1]], dtype=float),
    **_BOX_CORNERS,
}
DIM = {"tri3": 2, "quad4": 2, "hex8": 3}


def gauss_1d(n):
    """``n``-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def box_rule(dim, n):
    x, w = gauss_1d(n)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    weights = np.meshgrid(*([w] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return pts, np.prod(np.stack([g.ravel() for g in weights], axis=1), axis=1)


def triangle_rule(degree):
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3]]), np.array([0.5])
    if degree == 2:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return pts, np.full(3, 1 / 6)
    if degree <= 4:
        a, b = 0.445948490915965, 0.091576213509771
        wa, wb = 0.223381589678011 / 2, 0.109951743655322 / 2
        pts = np.array(
            [[a, a], [1 - 2 * a, a], [a, 1 - 2 * a], [b, b], [1 - 2 * b, b], [b, 1 - 2 * b]]
        )
        return pts, np.array([wa] * 3 + [wb] * 3)
    raise ValueError(f"no triangle rule of degree {degree}")


def cell_rule(kind, order):
    """Volume rule: ``order`` Gauss points per direction on boxes, degree on triangles."""
    if kind == "tri3":
        return triangle_rule(order)
    return box_rule(DIM[kind], order)


def face_rule(kind, order):
    """Rule on a reference face (a segment or the unit square)."""
    if kind in ("tri3", "quad4"):
        x, w = gauss_1d(order)
        return x[:, None], w
    return box_rule(2, order)


def shape(kind, xi):
    """Shape function values ``(Q, k)`` at reference points ``xi`` (Q, d)."""
    xi = np.atleast_2d(xi)
    if kind == "tri3":
        return np.column_stack([1 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]])
    corners = _BOX_CORNERS[kind]
    vals = np.where(corners[None, :, :] == 1, xi[:, None, :], 1 - xi[:, None, :])
    return vals.prod(axis=2)


def shape_grad(kind, xi):
    """Reference gradients ``(Q, k, d)``."""
    xi = np.atleast_2d(xi)
    q = len(xi)
    if kind == "tri3":
        g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        return np.broadcast_to(g, (q, 3, 2)).copy()
    corners = _BOX_CORNERS[kind]
    d = corners.shape[1]
    factors = np.where(corners[None, :, :] == 1, xi[:, None, :], 1 - xi[:, None, :])
    dfac = np.where(corners == 1, 1.0, -1.0)
    out = np.empty((q, len(corners), d))
    for a in range(d):
        others = np.delete(factors, a, axis=2).prod(axis=2)
        out[:, :, a] = dfac[None, :, a] * others
    return out


def shape_hess(kind, xi):
    """Reference second derivatives ``(Q, k, d, d)``; zero for triangles."""
    xi = np.atleast_2d(xi)
    q = len(xi)
    if kind == "tri3":
        return np.zeros((q, 3, 2, 2))
    corners = _BOX_CORNERS[kind]
    d = corners.shape[1]
    factors = np.where(corners[None, :, :] == 1, xi[:, None, :], 1 - xi[:, None, :])
    dfac = np.where(corners == 1, 1.0, -1.0)
    out = np.zeros((q, len(corners), d, d))
    for a in range(d):
        for b in range(d):
            if a == b:
                continue
            rest = np.delete(factors, [a, b], axis=2).prod(axis=2) if d > 2 else 1.0
            out[:, :, a, b] = dfac[None, :, a] * dfac[None, :, b] * rest
    return out


def face_points(kind, local_face, xi_face):
    """Map reference-face points into the reference cell for a local face."""
    verts = REFERENCE_VERTICES[kind][list(CELL_FACES[kind][local_face])]
    if kind in ("tri3", "quad4"):
        t = xi_face[:, 0:1]
        return (1 - t) * verts[0] + t * verts[1]
    s, t = xi_face[:, 0:1], xi_face[:, 1:2]
    return (1 - s) * (1 - t) * verts[0] + s * (1 - t) * verts[1] + s * t * verts[2] + (1 - s) * t * verts[3]
