"""Coefficient fields evaluated at quadrature points.

A coefficient maps a :class:`~vitransport.fem.geometry.PointSet` to values
with shape ``(C, Q, *value_shape)``.  Coefficients that feed the SUPG
residual also provide ``gradient`` with one extra trailing axis.
"""

import numpy as np

VELOCITY_FLOOR = 1e-12


class Coefficient:
    def values(self, ps):
        raise NotImplementedError

    def gradient(self, ps):
        raise NotImplementedError(f"{type(self).__name__} has no gradient")

    def __call__(self, x):
        """Pointwise evaluation at physical points ``x`` (..., d)."""
        raise NotImplementedError


class Constant(Coefficient):
    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def values(self, ps):
        return np.broadcast_to(self.value, ps.x.shape[:2] + self.value.shape)

    def gradient(self, ps):
        d = ps.x.shape[-1]
        return np.zeros(ps.x.shape[:2] + self.value.shape + (d,))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.value, x.shape[:-1] + self.value.shape)


class Expression(Coefficient):
    """Exact pointwise evaluation of ``func(x)``.

    ``grad`` may supply the derivative; otherwise central differences are used.
    """

    def __init__(self, func, grad=None, step=1e-6):
        self.func = func
        self.grad = grad
        self.step = step

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def values(self, ps):
        return self(ps.x)

    def gradient(self, ps):
        if self.grad is not None:
            return np.asarray(self.grad(ps.x), dtype=float)
        d = ps.x.shape[-1]
        parts = []
        for k in range(d):
            e = np.zeros(d)
            e[k] = self.step
            parts.append((self(ps.x + e) - self(ps.x - e)) / (2 * self.step))
        return np.stack(parts, axis=-1)


class Interpolant(Coefficient):
    """Nodal (vertex) interpolant of ``func`` in the cell's own shape functions.

    Matches interpolating an analytic field into a first-order Lagrange space
    before integrating with it.
    """

    def __init__(self, func):
        self.func = func

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def nodal(self, ps):
        return self(ps.verts)

    def values(self, ps):
        return np.einsum("cqk,ck...->cq...", ps.N, self.nodal(ps))

    def gradient(self, ps):
        return np.einsum("cqka,ck...->cq...a", ps.grad, self.nodal(ps))


class NodalField(Coefficient):
    """Coefficient given by per-cell vertex values ``(num_cells, k, ...)``.

    This is how discrete solutions (e.g. a DG concentration) are fed back into
    assembly.
    """

    def __init__(self, cell_values):
        self.cell_values = np.asarray(cell_values, dtype=float)

    def values(self, ps):
        return np.einsum("cqk,ck...->cq...", ps.N, self.cell_values[ps.cells])

    def gradient(self, ps):
        return np.einsum("cqka,ck...->cq...a", ps.grad, self.cell_values[ps.cells])


class CellwiseConstant(Coefficient):
    """One value per cell, ``(num_cells, ...)``."""

    def __init__(self, cell_values):
        self.cell_values = np.asarray(cell_values, dtype=float)

    def values(self, ps):
        v = self.cell_values[ps.cells]
        return np.broadcast_to(v[:, None], (v.shape[0], ps.x.shape[1]) + v.shape[1:])

    def gradient(self, ps):
        d = ps.x.shape[-1]
        return np.zeros(self.values(ps).shape + (d,))


def dispersion_tensor(v, alpha_l, alpha_t, alpha_d):
    """Flow-induced dispersion ``(aT|v| + aD) I + (aL - aT) v v^T / |v|``.

    ``v`` may carry leading batch axes.  Where ``|v|`` is below
    :data:`VELOCITY_FLOOR` the tensor falls back to ``aD * I``.
    """
    if min(alpha_l, alpha_t, alpha_d) < 0:
        raise ValueError("dispersivities must be non-negative")
    v = np.asarray(v, dtype=float)
    d = v.shape[-1]
    speed = np.linalg.norm(v, axis=-1)
    moving = speed >= VELOCITY_FLOOR
    safe = np.where(moving, speed, 1.0)
    eye = np.eye(d)
    outer = v[..., :, None] * v[..., None, :] / safe[..., None, None]
    D = (alpha_d + alpha_t * speed)[..., None, None] * eye + (alpha_l - alpha_t) * outer
    return np.where(moving[..., None, None], D, alpha_d * eye)


class Dispersion(Coefficient):
    """Dispersion tensor built from a velocity coefficient."""

    def __init__(self, velocity, alpha_l, alpha_t, alpha_d):
        if min(alpha_l, alpha_t, alpha_d) < 0:
            raise ValueError("dispersivities must be non-negative")
        self.velocity = velocity
        self.alpha_l = alpha_l
        self.alpha_t = alpha_t
        self.alpha_d = alpha_d

    def __call__(self, x):
        return dispersion_tensor(self.velocity(x), self.alpha_l, self.alpha_t, self.alpha_d)

    def values(self, ps):
        return dispersion_tensor(
            self.velocity.values(ps), self.alpha_l, self.alpha_t, self.alpha_d
        )

    def gradient(self, ps):
        v = self.velocity.values(ps)
        G = self.velocity.gradient(ps)  # [..., i, k] = dv_i/dx_k
        d = v.shape[-1]
        s = np.linalg.norm(v, axis=-1)
        moving = s >= VELOCITY_FLOOR
        s = np.where(moving, s, 1.0)
        ds = np.einsum("...i,...ik->...k", v, G) / s[..., None]
        eye = np.eye(d)
        term_iso = self.alpha_t * eye[:, :, None] * ds[..., None, None, :]
        dvv = np.einsum("...ik,...j->...ijk", G, v) + np.einsum("...i,...jk->...ijk", v, G)
        vv = v[..., :, None] * v[..., None, :]
        term_aniso = (self.alpha_l - self.alpha_t) * (
            dvv / s[..., None, None, None]
            - vv[..., None] * ds[..., None, None, :] / (s**2)[..., None, None, None]
        )
        out = term_iso + term_aniso
        return np.where(moving[..., None, None, None], out, 0.0)


# ---------------------------------------------------------------------------
# benchmark fields
# ---------------------------------------------------------------------------


def abc_velocity(x):
    """Arnold-Beltrami-Childress type flow on the unit cube.

    The vertical component is ``sin(4 pi y) + 0.65 cos(6 pi x)``.
    """
    x = np.asarray(x, dtype=float)
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    tp = 2 * np.pi
    return np.stack(
        [
            0.3 * np.sin(tp * Z) + np.cos(3 * np.pi * Y),
            0.65 * np.sin(tp * X) + 0.3 * np.cos(5 * np.pi * Z),
            np.sin(4 * np.pi * Y) + 0.65 * np.cos(6 * np.pi * X),
        ],
        axis=-1,
    )


def vortex_velocity_2d(x):
    x = np.asarray(x, dtype=float)
    X, Y = x[..., 0], x[..., 1]
    return np.stack(
        [np.cos(2 * np.pi * Y**2), np.sin(2 * np.pi * X) + np.cos(2 * np.pi * X**2)],
        axis=-1,
    )


def lepotier_diffusivity(x, eps=1e-4):
    """Heterogeneous anisotropic tensor with a strongly varying principal axis."""
    x = np.asarray(x, dtype=float)
    X, Y = x[..., 0], x[..., 1]
    off = -(1 - eps) * X * Y
    return np.stack(
        [np.stack([Y**2 + eps * X**2, off], -1), np.stack([off, X**2 + eps * Y**2], -1)],
        axis=-2,
    )


POINT_SOURCE_BOXES = (
    ((0.4, 0.2, 0.1), (0.5, 0.3, 0.2)),
    ((0.8, 0.4, 0.2), (0.9, 0.5, 0.3)),
    ((0.5, 0.7, 0.3), (0.6, 0.8, 0.4)),
    ((0.3, 0.5, 0.2), (0.4, 0.6, 0.3)),
    ((0.5, 0.2, 0.6), (0.6, 0.3, 0.7)),
    ((0.6, 0.5, 0.7), (0.7, 0.6, 0.8)),
    ((0.4, 0.7, 0.8), (0.5, 0.8, 0.9)),
    ((0.1, 0.4, 0.7), (0.2, 0.5, 0.8)),
)

BOX_SOURCE_2D = ((3 / 8, 3 / 5), (5 / 8, 5 / 8))


def _in_box(x, lo, hi):
    inside = np.ones(x.shape[:-1], dtype=bool)
    for k in range(len(lo)):
        inside &= (x[..., k] >= lo[k]) & (x[..., k] <= hi[k])
    return inside


def point_source_forcing_3d(x, boxes=POINT_SOURCE_BOXES):
    """Sum of unit indicators of closed boxes (the eight 3D contaminant sites)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    for lo, hi in boxes:
        out += _in_box(x, lo, hi)
    return out


def box_source_2d(x, box=BOX_SOURCE_2D):
    x = np.asarray(x, dtype=float)
    return _in_box(x, box[0], box[1]).astype(float)
