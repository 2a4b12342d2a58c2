"""First-order function spaces, Dirichlet conditions and field statistics."""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ..linalg import SparseMatrix
from ..mesh import Mesh


class FunctionSpace:
    """Continuous (``CG1``) or discontinuous (``DG1``) first-order Lagrange space.

    CG1 dofs are the mesh nodes.  DG1 dofs are numbered cell by cell, so the
    local node ``k`` of cell ``c`` is dof ``c * nodes_per_cell + k``.
    """

    def __init__(self, mesh: Mesh, kind: str):
        kind = kind.upper()
        if kind not in ("CG1", "DG1"):
            raise ValueError(f"unknown space kind {kind!r}")
        self.mesh = mesh
        self.kind = kind
        k = mesh.nodes_per_cell
        if kind == "CG1":
            self.cell_dofs = np.asarray(mesh.cells)
            self.dof_nodes = np.arange(mesh.num_nodes)
        else:
            self.cell_dofs = np.arange(mesh.num_cells * k).reshape(mesh.num_cells, k)
            self.dof_nodes = np.asarray(mesh.cells).ravel()
        self.dof_count = len(self.dof_nodes)

    @property
    def is_dg(self) -> bool:
        return self.kind == "DG1"

    @property
    def dof_coords(self) -> np.ndarray:
        return self.mesh.nodes[self.dof_nodes]

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of a pointwise function (scalar or vector valued)."""
        return np.asarray(func(self.dof_coords), dtype=float)

    def cell_values(self, u) -> np.ndarray:
        """Per-cell vertex values ``(num_cells, k, ...)`` of a dof vector."""
        return np.asarray(u)[self.cell_dofs]

    def nodal_average(self, u) -> np.ndarray:
        """Average dof values onto mesh nodes (identity for CG1)."""
        u = np.asarray(u, dtype=float)
        if not self.is_dg:
            return u
        out = np.zeros((self.mesh.num_nodes,) + u.shape[1:])
        count = np.zeros(self.mesh.num_nodes)
        np.add.at(out, self.dof_nodes, u)
        np.add.at(count, self.dof_nodes, 1.0)
        return out / count.reshape((-1,) + (1,) * (u.ndim - 1))

    def __repr__(self):
        return f"FunctionSpace({self.kind}, dofs={self.dof_count})"


@dataclasses.dataclass(frozen=True)
class DirichletBC:
    """Strongly imposed value on the boundary faces carrying ``tags``.

    ``value`` is a number or a function of points ``(n, d) -> (n,)``.  On a
    DG1 space the constrained dofs are those of the cell owning a tagged face
    that sit at the face's nodes; neighbours touching the boundary only at
    an edge or a corner stay free.
    """

    tags: tuple
    value: object = 0.0

    def __post_init__(self):
        tags = (self.tags,) if np.isscalar(self.tags) else tuple(self.tags)
        object.__setattr__(self, "tags", tuple(int(t) for t in tags))

    def dofs(self, space: FunctionSpace) -> np.ndarray:
        missing = set(self.tags) - space.mesh.tags()
        if missing:
            raise ValueError(f"boundary tags {sorted(missing)} do not exist in the mesh")
        mesh = space.mesh
        if not space.is_dg:
            return mesh.boundary_nodes(self.tags)
        sel = np.isin(mesh.boundary_tags, self.tags)
        owners = np.asarray(mesh.boundary_cells)[sel]
        face_nodes = np.asarray(mesh.boundary_faces)[sel]
        cell_nodes = np.asarray(mesh.cells)[owners]
        on_face = (cell_nodes[:, :, None] == face_nodes[:, None, :]).any(axis=2)
        return np.unique(space.cell_dofs[owners][on_face])

    def values(self, space: FunctionSpace, dofs) -> np.ndarray:
        if callable(self.value):
            return np.asarray(self.value(space.dof_coords[dofs]), dtype=float)
        return np.full(len(dofs), float(self.value))


def collect_dirichlet(space, bcs):
    """Constrained dofs and values; later conditions override earlier ones."""
    g = np.full(space.dof_count, np.nan)
    for bc in bcs or ():
        dofs = bc.dofs(space)
        g[dofs] = bc.values(space, dofs)
    dofs = np.flatnonzero(~np.isnan(g))
    return dofs, g[dofs]


def apply_dirichlet(K: SparseMatrix, f, dofs, values):
    """Symmetric elimination with lifting.

    ``f - K g`` moves the known column contributions to the right-hand side;
    constrained rows and columns are then zeroed with a unit diagonal, and the
    right-hand side holds the prescribed values there.
    """
    n = K.nrows
    g = np.zeros(n)
    g[dofs] = values
    b = np.asarray(f, dtype=float) - K.scipy @ g
    keep = np.ones(n)
    keep[dofs] = 0.0
    mask = sp.diags(keep)
    A = mask @ K.scipy @ mask + sp.diags(1.0 - keep)
    b[dofs] = values
    return SparseMatrix(A), b


@dataclasses.dataclass
class AssembledSystem:
    """Linear system ``K c = f`` after Dirichlet elimination.

    ``K_free`` and ``f_free`` keep the operator and load before the boundary
    rows were replaced, for callers that need the raw bilinear form.
    """

    K: SparseMatrix
    f: np.ndarray
    space: FunctionSpace
    constrained_dofs: np.ndarray
    constrained_values: np.ndarray
    K_free: SparseMatrix | None = None
    f_free: np.ndarray | None = None


@dataclasses.dataclass(frozen=True)
class FieldStats:
    min_value: float
    max_value: float
    violating_dofs: int
    total_dofs: int

    @property
    def violating_fraction(self) -> float:
        return self.violating_dofs / self.total_dofs if self.total_dofs else 0.0


def field_stats(values, cmin=0.0, cmax=np.inf) -> FieldStats:
    """Extremes and the number of entries strictly outside ``[cmin, cmax]``."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("field contains non-finite values")
    bad = np.count_nonzero((values < cmin) | (values > cmax))
    return FieldStats(float(values.min()), float(values.max()), int(bad), int(values.size))


STATS_COLUMNS = ("h", "formulation", "min", "max", "violating", "total")


def write_stats_csv(path, rows):
    """Write ``(h, formulation, FieldStats)`` triples as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_COLUMNS)
        for h, formulation, st in rows:
            writer.writerow([h, formulation, repr(st.min_value), repr(st.max_value), st.violating_dofs, st.total_dofs])
