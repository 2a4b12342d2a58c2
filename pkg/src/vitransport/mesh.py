"""Mesh containers, structured generators, Gmsh v2.2 reader and VTK output.

Cells use VTK node ordering:

* ``tri3``  -- counter-clockwise triangle
* ``quad4`` -- counter-clockwise quadrilateral
* ``hex8``  -- bottom face counter-clockwise, then the top face
"""

from __future__ import annotations

import dataclasses
import enum
import gzip
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "Mesh",
    "PhysicalTag",
    "TagRole",
    "MeshError",
    "TopologyError",
    "GmshParseError",
    "CELL_FACES",
    "build_structured_quad_mesh",
    "extrude_to_hex",
    "read_gmsh",
    "load_square_with_hole",
    "build_interior_faces",
    "write_vtk",
    "read_vtk_counts",
]

# Tags for structured meshes (match the usual unit-square convention).
LEFT, RIGHT, BOTTOM, TOP = 1, 2, 3, 4
# Extruded meshes keep 1..4 on the side walls.
BASE, LID = 5, 6

CELL_FACES = {
    "tri3": ((0, 1), (1, 2), (2, 0)),
    "quad4": ((0, 1), (1, 2), (2, 3), (3, 0)),
    "hex8": (
        (0, 3, 2, 1),
        (4, 5, 6, 7),
        (0, 1, 5, 4),
        (1, 2, 6, 5),
        (2, 3, 7, 6),
        (3, 0, 4, 7),
    ),
}

NODES_PER_CELL = {"tri3": 3, "quad4": 4, "hex8": 8}
VTK_CELL_TYPE = {"tri3": 5, "quad4": 9, "hex8": 12}


class MeshError(ValueError):
    pass


class TopologyError(MeshError):
    pass


class GmshParseError(MeshError):
    def __init__(self, message, line=None, section=None):
        self.line = line
        self.section = section
        where = []
        if section:
            where.append(f"section {section}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class TagRole(enum.Enum):
    OUTER = "outer boundary side"
    HOLE = "hole boundary side"
    VOLUME = "volume"
    SIDE = "boundary side"


@dataclasses.dataclass(frozen=True)
class PhysicalTag:
    id: int
    role: TagRole
    name: str = ""


@dataclasses.dataclass(frozen=True, eq=False)
class Mesh:
    """Unstructured mesh of a single cell kind.

    Interior faces store the left (lower-index) cell, the right cell, the
    face nodes and the unit normal pointing out of the left cell.  Boundary
    faces store their owning cell and outward unit normal as well.
    """

    dim: int
    nodes: np.ndarray
    cells: np.ndarray
    cell_kind: str
    boundary_faces: np.ndarray
    boundary_tags: np.ndarray
    boundary_cells: np.ndarray
    boundary_normals: np.ndarray
    interior_left: np.ndarray
    interior_right: np.ndarray
    interior_nodes: np.ndarray
    interior_normals: np.ndarray
    physical_tags: tuple = ()

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                value.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_interior_faces(self) -> int:
        return len(self.interior_left)

    @property
    def nodes_per_cell(self) -> int:
        return NODES_PER_CELL[self.cell_kind]

    def tags(self) -> set[int]:
        return set(int(t) for t in np.unique(self.boundary_tags))

    def boundary_nodes(self, tags=None) -> np.ndarray:
        """Sorted node indices on boundary faces carrying any of ``tags``."""
        if tags is None:
            faces = self.boundary_faces
        else:
            faces = self.boundary_faces[np.isin(self.boundary_tags, list(tags))]
        return np.unique(faces)

    def cell_centroids(self) -> np.ndarray:
        return self.nodes[self.cells].mean(axis=1)

    def cell_diameters(self) -> np.ndarray:
        """Largest vertex-to-vertex distance per cell."""
        x = self.nodes[self.cells]
        diff = x[:, :, None, :] - x[:, None, :, :]
        return np.sqrt((diff**2).sum(-1)).max(axis=(1, 2))

    def check(self):
        """Validate the structural invariants; raise :class:`MeshError` if violated."""
        if self.cells.size and (self.cells.min() < 0 or self.cells.max() >= self.num_nodes):
            raise MeshError("cell references a non-existent node")
        counts = np.zeros(self.num_cells, dtype=int)
        np.add.at(counts, self.boundary_cells, 1)
        np.add.at(counts, self.interior_left, 1)
        np.add.at(counts, self.interior_right, 1)
        if np.any(counts != len(CELL_FACES[self.cell_kind])):
            raise TopologyError("face incidence does not match the cell kind")
        for normals in (self.interior_normals, self.boundary_normals):
            if len(normals) and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > 1e-12:
                raise MeshError("face normal is not unit length")
        ids = [t.id for t in self.physical_tags]
        if len(ids) != len(set(ids)):
            raise MeshError("physical tag ids are not unique")


def _face_normals(nodes, face_nodes, owner_centroids):
    """Unit normals of faces, oriented away from the given centroids."""
    x = nodes[face_nodes]
    dim = nodes.shape[1]
    if dim == 2:
        t = x[:, 1] - x[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    else:
        if face_nodes.shape[1] == 4:
            n = np.cross(x[:, 2] - x[:, 0], x[:, 3] - x[:, 1])
        else:
            n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    n = n / np.linalg.norm(n, axis=1)[:, None]
    centre = x.mean(axis=1)
    flip = np.einsum("ij,ij->i", n, centre - owner_centroids) < 0
    n[flip] *= -1
    return n


def _collect_faces(cells, kind):
    local = CELL_FACES[kind]
    nf = len(local)
    face_nodes = np.concatenate([cells[:, list(f)] for f in local], axis=0)
    owner = np.tile(np.arange(len(cells)), nf)
    # reorder so entries are grouped by cell, then local face index
    order = np.lexsort((np.repeat(np.arange(nf), len(cells)), owner))
    return face_nodes[order], owner[order]


def _faces(nodes, cells, kind):
    """Match faces between cells.

    Returns ``(interior, boundary)`` where ``interior`` is
    ``(left, right, face_nodes)`` and ``boundary`` is ``(owner, face_nodes)``.
    """
    face_nodes, owner = _collect_faces(cells, kind)
    keys = np.sort(face_nodes, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        bad = int(np.flatnonzero(counts > 2)[0])
        cells_bad = owner[inverse == bad]
        raise TopologyError(f"non-conforming mesh: face shared by cells {cells_bad.tolist()}")
    order = np.argsort(inverse, kind="stable")
    sorted_inv = inverse[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_inv)) + 1]
    sizes = counts[sorted_inv[starts]]
    pair_starts = starts[sizes == 2]
    first = order[pair_starts]
    second = order[pair_starts + 1]
    # (+) side is the cell with the smaller index
    swap = owner[first] > owner[second]
    first, second = np.where(swap, second, first), np.where(swap, first, second)
    interior = (owner[first], owner[second], face_nodes[first])
    lone = order[starts[sizes == 1]]
    lone = np.sort(lone)
    boundary = (owner[lone], face_nodes[lone])
    return interior, boundary


def _assemble_mesh(nodes, cells, kind, tag_fn=None, tagged_faces=None, physical_tags=()):
    nodes = np.asarray(nodes, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    dim = nodes.shape[1]
    (left, right, inodes), (bowner, bnodes) = _faces(nodes, cells, kind)
    centroids = nodes[cells].mean(axis=1)
    inormals = _face_normals(nodes, inodes, centroids[left]) if len(left) else np.zeros((0, dim))
    bnormals = _face_normals(nodes, bnodes, centroids[bowner]) if len(bowner) else np.zeros((0, dim))
    if tag_fn is not None:
        btags = tag_fn(nodes[bnodes].mean(axis=1), bnormals)
    elif tagged_faces is not None:
        btags = np.zeros(len(bnodes), dtype=np.int64)
        lookup = {tuple(sorted(f)): t for f, t in tagged_faces}
        for i, f in enumerate(bnodes):
            btags[i] = lookup.get(tuple(sorted(f.tolist())), 0)
    else:
        btags = np.zeros(len(bnodes), dtype=np.int64)
    mesh = Mesh(
        dim=dim,
        nodes=nodes,
        cells=cells,
        cell_kind=kind,
        boundary_faces=bnodes,
        boundary_tags=np.asarray(btags, dtype=np.int64),
        boundary_cells=bowner,
        boundary_normals=bnormals,
        interior_left=left,
        interior_right=right,
        interior_nodes=inodes,
        interior_normals=inormals,
        physical_tags=tuple(physical_tags),
    )
    return mesh


def build_structured_quad_mesh(nx: int, ny: int, extent=((0.0, 1.0), (0.0, 1.0))) -> Mesh:
    """Uniform ``nx`` x ``ny`` quadrilateral mesh of a rectangle.

    Nodes are numbered lexicographically with x fastest.  Boundary faces are
    tagged 1 (left), 2 (right), 3 (bottom) and 4 (top).
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive integers, got ({nx}, {ny})")
    (x0, x1), (y0, y1) = extent
    if not (x1 > x0 and y1 > y0):
        raise MeshError("extent must have positive side lengths")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    cells = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])

    def tag(centres, normals):
        tags = np.zeros(len(centres), dtype=np.int64)
        tags[normals[:, 0] < -0.5] = LEFT
        tags[normals[:, 0] > 0.5] = RIGHT
        tags[normals[:, 1] < -0.5] = BOTTOM
        tags[normals[:, 1] > 0.5] = TOP
        return tags

    names = ("left", "right", "bottom", "top")
    ptags = [PhysicalTag(k + 1, TagRole.SIDE, names[k]) for k in range(4)]
    return _assemble_mesh(nodes, cells, "quad4", tag_fn=tag, physical_tags=ptags)


def extrude_to_hex(base: Mesh, nz: int, height: float = 1.0) -> Mesh:
    """Extrude a quadrilateral mesh into ``nz`` uniform hexahedral layers.

    Layer ``k`` sits at ``z = k * (height / nz)``.  Side faces keep the tag of
    the base edge they were swept from; the bottom face is tagged 5 and the
    top face 6.
    """
    if base.cell_kind != "quad4" or base.dim != 2:
        raise MeshError(f"extrusion needs a 2D quad4 mesh, got {base.cell_kind}")
    if int(nz) != nz or nz < 1:
        raise MeshError(f"layer count must be a positive integer, got {nz}")
    if not height > 0:
        raise MeshError("height must be positive")
    nz = int(nz)
    layer = height / nz
    nb = base.num_nodes
    z = layer * np.arange(nz + 1)
    nodes = np.concatenate(
        [np.column_stack([base.nodes, np.full(nb, zk)]) for zk in z], axis=0
    )
    cells = np.concatenate(
        [np.column_stack([base.cells + k * nb, base.cells + (k + 1) * nb]) for k in range(nz)],
        axis=0,
    )
    # side tags come from the base boundary edge with the same (x, y) footprint
    edge_tag = {}
    for f, t in zip(base.boundary_faces, base.boundary_tags):
        edge_tag[tuple(sorted(f.tolist()))] = int(t)

    def tag(centres, normals):
        tags = np.zeros(len(centres), dtype=np.int64)
        tags[normals[:, 2] < -0.5] = BASE
        tags[normals[:, 2] > 0.5] = LID
        return tags

    mesh = _assemble_mesh(nodes, cells, "hex8", tag_fn=tag)
    tags = np.array(mesh.boundary_tags)
    side = np.flatnonzero(tags == 0)
    for i in side:
        base_ids = np.unique(mesh.boundary_faces[i] % nb)
        tags[i] = edge_tag.get(tuple(sorted(base_ids.tolist())), 0)
    ptags = list(base.physical_tags) + [
        PhysicalTag(BASE, TagRole.SIDE, "bottom"),
        PhysicalTag(LID, TagRole.SIDE, "top"),
    ]
    return dataclasses.replace(mesh, boundary_tags=tags, physical_tags=tuple(ptags))


def build_interior_faces(mesh: Mesh) -> Mesh:
    """Recompute face connectivity from the cells alone.

    Meshes built by this module already carry their faces; this is the
    entry point for meshes assembled by hand (and the check that the cell
    list is conforming).
    """
    nodes = np.asarray(mesh.nodes)
    cells = np.asarray(mesh.cells)
    (left, right, inodes), _ = _faces(nodes, cells, mesh.cell_kind)
    centroids = nodes[cells].mean(axis=1)
    normals = (
        _face_normals(nodes, inodes, centroids[left])
        if len(left)
        else np.zeros((0, mesh.dim))
    )
    return dataclasses.replace(
        mesh,
        interior_left=left,
        interior_right=right,
        interior_nodes=inodes,
        interior_normals=normals,
    )


def mesh_from_cells(nodes, cells, kind) -> Mesh:
    """Build a mesh (untagged boundary) from raw arrays."""
    if kind not in NODES_PER_CELL:
        raise MeshError(f"unknown cell kind {kind!r}")
    return _assemble_mesh(nodes, cells, kind)


# ---------------------------------------------------------------------------
# Gmsh ASCII v2.2
# ---------------------------------------------------------------------------

_GMSH_NODES_PER_TYPE = {1: 2, 2: 3, 15: 1}


def read_gmsh(path) -> Mesh:
    """Read a Gmsh ASCII v2.2 file holding 3-node triangles.

    Line elements (type 1) become tagged boundary faces using their physical
    tag; point elements (type 15) are ignored.  Any other element type, an
    unknown section or a truncated section raises :class:`GmshParseError`.
    Files ending in ``.gz`` are decompressed on the fly.
    """
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rt") as fh:
            lines = fh.read().splitlines()
    else:
        lines = path.read_text().splitlines()
    pos = 0
    nlines = len(lines)

    def next_line(section):
        nonlocal pos
        while pos < nlines:
            text = lines[pos].strip()
            pos += 1
            if text:
                return text
        raise GmshParseError("unexpected end of file", line=nlines, section=section)

    version = None
    names = {}
    node_ids = None
    coords = None
    tris, tri_tags = [], []
    edges, edge_tags = [], []

    while True:
        while pos < nlines and not lines[pos].strip():
            pos += 1
        if pos >= nlines:
            break
        header = lines[pos].strip()
        lineno = pos + 1
        pos += 1
        if not header.startswith("$") or header.startswith("$End"):
            raise GmshParseError(f"expected a section header, got {header!r}", line=lineno)
        section = header[1:]
        if section == "MeshFormat":
            parts = next_line(section).split()
            if parts[0] not in ("2.2", "2.2.0"):
                raise GmshParseError(f"unsupported version {parts[0]}", line=pos, section=section)
            if len(parts) > 1 and parts[1] != "0":
                raise GmshParseError("binary files are not supported", line=pos, section=section)
            version = parts[0]
        elif section == "PhysicalNames":
            count = int(next_line(section))
            for _ in range(count):
                parts = next_line(section).split(maxsplit=2)
                names[int(parts[1])] = (int(parts[0]), parts[2].strip('"') if len(parts) > 2 else "")
        elif section == "Nodes":
            try:
                count = int(next_line(section))
                node_ids = np.empty(count, dtype=np.int64)
                coords = np.empty((count, 3))
                for k in range(count):
                    parts = next_line(section).split()
                    node_ids[k] = int(parts[0])
                    coords[k] = [float(v) for v in parts[1:4]]
            except (ValueError, IndexError) as exc:
                raise GmshParseError(f"malformed node record: {exc}", line=pos, section=section) from None
        elif section == "Elements":
            count = int(next_line(section))
            for _ in range(count):
                text = next_line(section)
                if text.startswith("$"):
                    raise GmshParseError("truncated element list", line=pos, section=section)
                parts = [int(v) for v in text.split()]
                etype, ntags = parts[1], parts[2]
                tags = parts[3 : 3 + ntags]
                conn = parts[3 + ntags :]
                if etype not in _GMSH_NODES_PER_TYPE:
                    raise GmshParseError(f"unsupported element type {etype}", line=pos, section=section)
                if len(conn) != _GMSH_NODES_PER_TYPE[etype]:
                    raise GmshParseError("wrong node count for element", line=pos, section=section)
                physical = tags[0] if tags else 0
                if etype == 2:
                    tris.append(conn)
                    tri_tags.append(physical)
                elif etype == 1:
                    edges.append(conn)
                    edge_tags.append(physical)
        else:
            raise GmshParseError(f"unknown section ${section}", line=lineno, section=section)
        end = next_line(section)
        if end != f"$End{section}":
            raise GmshParseError(f"missing $End{section}", line=pos, section=section)

    if version is None:
        raise GmshParseError("missing $MeshFormat section")
    if node_ids is None:
        raise GmshParseError("missing $Nodes section")
    if not tris:
        raise GmshParseError("no triangles found", section="Elements")

    index = np.full(node_ids.max() + 1, -1, dtype=np.int64)
    index[node_ids] = np.arange(len(node_ids))
    cells = index[np.asarray(tris, dtype=np.int64)]
    nodes = coords[:, :2]
    # counter-clockwise orientation
    x = nodes[cells]
    area = (x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1]) - (
        x[:, 2, 0] - x[:, 0, 0]
    ) * (x[:, 1, 1] - x[:, 0, 1])
    cells[area < 0] = cells[area < 0][:, [0, 2, 1]]
    tagged = [(index[np.asarray(e)], t) for e, t in zip(edges, edge_tags)]

    ptags = []
    for tid in sorted(set(edge_tags)):
        name = names.get(tid, (1, ""))[1]
        ptags.append(PhysicalTag(tid, TagRole.SIDE, name))
    for tid in sorted(set(tri_tags)):
        if tid:
            ptags.append(PhysicalTag(tid, TagRole.VOLUME, names.get(tid, (2, ""))[1]))
    return _assemble_mesh(nodes, cells, "tri3", tagged_faces=tagged, physical_tags=ptags)


SQUARE_HOLE_OUTER_TAGS = (12, 13, 14, 15)
SQUARE_HOLE_INNER_TAGS = (16, 17, 18, 19)


def load_square_with_hole() -> Mesh:
    """Triangulated unit square with the centred hole [4/9, 5/9]^2.

    Outer sides carry tags 12 (x = 0), 13 (y = 0), 14 (x = 1) and 15 (y = 1);
    the hole sides carry 16 to 19.
    """
    source = resources.files("vitransport") / "data" / "square_hole.msh.gz"
    with resources.as_file(source) as path:
        mesh = read_gmsh(path)
    roles = []
    for tag in mesh.physical_tags:
        if tag.id in SQUARE_HOLE_OUTER_TAGS:
            tag = dataclasses.replace(tag, role=TagRole.OUTER)
        elif tag.id in SQUARE_HOLE_INNER_TAGS:
            tag = dataclasses.replace(tag, role=TagRole.HOLE)
        roles.append(tag)
    return dataclasses.replace(mesh, physical_tags=tuple(roles))


# ---------------------------------------------------------------------------
# legacy VTK
# ---------------------------------------------------------------------------


def write_vtk(path, mesh: Mesh, point_data=None, cell_data=None, title="vitransport"):
    """Write an ASCII legacy-VTK unstructured grid with optional scalar fields.

    ``point_data`` maps names to arrays of length ``num_nodes``; ``cell_data``
    to arrays of length ``num_cells``.  Arrays with a trailing dimension of 2
    or 3 are written as vectors.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    npc = mesh.nodes_per_cell
    pts = np.zeros((mesh.num_nodes, 3))
    pts[:, : mesh.dim] = mesh.nodes
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.num_nodes} double",
    ]
    out.extend(" ".join(repr(float(v)) for v in p) for p in pts)
    out.append(f"CELLS {mesh.num_cells} {mesh.num_cells * (npc + 1)}")
    out.extend(f"{npc} " + " ".join(str(int(v)) for v in c) for c in mesh.cells)
    out.append(f"CELL_TYPES {mesh.num_cells}")
    out.extend([str(VTK_CELL_TYPE[mesh.cell_kind])] * mesh.num_cells)

    def block(kind, count, data):
        if not data:
            return
        out.append(f"{kind} {count}")
        for name, values in data.items():
            values = np.asarray(values, dtype=float)
            if len(values) != count:
                raise ValueError(f"field {name!r} has length {len(values)}, expected {count}")
            if values.ndim == 2:
                vec = np.zeros((count, 3))
                vec[:, : values.shape[1]] = values
                out.append(f"VECTORS {name} double")
                out.extend(" ".join(repr(float(v)) for v in row) for row in vec)
            else:
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out.extend(repr(float(v)) for v in values)

    block("POINT_DATA", mesh.num_nodes, point_data)
    block("CELL_DATA", mesh.num_cells, cell_data)
    path.write_text("\n".join(out) + "\n")


def read_vtk_counts(path) -> tuple[int, int]:
    """Return ``(num_points, num_cells)`` from a legacy-VTK file."""
    npts = ncells = None
    with open(path) as fh:
        for line in fh:
            if line.startswith("POINTS"):
                npts = int(line.split()[1])
            elif line.startswith("CELLS"):
                ncells = int(line.split()[1])
    if npts is None or ncells is None:
        raise MeshError(f"{path}: not an unstructured-grid VTK file")
    return npts, ncells
