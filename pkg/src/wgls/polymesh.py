"""Polygonal meshes in two dimensions.

A :class:`PolyMesh` stores vertex coordinates and counterclockwise cell loops;
facets (edges), their adjacency and per-cell outward normals are derived once at
construction and kept as flat numpy arrays.  Meshes are never mutated after
construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "MeshFormatError",
    "MeshValidationError",
    "Facet",
    "Cell",
    "PolyMesh",
    "BoundaryClassification",
    "generate_triangular",
    "generate_nonconvex_polygonal",
    "classify_boundary",
    "load_mesh",
    "save_mesh",
    "is_convex",
]

DEFAULT_BOX = (-1.0, 1.0, -1.0, 1.0)


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class MeshValidationError(ValueError):
    """Raised when mesh connectivity or geometry is inconsistent."""


@dataclass(frozen=True)
class Facet:
    id: int
    vertex_ids: tuple[int, int]
    cell_ids: tuple[int, ...]
    length: float
    midpoint: np.ndarray
    unit_normal_per_cell: dict[int, np.ndarray]

    @property
    def is_boundary(self) -> bool:
        return len(self.cell_ids) == 1


@dataclass(frozen=True)
class Cell:
    id: int
    vertex_ids: tuple[int, ...]
    facet_ids: tuple[int, ...]
    diameter: float
    centroid: np.ndarray
    area: float
    vertices: np.ndarray

    @property
    def is_triangle(self) -> bool:
        return len(self.vertex_ids) == 3


def _shoelace(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    """Proper or touching intersection of two closed segments."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        scale = max(abs(b[0] - a[0]) + abs(b[1] - a[1]), abs(c[0] - a[0]) + abs(c[1] - a[1]), 1e-300)
        if abs(v) <= 1e-14 * scale * scale:
            return 0
        return 1 if v > 0 else -1

    def on_segment(a, b, c):
        return (
            min(a[0], b[0]) - 1e-15 <= c[0] <= max(a[0], b[0]) + 1e-15
            and min(a[1], b[1]) - 1e-15 <= c[1] <= max(a[1], b[1]) + 1e-15
        )

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4):
        return True
    if o1 == 0 and on_segment(p1, p2, q1):
        return True
    if o2 == 0 and on_segment(p1, p2, q2):
        return True
    if o3 == 0 and on_segment(q1, q2, p1):
        return True
    if o4 == 0 and on_segment(q1, q2, p2):
        return True
    return False


def _is_simple(xy: np.ndarray) -> bool:
    n = len(xy)
    if n < 3:
        return False
    if len({(float(a), float(b)) for a, b in xy}) != n:
        return False
    for i in range(n):
        a1, a2 = xy[i], xy[(i + 1) % n]
        for j in range(i + 1, n):
            # adjacent edges share a vertex by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(a1, a2, xy[j], xy[(j + 1) % n]):
                return False
    return True


def is_convex(xy: np.ndarray, tol: float = 1e-12) -> bool:
    """True if the counterclockwise loop ``xy`` has no reflex vertex.

    Straight (collinear) vertices are allowed.
    """
    prev = np.roll(xy, 1, axis=0)
    nxt = np.roll(xy, -1, axis=0)
    a, b = xy - prev, nxt - xy
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    scale = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return bool(np.all(cross >= -tol * scale))


class PolyMesh:
    """Immutable two-dimensional polygonal mesh.

    Parameters
    ----------
    vertices : (nv, 2) array_like
        Vertex coordinates.
    cells : sequence of sequences of int
        Vertex loops.  Clockwise loops are reversed to counterclockwise.
    validate : bool
        Check simplicity of every polygon (quadratic in the polygon size).
    """

    dimension = 2

    def __init__(self, vertices, cells: Sequence[Sequence[int]], validate: bool = True):
        vertices = np.array(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshValidationError("vertices must have shape (n, 2)")
        if not np.all(np.isfinite(vertices)):
            raise MeshValidationError("vertex coordinates must be finite")
        nv = len(vertices)
        if len(cells) == 0:
            raise MeshValidationError("mesh has no cells")

        loops: list[np.ndarray] = [np.asarray(loop, dtype=np.int64) for loop in cells]
        lengths = np.array([lp.size if lp.ndim == 1 else -1 for lp in loops])
        for ci in np.flatnonzero(lengths < 3):
            raise MeshValidationError(f"cell {ci} needs at least 3 vertices")
        for n in np.unique(lengths):
            ids = np.flatnonzero(lengths == n)
            block = np.stack([loops[i] for i in ids])
            bad = (block.min(axis=1) < 0) | (block.max(axis=1) >= nv)
            if bad.any():
                raise MeshValidationError(f"cell {ids[bad][0]} references a missing vertex")
            srt = np.sort(block, axis=1)
            rep = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
            if rep.any():
                raise MeshValidationError(f"cell {ids[rep][0]} repeats a vertex")
            xy = vertices[block]
            x, y = xy[..., 0], xy[..., 1]
            area = 0.5 * (x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y).sum(axis=1)
            if np.any(area == 0) or not np.all(np.isfinite(area)):
                raise MeshValidationError(f"cell {ids[area == 0][0]} has zero area")
            for i in ids[area < 0]:
                loops[i] = loops[i][::-1].copy()
            if validate and n > 3:
                for i in ids:
                    if not _is_simple(vertices[loops[i]]):
                        raise MeshValidationError(f"cell {i} is not a simple polygon")

        self.vertices = vertices
        self.vertices.setflags(write=False)
        self._loops = tuple(loops)
        self.cell_nvert = np.array([len(lp) for lp in loops], dtype=np.int64)
        self.cell_ptr = np.concatenate([[0], np.cumsum(self.cell_nvert)])
        self.cell_vertices = np.concatenate(loops)
        self._build_facets()
        self._build_geometry()

    # ------------------------------------------------------------------
    # construction helpers
    def _build_facets(self) -> None:
        ncell = len(self._loops)
        owner = np.repeat(np.arange(ncell), self.cell_nvert)
        start = self.cell_vertices
        nxt_idx = np.arange(len(start)) + 1
        nxt_idx[self.cell_ptr[1:] - 1] = self.cell_ptr[:-1]
        end = self.cell_vertices[nxt_idx]
        key = np.sort(np.stack([start, end], axis=1), axis=1)
        facets, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            bad = int(np.flatnonzero(counts > 2)[0])
            raise MeshValidationError(f"facet {facets[bad].tolist()} is shared by more than two cells")

        nfacet = len(facets)
        order = np.argsort(inverse, kind="stable")
        first = np.concatenate([[0], np.cumsum(counts)[:-1]])
        facet_cells = -np.ones((nfacet, 2), dtype=np.int64)
        facet_cells[:, 0] = owner[order[first]]
        two = counts == 2
        facet_cells[two, 1] = owner[order[first[two] + 1]]
        # a shared facet traversed twice in the same direction means overlapping cells
        fwd = start < end
        fwd_count = np.bincount(inverse, weights=fwd.astype(float), minlength=nfacet)
        if np.any(two & (fwd_count != 1)):
            raise MeshValidationError("adjacent cells traverse a shared facet in the same direction (overlap)")

        self.facets = facets.astype(np.int64)
        self.facet_cells = facet_cells
        self.halfedge_facet = inverse.astype(np.int64)
        # cell -> facets in ascending global facet id (local dof order); cell_ptr
        # doubles as the pointer since each loop edge is one facet
        perm = np.lexsort((inverse, owner))
        self.cell_facets = self.halfedge_facet[perm]
        # ccw half-edge a->b has its outward normal on the right of a->b, which is
        # the stored facet normal iff a < b
        self.cell_facet_sign = np.where(fwd, 1.0, -1.0)[perm]
        for arr in (self.facets, self.facet_cells, self.halfedge_facet, self.cell_facets):
            arr.setflags(write=False)

    def _build_geometry(self) -> None:
        v = self.vertices
        p0, p1 = v[self.facets[:, 0]], v[self.facets[:, 1]]
        d = p1 - p0
        self.facet_lengths = np.sqrt((d**2).sum(axis=1))
        if np.any(self.facet_lengths <= 0):
            raise MeshValidationError("zero-length facet")
        self.facet_midpoints = 0.5 * (p0 + p1)
        # normal pointing right of p0->p1 (rotated tangent)
        self.facet_normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / self.facet_lengths[:, None]

        ncell = self.n_cells
        self.cell_areas = np.empty(ncell)
        self.cell_centroids = np.empty((ncell, 2))
        self.cell_diameters = np.empty(ncell)
        for nv in np.unique(self.cell_nvert):
            ids = np.flatnonzero(self.cell_nvert == nv)
            idx = self.cell_ptr[ids][:, None] + np.arange(nv)
            xy = v[self.cell_vertices[idx]]
            x, y = xy[..., 0], xy[..., 1]
            xn, yn = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
            cross = x * yn - xn * y
            area = 0.5 * cross.sum(axis=1)
            self.cell_areas[ids] = area
            self.cell_centroids[ids, 0] = ((x + xn) * cross).sum(axis=1) / (6.0 * area)
            self.cell_centroids[ids, 1] = ((y + yn) * cross).sum(axis=1) / (6.0 * area)
            diff = xy[:, :, None, :] - xy[:, None, :, :]
            self.cell_diameters[ids] = np.sqrt((diff**2).sum(axis=-1)).max(axis=(1, 2))

        self.cell_facet_normals = self.facet_normals[self.cell_facets] * self.cell_facet_sign[:, None]
        for arr in (self.facet_lengths, self.facet_midpoints, self.facet_normals, self.cell_areas,
                    self.cell_centroids, self.cell_diameters, self.cell_facet_normals, self.cell_facet_sign):
            arr.setflags(write=False)

    # ------------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self._loops)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @cached_property
    def h(self) -> float:
        """Mesh size: largest cell diameter."""
        return float(self.cell_diameters.max())

    @cached_property
    def boundary_facets(self) -> np.ndarray:
        out = np.flatnonzero(self.facet_cells[:, 1] < 0)
        out.setflags(write=False)
        return out

    @cached_property
    def interior_facets(self) -> np.ndarray:
        out = np.flatnonzero(self.facet_cells[:, 1] >= 0)
        out.setflags(write=False)
        return out

    def cell_loop(self, c: int) -> np.ndarray:
        return self._loops[c]

    def cell_facet_ids(self, c: int) -> np.ndarray:
        return self.cell_facets[self.cell_ptr[c]:self.cell_ptr[c + 1]]

    def cell_normals(self, c: int) -> np.ndarray:
        return self.cell_facet_normals[self.cell_ptr[c]:self.cell_ptr[c + 1]]

    def cell(self, c: int) -> Cell:
        loop = self._loops[c]
        return Cell(
            id=c,
            vertex_ids=tuple(int(i) for i in loop),
            facet_ids=tuple(int(f) for f in self.cell_facet_ids(c)),
            diameter=float(self.cell_diameters[c]),
            centroid=self.cell_centroids[c],
            area=float(self.cell_areas[c]),
            vertices=self.vertices[loop],
        )

    def facet(self, f: int) -> Facet:
        cells = tuple(int(c) for c in self.facet_cells[f] if c >= 0)
        normals = {}
        for c in cells:
            fids = self.cell_facet_ids(c)
            j = int(np.flatnonzero(fids == f)[0])
            normals[c] = self.cell_normals(c)[j]
        return Facet(
            id=f,
            vertex_ids=(int(self.facets[f, 0]), int(self.facets[f, 1])),
            cell_ids=cells,
            length=float(self.facet_lengths[f]),
            midpoint=self.facet_midpoints[f],
            unit_normal_per_cell=normals,
        )

    def is_cell_convex(self, c: int) -> bool:
        return is_convex(self.vertices[self._loops[c]])

    def bounding_box(self) -> tuple[float, float, float, float]:
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])

    def __repr__(self) -> str:
        return (f"PolyMesh(n_vertices={self.n_vertices}, n_cells={self.n_cells}, "
                f"n_facets={self.n_facets}, h={self.h:.4g})")


# ----------------------------------------------------------------------
# generators
def _grid_vertices(n: int, box) -> tuple[np.ndarray, Callable[[int, int], int]]:
    x0, x1, y0, y1 = box
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    return verts, lambda i, j: j * (n + 1) + i


def generate_triangular(level: int, domain=DEFAULT_BOX) -> PolyMesh:
    """Uniform ``2**level x 2**level`` squares, each cut along the lower-left to
    upper-right diagonal."""
    if level < 0:
        raise ValueError("level must be non-negative")
    n = 2**level
    verts, vid = _grid_vertices(n, domain)
    cells = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    return PolyMesh(verts, cells, validate=False)


def generate_nonconvex_polygonal(level: int, domain=DEFAULT_BOX) -> PolyMesh:
    """Each square of a ``2**level`` grid becomes an L-shaped cell covering three
    quadrants plus a small square in the upper-right quadrant.

    The L-cell carries the midpoints of the square's lower and left sides as
    (straight-angle) vertices so that neighbouring cells are conforming.
    """
    if level < 1:
        raise ValueError("level must be at least 1")
    n = 2**level
    verts, vid = _grid_vertices(2 * n, domain)
    cells = []
    for j in range(n):
        for i in range(n):
            I, J = 2 * i, 2 * j
            cells.append((
                vid(I, J), vid(I + 1, J), vid(I + 2, J), vid(I + 2, J + 1),
                vid(I + 1, J + 1), vid(I + 1, J + 2), vid(I, J + 2), vid(I, J + 1),
            ))
            cells.append((vid(I + 1, J + 1), vid(I + 2, J + 1), vid(I + 2, J + 2), vid(I + 1, J + 2)))
    return PolyMesh(verts, cells, validate=False)


# ----------------------------------------------------------------------
# boundary classification
@dataclass(frozen=True)
class BoundaryClassification:
    inflow_facets: frozenset
    nonin_facets: frozenset

    @property
    def inflow(self) -> np.ndarray:
        return np.array(sorted(self.inflow_facets), dtype=np.int64)

    @property
    def nonin(self) -> np.ndarray:
        return np.array(sorted(self.nonin_facets), dtype=np.int64)


def as_vector_field(beta) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a constant 2-vector as a field; callables pass through."""
    if callable(beta):
        return beta
    value = np.asarray(beta, dtype=float).reshape(2)

    def field(x):
        x = np.asarray(x)
        return np.broadcast_to(value, x.shape[:-1] + (2,)).copy()

    return field


def classify_boundary(mesh: PolyMesh, beta) -> BoundaryClassification:
    """Split boundary facets into inflow (``beta . n < -eps``) and the rest.

    ``beta`` is sampled at facet midpoints; ``eps = 1e-12 * max|beta|`` over the
    samples, so characteristic facets are never inflow.
    """
    field = as_vector_field(beta)
    bf = mesh.boundary_facets
    if len(bf) == 0:
        return BoundaryClassification(frozenset(), frozenset())
    b = np.asarray(field(mesh.facet_midpoints[bf]), dtype=float)
    owner = mesh.facet_cells[bf, 0]
    # outward normal of the single adjacent cell
    normals = np.empty((len(bf), 2))
    for i, (f, c) in enumerate(zip(bf.tolist(), owner.tolist())):
        fids = mesh.cell_facet_ids(c)
        normals[i] = mesh.cell_normals(c)[np.searchsorted(fids, f)]
    bn = (b * normals).sum(axis=1)
    eps = 1e-12 * float(np.abs(b).max()) if b.size else 0.0
    inflow = bn < -eps
    return BoundaryClassification(
        inflow_facets=frozenset(int(f) for f in bf[inflow]),
        nonin_facets=frozenset(int(f) for f in bf[~inflow]),
    )


# ----------------------------------------------------------------------
# text format
def save_mesh(mesh: PolyMesh, path: Union[str, Path]) -> None:
    lines = ["polymesh 2", f"vertices {mesh.n_vertices}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"cells {mesh.n_cells}")
    for c in range(mesh.n_cells):
        loop = mesh.cell_loop(c)
        lines.append(" ".join([str(len(loop))] + [str(int(v)) for v in loop]))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_mesh(text: str) -> tuple[np.ndarray, list[list[int]]]:
    rows = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    rows = [(i, tok) for i, tok in rows if tok and not tok[0].startswith("#")]
    if not rows:
        raise MeshFormatError("empty mesh file", 1)
    it = iter(rows)

    def take(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file, expected {what}",
                                  rows[-1][0] + 1) from None

    lineno, tok = take("header")
    if tok != ["polymesh", "2"]:
        raise MeshFormatError("expected header 'polymesh 2'", lineno)

    def count(keyword):
        lineno, tok = take(f"'{keyword} N'")
        if len(tok) != 2 or tok[0] != keyword:
            raise MeshFormatError(f"expected '{keyword} N'", lineno)
        try:
            n = int(tok[1])
        except ValueError:
            raise MeshFormatError(f"bad {keyword} count {tok[1]!r}", lineno) from None
        if n < 0:
            raise MeshFormatError(f"negative {keyword} count", lineno)
        return n

    nv = count("vertices")
    verts = np.empty((nv, 2))
    for i in range(nv):
        lineno, tok = take("vertex coordinates")
        if len(tok) != 2:
            raise MeshFormatError("vertex line needs exactly two coordinates", lineno)
        try:
            verts[i] = [float(tok[0]), float(tok[1])]
        except ValueError:
            raise MeshFormatError(f"bad coordinate in {' '.join(tok)!r}", lineno) from None

    ncell = count("cells")
    cells = []
    for _ in range(ncell):
        lineno, tok = take("cell line")
        try:
            ints = [int(t) for t in tok]
        except ValueError:
            raise MeshFormatError(f"bad integer in cell line {' '.join(tok)!r}", lineno) from None
        if len(ints) < 1 or ints[0] != len(ints) - 1:
            raise MeshFormatError("cell line length does not match its vertex count", lineno)
        cells.append(ints[1:])
    extra = next(it, None)
    if extra is not None:
        raise MeshFormatError("trailing content after cells", extra[0])
    return verts, cells


def load_mesh(path: Union[str, Path]) -> PolyMesh:
    verts, cells = _parse_mesh(Path(path).read_text())
    return PolyMesh(verts, cells)
