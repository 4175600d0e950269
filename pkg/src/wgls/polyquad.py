"""Scaled monomial bases and quadrature on polygons and segments.

Cell rules come from a sub-triangulation of the polygon (the triangle itself,
a centroid fan for convex polygons, ear clipping otherwise) carrying a collapsed
Gauss-Jacobi product rule on every sub-triangle.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .polymesh import Cell, Facet, PolyMesh, is_convex

__all__ = [
    "QuadratureError",
    "QuadratureRule",
    "CellBasis",
    "FacetBasis",
    "monomial_exponents",
    "scaled_monomials",
    "triangle_rule",
    "triangulate_polygon",
    "polygon_rule",
    "cell_quadrature",
    "segment_rule",
    "facet_quadrature",
    "eval_basis",
    "eval_basis_grad",
    "mass_matrix",
    "orthonormalize",
    "MeshQuadrature",
    "mesh_quadrature",
    "poly_dim",
]


class QuadratureError(ValueError):
    """Raised for degenerate integration domains."""


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values)))

    def __len__(self) -> int:
        return len(self.weights)


# ----------------------------------------------------------------------
# monomials
@lru_cache(maxsize=None)
def monomial_exponents(degree: int) -> np.ndarray:
    """Exponents ``(a, b)`` ordered by total degree, then by decreasing ``a``.

    The ordering is nested: the first ``dim P_k`` rows span ``P_k``.
    """
    out = [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]
    arr = np.array(out, dtype=np.int64)
    arr.setflags(write=False)
    return arr


def poly_dim(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


def scaled_monomials(xi: np.ndarray, eta: np.ndarray, degree: int, grad: bool = False):
    """Values (and optionally reference derivatives) of ``xi**a * eta**b``.

    Returns arrays with the basis index last.  Derivatives are with respect to
    ``xi`` and ``eta``; callers apply the ``1/h`` chain-rule factor.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    px = np.ones(xi.shape + (degree + 1,))
    py = np.ones(eta.shape + (degree + 1,))
    for d in range(1, degree + 1):
        px[..., d] = px[..., d - 1] * xi
        py[..., d] = py[..., d - 1] * eta
    ex = monomial_exponents(degree)
    a, b = ex[:, 0], ex[:, 1]
    val = px[..., a] * py[..., b]
    if not grad:
        return val
    am1 = np.maximum(a - 1, 0)
    bm1 = np.maximum(b - 1, 0)
    dx = a * px[..., am1] * py[..., b]
    dy = b * px[..., a] * py[..., bm1]
    return val, dx, dy


@dataclass(frozen=True)
class CellBasis:
    """Monomials ``((x - xc)/h)**a ((y - yc)/h)**b`` with ``a + b <= degree``."""

    center: np.ndarray
    h: float
    degree: int
    cell_id: int = -1
    transform: np.ndarray | None = None  # optional orthonormalizing coefficients

    @classmethod
    def for_cell(cls, cell: Cell, degree: int) -> "CellBasis":
        return cls(np.asarray(cell.centroid, dtype=float), float(cell.diameter), degree, cell.id)

    @property
    def dim(self) -> int:
        return poly_dim(self.degree)

    def _local(self, points):
        p = np.asarray(points, dtype=float)
        return (p[..., 0] - self.center[0]) / self.h, (p[..., 1] - self.center[1]) / self.h

    def values(self, points) -> np.ndarray:
        v = scaled_monomials(*self._local(points), self.degree)
        return v if self.transform is None else v @ self.transform

    def gradients(self, points) -> np.ndarray:
        """Array of shape ``points.shape[:-1] + (dim, 2)``."""
        _, dx, dy = scaled_monomials(*self._local(points), self.degree, grad=True)
        g = np.stack([dx, dy], axis=-1) / self.h
        if self.transform is not None:
            g = np.einsum("...ic,ij->...jc", g, self.transform)
        return g


@dataclass(frozen=True)
class FacetBasis:
    """Monomials ``s**j`` (``j <= degree``) in the arc coordinate ``s`` in [-1, 1].

    ``s`` runs from ``p0`` to ``p1``; for mesh facets ``p0`` is the lower vertex id.
    """

    p0: np.ndarray
    p1: np.ndarray
    degree: int
    facet_id: int = -1

    @classmethod
    def for_facet(cls, mesh: PolyMesh, facet_id: int, degree: int) -> "FacetBasis":
        a, b = mesh.facets[facet_id]
        return cls(mesh.vertices[a], mesh.vertices[b], degree, facet_id)

    @property
    def dim(self) -> int:
        return self.degree + 1

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    def arc_coordinate(self, points) -> np.ndarray:
        t = self.p1 - self.p0
        rel = np.asarray(points, dtype=float) - self.p0
        return 2.0 * (rel @ t) / float(t @ t) - 1.0

    def values(self, points) -> np.ndarray:
        s = self.arc_coordinate(points)
        return s[..., None] ** np.arange(self.degree + 1)


def eval_basis(basis, points) -> np.ndarray:
    return basis.values(points)


def eval_basis_grad(basis: CellBasis, points) -> np.ndarray:
    return basis.gradients(points)


# ----------------------------------------------------------------------
# reference rules
@lru_cache(maxsize=None)
def _reference_triangle(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the triangle (0,0),(1,0),(0,1), exact to ``degree``."""
    n = max(1, -(-(degree + 1) // 2))
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = roots_legendre(n)
    a = 0.5 * (1.0 + xj)
    wa = 0.25 * wj
    b = 0.5 * (1.0 + xl)
    wb = 0.5 * wl
    A, B = np.meshgrid(a, b, indexing="ij")
    W = np.outer(wa, wb)
    pts = np.stack([A.ravel(), ((1.0 - A) * B).ravel()], axis=1)
    pts.setflags(write=False)
    W = W.ravel()
    W.setflags(write=False)
    return pts, W


@lru_cache(maxsize=None)
def _reference_segment(degree: int) -> tuple[np.ndarray, np.ndarray]:
    n = max(1, -(-(degree + 1) // 2))
    x, w = roots_legendre(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def triangle_rule(vertices, degree: int) -> QuadratureRule:
    v = np.asarray(vertices, dtype=float)
    ref, w = _reference_triangle(degree)
    e1, e2 = v[1] - v[0], v[2] - v[0]
    jac = e1[0] * e2[1] - e1[1] * e2[0]
    if abs(jac) <= 1e-14 * (e1 @ e1 + e2 @ e2):
        raise QuadratureError("degenerate triangle")
    pts = v[0] + ref[:, :1] * e1 + ref[:, 1:] * e2
    return QuadratureRule(pts, w * abs(jac), degree)


def _tri_area2(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _ear_clip(xy: np.ndarray) -> list[tuple[int, int, int]]:
    """Ear clipping of a ccw simple polygon; the lowest-index valid ear goes first."""
    idx = list(range(len(xy)))
    scale = float(np.ptp(xy, axis=0).max()) ** 2
    tol = 1e-12 * scale
    tris = []
    while len(idx) > 3:
        m = len(idx)
        for pos in range(m):
            i0, i1, i2 = idx[pos - 1], idx[pos], idx[(pos + 1) % m]
            a, b, c = xy[i0], xy[i1], xy[i2]
            if _tri_area2(a, b, c) <= tol:
                continue
            blocked = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = xy[j]
                if (_tri_area2(a, b, p) >= -tol and _tri_area2(b, c, p) >= -tol
                        and _tri_area2(c, a, p) >= -tol):
                    blocked = True
                    break
            if not blocked:
                tris.append((i0, i1, i2))
                idx.pop(pos)
                break
        else:
            raise QuadratureError("ear clipping found no ear (polygon not simple?)")
    a, b, c = (xy[i] for i in idx)
    if _tri_area2(a, b, c) <= tol:
        raise QuadratureError("ear clipping left a degenerate triangle")
    tris.append(tuple(idx))
    return tris


def triangulate_polygon(xy: np.ndarray) -> np.ndarray:
    """Sub-triangles of a ccw polygon as an array of shape ``(ntri, 3, 2)``."""
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    if n == 3:
        return xy[None]
    if is_convex(xy):
        x, y = xy[:, 0], xy[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cr = x * yn - xn * y
        area = 0.5 * cr.sum()
        c = np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6.0 * area)
        nxt = np.roll(xy, -1, axis=0)
        return np.stack([np.broadcast_to(c, xy.shape), xy, nxt], axis=1)
    tris = _ear_clip(xy)
    return np.stack([xy[list(t)] for t in tris])


def _rules_on_triangles(tris: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    ref, w = _reference_triangle(degree)
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    jac = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    scale = (e1**2).sum(axis=1) + (e2**2).sum(axis=1)
    if np.any(np.abs(jac) <= 1e-14 * scale):
        raise QuadratureError("degenerate sub-triangle")
    pts = tris[:, None, 0] + ref[None, :, :1] * e1[:, None] + ref[None, :, 1:] * e2[:, None]
    wts = np.abs(jac)[:, None] * w[None, :]
    return pts.reshape(-1, 2), wts.reshape(-1)


def polygon_rule(xy, degree: int) -> QuadratureRule:
    pts, wts = _rules_on_triangles(triangulate_polygon(xy), degree)
    return QuadratureRule(pts, wts, degree)


def cell_quadrature(cell: Cell, q: int) -> QuadratureRule:
    if q < 0:
        raise ValueError("quadrature degree must be non-negative")
    return polygon_rule(cell.vertices, q)


def segment_rule(p0, p1, degree: int) -> tuple[QuadratureRule, np.ndarray]:
    """Gauss-Legendre rule on the segment and the arc coordinates of its points."""
    x, w = _reference_segment(degree)
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    length = float(np.linalg.norm(p1 - p0))
    pts = p0 + 0.5 * (1.0 + x)[:, None] * (p1 - p0)
    return QuadratureRule(pts, 0.5 * length * w, degree), x.copy()


def facet_quadrature(facet: Facet | FacetBasis, q: int, mesh: PolyMesh | None = None) -> QuadratureRule:
    if isinstance(facet, FacetBasis):
        p0, p1 = facet.p0, facet.p1
    else:
        if mesh is None:
            raise ValueError("a Facet needs its mesh for vertex coordinates")
        p0, p1 = mesh.vertices[facet.vertex_ids[0]], mesh.vertices[facet.vertex_ids[1]]
    return segment_rule(p0, p1, q)[0]


# ----------------------------------------------------------------------
# batched rules for a whole mesh
@dataclass(frozen=True)
class MeshQuadrature:
    """Concatenated cell rules (``cell_ptr`` offsets) and per-facet rules."""

    cell_ptr: np.ndarray
    cell_points: np.ndarray
    cell_weights: np.ndarray
    facet_points: np.ndarray  # (nfacet, nq, 2)
    facet_weights: np.ndarray  # (nfacet, nq)
    facet_s: np.ndarray  # (nq,) arc coordinates, shared by all facets
    cell_degree: int
    facet_degree: int


def mesh_quadrature(mesh: PolyMesh, cell_degree: int, facet_degree: int) -> MeshQuadrature:
    ncell = mesh.n_cells
    tri_blocks: list[np.ndarray] = []
    owner_blocks: list[np.ndarray] = []
    for nv in np.unique(mesh.cell_nvert):
        ids = np.flatnonzero(mesh.cell_nvert == nv)
        if nv == 3:
            idx = mesh.cell_ptr[ids][:, None] + np.arange(3)
            tris = mesh.vertices[mesh.cell_vertices[idx]]
            tri_blocks.append(tris)
            owner_blocks.append(ids)
            continue
        for c in ids:
            tris = triangulate_polygon(mesh.vertices[mesh.cell_loop(c)])
            tri_blocks.append(tris)
            owner_blocks.append(np.full(len(tris), c))
    tris = np.concatenate(tri_blocks)
    owner = np.concatenate(owner_blocks)
    order = np.argsort(owner, kind="stable")
    tris, owner = tris[order], owner[order]
    pts, wts = _rules_on_triangles(tris, cell_degree)
    nref = len(_reference_triangle(cell_degree)[1])
    counts = np.bincount(owner, minlength=ncell) * nref
    ptr = np.concatenate([[0], np.cumsum(counts)])

    x, w = _reference_segment(facet_degree)
    p0 = mesh.vertices[mesh.facets[:, 0]]
    p1 = mesh.vertices[mesh.facets[:, 1]]
    fpts = p0[:, None] + 0.5 * (1.0 + x)[None, :, None] * (p1 - p0)[:, None]
    fw = 0.5 * mesh.facet_lengths[:, None] * w[None, :]
    return MeshQuadrature(ptr, pts, wts, fpts, fw, x.copy(), cell_degree, facet_degree)


# ----------------------------------------------------------------------
def mass_matrix(basis, rule: QuadratureRule, check: bool = __debug__) -> np.ndarray:
    if check:
        deg = basis.degree
        if rule.degree < 2 * deg:
            raise ValueError(f"rule exactness {rule.degree} < {2 * deg} needed for the mass matrix")
    V = basis.values(rule.points)
    M = V.T @ (rule.weights[:, None] * V)
    return 0.5 * (M + M.T)


def orthonormalize(basis: CellBasis, rule: QuadratureRule) -> CellBasis:
    """Basis orthonormal in the discrete inner product of ``rule``.

    Uses a QR factorization of the weighted value matrix (modified Gram-Schmidt
    quality without forming the mass matrix).
    """
    V = basis.values(rule.points) * np.sqrt(rule.weights)[:, None]
    _, R = np.linalg.qr(V)
    T = np.linalg.solve(R, np.eye(R.shape[0]))
    if basis.transform is not None:
        T = basis.transform @ T
    return CellBasis(basis.center, basis.h, basis.degree, basis.cell_id, T)
