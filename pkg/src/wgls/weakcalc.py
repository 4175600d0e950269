"""Weak finite element spaces, L2 projections and the discrete weak gradient.

Global numbering: the ``dim P_k`` interior coefficients of every cell come
first (cell by cell), followed by ``k + 1`` coefficients per facet.  Facet
polynomials use the arc coordinate running from the lower to the higher vertex
id, so both neighbours of an interior facet see the same basis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .polymesh import PolyMesh
from .polyquad import CellBasis, FacetBasis, MeshQuadrature, mesh_quadrature, poly_dim, scaled_monomials

__all__ = [
    "WeakSpace",
    "WeakFunction",
    "WeakGradientOperator",
    "default_grad_degree",
    "project_Q0",
    "project_Qb",
    "project_Qh",
    "build_weak_gradient",
    "verify_commutativity",
]


def default_grad_degree(mesh: PolyMesh, k: int) -> int:
    """``k + 1`` on all-triangle meshes, ``k + 2`` on general polygonal meshes."""
    return k + 1 if np.all(mesh.cell_nvert == 3) else k + 2


def _evaluate(fn, points: np.ndarray) -> np.ndarray:
    """Evaluate a scalar field (callable or constant) at ``points`` of shape (..., 2)."""
    if callable(fn):
        out = np.asarray(fn(points), dtype=float)
        return np.broadcast_to(out, points.shape[:-1]).copy()
    return np.full(points.shape[:-1], float(fn))


class WeakSpace:
    """Global weak space ``W_h`` of degree ``k`` with weak-gradient degree ``r``.

    Parameters
    ----------
    mesh : PolyMesh
    k : int
        Degree of interior and facet polynomials (``k >= 1``).
    r : int, optional
        Degree of the discrete weak gradient; defaults to
        :func:`default_grad_degree`.
    cell_degree, facet_degree : int, optional
        Quadrature exactness on cells and facets.
    """

    def __init__(self, mesh: PolyMesh, k: int, r: int | None = None,
                 cell_degree: int | None = None, facet_degree: int | None = None):
        if k < 1:
            raise ValueError("interior degree k must be >= 1")
        r = default_grad_degree(mesh, k) if r is None else int(r)
        if r < k - 1 or r < 0:
            raise ValueError("weak-gradient degree r must be >= k - 1")
        self.mesh = mesh
        self.k = int(k)
        self.r = r
        self.nk = poly_dim(k)
        self.nb = k + 1
        self.nr = poly_dim(r)
        self.cell_degree = 2 * r + 4 if cell_degree is None else int(cell_degree)
        self.facet_degree = max(2 * k + 2, k + r) if facet_degree is None else int(facet_degree)

        self.n_interior_dofs = mesh.n_cells * self.nk
        self.n_dofs = self.n_interior_dofs + mesh.n_facets * self.nb
        # local dofs of each cell: interior block, then facet blocks by ascending facet id
        cf = mesh.cell_facets
        nf = mesh.cell_nvert
        nloc = self.nk + nf * self.nb
        self.loc_ptr = np.concatenate([[0], np.cumsum(nloc)]).astype(np.int64)
        dofs = np.empty(self.loc_ptr[-1], dtype=np.int64)
        for n in np.unique(nf):
            ids = np.flatnonzero(nf == n)
            interior = ids[:, None] * self.nk + np.arange(self.nk)
            fids = cf[mesh.cell_ptr[ids][:, None] + np.arange(n)]
            fdofs = (self.n_interior_dofs + fids[:, :, None] * self.nb + np.arange(self.nb)).reshape(len(ids), -1)
            pos = self.loc_ptr[ids][:, None] + np.arange(self.nk + n * self.nb)
            dofs[pos] = np.concatenate([interior, fdofs], axis=1)
        self.local_dofs_flat = dofs
        self.local_dofs_flat.setflags(write=False)

    def __repr__(self) -> str:
        return f"WeakSpace(k={self.k}, r={self.r}, n_dofs={self.n_dofs}, mesh={self.mesh!r})"

    # ------------------------------------------------------------------
    def interior_dofs(self, c: int) -> np.ndarray:
        return np.arange(c * self.nk, (c + 1) * self.nk)

    def facet_dofs(self, f) -> np.ndarray:
        f = np.atleast_1d(np.asarray(f, dtype=np.int64))
        return (self.n_interior_dofs + f[:, None] * self.nb + np.arange(self.nb)).ravel()

    def local_dofs(self, c: int) -> np.ndarray:
        return self.local_dofs_flat[self.loc_ptr[c]:self.loc_ptr[c + 1]]

    @cached_property
    def quadrature(self) -> MeshQuadrature:
        return mesh_quadrature(self.mesh, self.cell_degree, self.facet_degree)

    @cached_property
    def cell_basis_values(self) -> np.ndarray:
        """Scaled monomials of degree ``max(k, r)`` at every cell quadrature point.

        The nested ordering means the first ``nk`` columns span ``P_k`` and the
        first ``nr`` span ``P_r``.
        """
        q = self.quadrature
        owner = np.repeat(np.arange(self.mesh.n_cells), np.diff(q.cell_ptr))
        xc = self.mesh.cell_centroids[owner]
        h = self.mesh.cell_diameters[owner]
        pts = q.cell_points
        return scaled_monomials((pts[:, 0] - xc[:, 0]) / h, (pts[:, 1] - xc[:, 1]) / h, max(self.k, self.r))

    @cached_property
    def quad_owner(self) -> np.ndarray:
        return np.repeat(np.arange(self.mesh.n_cells), np.diff(self.quadrature.cell_ptr))

    def cell_basis(self, c: int, degree: int | None = None) -> CellBasis:
        return CellBasis(self.mesh.cell_centroids[c], float(self.mesh.cell_diameters[c]),
                         self.r if degree is None else degree, c)

    def facet_basis(self, f: int) -> FacetBasis:
        return FacetBasis.for_facet(self.mesh, f, self.k)

    # ------------------------------------------------------------------
    def local_operators(self, beta=None, c=None, f=None, stab_weight: float = 1.0,
                        impl=None) -> kernels.LocalOperators:
        """Per-cell blocks for coefficient fields ``beta`` (vector), ``c`` and ``f``.

        With ``beta``/``c``/``f`` omitted the least-squares parts are zero, which is
        enough for weak gradients and mass matrices.
        """
        q = self.quadrature
        pts = q.cell_points
        if beta is None:
            bq = np.zeros_like(pts)
        elif callable(beta):
            bq = np.asarray(beta(pts), dtype=float).reshape(pts.shape)
        else:
            bq = np.broadcast_to(np.asarray(beta, dtype=float), pts.shape)
        cq = np.zeros(len(pts)) if c is None else _evaluate(c, pts)
        fq = np.zeros(len(pts)) if f is None else _evaluate(f, pts)
        m = self.mesh
        return kernels.local_operators(
            self.k, self.r, stab_weight, m.cell_centroids, m.cell_diameters, q.cell_ptr, pts, q.cell_weights,
            bq, cq, fq, m.cell_ptr, m.cell_facets, m.cell_facet_normals, q.facet_points, q.facet_weights,
            q.facet_s, impl=impl)

    @cached_property
    def geometric_operators(self) -> kernels.LocalOperators:
        return self.local_operators()

    @cached_property
    def facet_mass_reference(self) -> np.ndarray:
        """``int_{-1}^{1} s^i s^j ds``; the facet mass matrix is ``length/2`` times this."""
        i = np.arange(self.nb)
        p = i[:, None] + i[None, :]
        return np.where(p % 2 == 0, 2.0 / (p + 1), 0.0)

    # ------------------------------------------------------------------
    def interpolate(self, u) -> "WeakFunction":
        return project_Qh(u, self)

    def zero(self) -> "WeakFunction":
        return WeakFunction(self, np.zeros(self.n_dofs))


@dataclass
class WeakFunction:
    """Coefficient vector of ``{v_0, v_b}`` over the dof map of ``space``."""

    space: WeakSpace
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.n_dofs,):
            raise ValueError(f"expected {self.space.n_dofs} coefficients, got {self.coefficients.shape}")

    @property
    def interior(self) -> np.ndarray:
        """Interior coefficients as an array of shape (n_cells, dim P_k)."""
        sp = self.space
        return self.coefficients[:sp.n_interior_dofs].reshape(sp.mesh.n_cells, sp.nk)

    @property
    def boundary(self) -> np.ndarray:
        """Facet coefficients as an array of shape (n_facets, k + 1)."""
        sp = self.space
        return self.coefficients[sp.n_interior_dofs:].reshape(sp.mesh.n_facets, sp.nb)

    def local(self, c: int) -> np.ndarray:
        return self.coefficients[self.space.local_dofs(c)]

    def __add__(self, other: "WeakFunction") -> "WeakFunction":
        return WeakFunction(self.space, self.coefficients + other.coefficients)

    def __sub__(self, other: "WeakFunction") -> "WeakFunction":
        return WeakFunction(self.space, self.coefficients - other.coefficients)

    def __mul__(self, a: float) -> "WeakFunction":
        return WeakFunction(self.space, a * self.coefficients)

    __rmul__ = __mul__

    def weak_gradient(self, ops: kernels.LocalOperators | None = None) -> np.ndarray:
        """``P_r`` coefficients of the weak gradient on every cell, shape (n_cells, 2, nr)."""
        sp = self.space
        ops = sp.geometric_operators if ops is None else ops
        out = np.empty((sp.mesh.n_cells, 2, sp.nr))
        for n in np.unique(ops.nloc):
            ids = np.flatnonzero(ops.nloc == n)
            G = ops.grad[ops.grad_ptr[ids][:, None] + np.arange(2 * sp.nr * n)].reshape(len(ids), 2, sp.nr, n)
            loc = self.coefficients[sp.local_dofs_flat[sp.loc_ptr[ids][:, None] + np.arange(n)]]
            out[ids] = np.einsum("cdin,cn->cdi", G, loc)
        return out

    def eval_interior(self, c: int, points) -> np.ndarray:
        basis = self.space.cell_basis(c, self.space.k)
        return basis.values(points) @ self.interior[c]


@dataclass(frozen=True)
class WeakGradientOperator:
    """Weak gradient of one cell: ``matrix`` maps local weak dofs to ``[P_r]^2``
    coefficients (x-components first)."""

    cell_id: int
    r: int
    matrix: np.ndarray
    local_dofs: np.ndarray

    def apply(self, local_coefficients) -> np.ndarray:
        out = self.matrix @ np.asarray(local_coefficients, dtype=float)
        return out.reshape(2, -1)


def build_weak_gradient(space: WeakSpace, cell: int) -> WeakGradientOperator:
    ops = space.geometric_operators
    G = ops.grad_block(cell)
    return WeakGradientOperator(cell, space.r, G.reshape(2 * space.nr, -1).copy(), space.local_dofs(cell))


# ----------------------------------------------------------------------
# projections
def _cell_projection_rhs(space: WeakSpace, values: np.ndarray, nbasis: int) -> np.ndarray:
    q = space.quadrature
    V = space.cell_basis_values[:, :nbasis]
    contrib = V * (q.cell_weights * values)[:, None]
    out = np.zeros((space.mesh.n_cells, nbasis))
    np.add.at(out, space.quad_owner, contrib)
    return out


def project_Q0(f, space: WeakSpace, cells=None) -> np.ndarray:
    """L2 projection of ``f`` onto ``P_k`` of every cell (or the listed ``cells``).

    Returns interior coefficients of shape (n, dim P_k).
    """
    vals = _evaluate(f, space.quadrature.cell_points)
    b = _cell_projection_rhs(space, vals, space.nk)
    M = space.geometric_operators.mk
    out = np.linalg.solve(M, b[..., None])[..., 0]
    return out if cells is None else out[np.asarray(cells)]


def project_Qr_vector(fx, fy, space: WeakSpace) -> np.ndarray:
    """L2 projection of a vector field onto ``[P_r]^2``; shape (n_cells, 2, nr)."""
    pts = space.quadrature.cell_points
    M = space.geometric_operators.mr
    out = np.empty((space.mesh.n_cells, 2, space.nr))
    for i, fn in enumerate((fx, fy)):
        b = _cell_projection_rhs(space, _evaluate(fn, pts), space.nr)
        out[:, i] = np.linalg.solve(M, b[..., None])[..., 0]
    return out


def project_Qb(g, space: WeakSpace, facets=None) -> np.ndarray:
    """L2 projection of ``g`` onto ``P_k`` of each facet; shape (n, k + 1)."""
    q = space.quadrature
    facets = np.arange(space.mesh.n_facets) if facets is None else np.atleast_1d(np.asarray(facets, dtype=np.int64))
    if len(facets) == 0:
        return np.zeros((0, space.nb))
    pts = q.facet_points[facets]
    vals = _evaluate(g, pts)
    S = q.facet_s[:, None] ** np.arange(space.nb)
    b = np.einsum("fq,qj->fj", vals * q.facet_weights[facets], S)
    L = space.mesh.facet_lengths[facets]
    Minv = np.linalg.inv(space.facet_mass_reference)
    return (b @ Minv.T) * (2.0 / L)[:, None]


def project_Qh(u, space: WeakSpace) -> WeakFunction:
    coeffs = np.concatenate([project_Q0(u, space).ravel(), project_Qb(u, space).ravel()])
    return WeakFunction(space, coeffs)


def verify_commutativity(space: WeakSpace, w, grad_w, relative: bool = False) -> float:
    """``max_T ||grad_w(Q_h w) - Q_r(grad w)||_{L2(T)}`` for a scalar field ``w``.

    ``grad_w`` returns an array (..., 2).  With ``relative=True`` the result is
    divided by ``||grad w||_{L2(Omega)}`` computed by quadrature.
    """
    gw = project_Qh(w, space).weak_gradient()
    pts = space.quadrature.cell_points
    g = np.asarray(grad_w(pts), dtype=float).reshape(pts.shape)
    proj = project_Qr_vector(lambda p: grad_w(p)[..., 0], lambda p: grad_w(p)[..., 1], space)
    d = gw - proj
    M = space.geometric_operators.mr
    err2 = np.einsum("cdi,cij,cdj->c", d, M, d)
    res = float(np.sqrt(np.maximum(err2, 0.0).max()))
    if relative:
        norm = np.sqrt(np.dot(space.quadrature.cell_weights, (g**2).sum(axis=1)))
        res /= max(norm, np.finfo(float).tiny)
    return res
