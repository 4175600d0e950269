"""Least-squares weak Galerkin discretization of ``beta . grad u + c u = f``.

The discrete problem reads: find ``u_h`` with ``u_b = Q_b g`` on inflow facets
such that ``a(u_h, v) + s(u_h, v) = (f, beta . grad_w v + c v_0)`` for all ``v``
vanishing on inflow facets, where ``a`` is the elementwise L2 product of the
residuals ``beta . grad_w u + c u_0`` and ``s`` the facet penalty
``h_T^{-1} <u_0 - u_b, v_0 - v_b>``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernels import LocalOperators
from .polymesh import BoundaryClassification, as_vector_field, classify_boundary
from .weakcalc import WeakFunction, WeakSpace, _evaluate, project_Qb, project_Qh

__all__ = [
    "ConfigurationError",
    "SolverError",
    "CoefficientField",
    "LinearSystem",
    "Solution",
    "ErrorReport",
    "assemble",
    "apply_inflow_bc",
    "solve",
    "conjugate_gradient",
    "error_norms",
    "energy_norm_direct",
    "verify_error_equation",
    "DENSE_LIMIT",
]

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000
# relative pivot size below which a factorization is treated as singular
PIVOT_RTOL = 1e-12


class ConfigurationError(ValueError):
    pass


class SolverError(RuntimeError):
    """The free-dof system is not SPD or the iteration did not converge."""

    def __init__(self, message: str, trace: Optional[list] = None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class CoefficientField:
    """Problem data.  ``beta`` is a constant 2-vector or a callable returning (..., 2);
    scalar fields are constants or callables of points (..., 2)."""

    beta: object
    c: object = 0.0
    f: object = 0.0
    g: object = 0.0

    def beta_field(self) -> Callable:
        if self.beta is None:
            raise ConfigurationError("convection field beta is not set")
        return as_vector_field(self.beta)


@dataclass
class LinearSystem:
    space: WeakSpace
    coeffs: CoefficientField
    ops: LocalOperators = field(repr=False)
    matrix: sp.csr_matrix = field(repr=False)
    ls_matrix: sp.csr_matrix = field(repr=False)
    stab_matrix: sp.csr_matrix = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    free_dofs: np.ndarray = field(repr=False)
    constrained_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)
    constrained_values: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    boundary: Optional[BoundaryClassification] = None
    free_matrix: Optional[sp.csr_matrix] = field(default=None, repr=False)
    free_rhs: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_free(self) -> int:
        return len(self.free_dofs)

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        """Full coefficient vector from free values plus the constrained values."""
        out = np.zeros(self.space.n_dofs)
        out[self.free_dofs] = x_free
        out[self.constrained_dofs] = self.constrained_values
        return out


@dataclass
class Solution:
    u_h: WeakFunction
    iterations: int
    residual: float
    method: str
    trace: list = field(default_factory=list, repr=False)
    seconds: float = 0.0


@dataclass(frozen=True)
class ErrorReport:
    l2_interior: float
    weak_grad: float
    energy: float

    def as_tuple(self) -> tuple[float, float, float]:
        return self.l2_interior, self.weak_grad, self.energy


# ----------------------------------------------------------------------
def _scatter(space: WeakSpace, ops: LocalOperators, flat: np.ndarray) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for n in np.unique(ops.nloc):
        ids = np.flatnonzero(ops.nloc == n)
        dofs = space.local_dofs_flat[space.loc_ptr[ids][:, None] + np.arange(n)]
        rows.append(np.repeat(dofs, n, axis=1).ravel())
        cols.append(np.tile(dofs, (1, n)).ravel())
        vals.append(flat[ops.blk_ptr[ids][:, None] + np.arange(n * n)].ravel())
    N = space.n_dofs
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return A.tocsr()


def assemble(space: WeakSpace, coeffs: CoefficientField, stab_weight: float = 1.0) -> LinearSystem:
    """Assemble the full (unconstrained) least-squares system."""
    if coeffs is None:
        raise ConfigurationError("coefficient field is not set")
    beta = coeffs.beta_field()
    ops = space.local_operators(beta, coeffs.c, coeffs.f, stab_weight=stab_weight)
    A_ls = _scatter(space, ops, ops.ls)
    A_s = _scatter(space, ops, ops.stab)
    rhs = np.zeros(space.n_dofs)
    np.add.at(rhs, space.local_dofs_flat, ops.rhs)
    return LinearSystem(space, coeffs, ops, (A_ls + A_s).tocsr(), A_ls, A_s, rhs,
                        free_dofs=np.arange(space.n_dofs))


def apply_inflow_bc(system: LinearSystem, space: WeakSpace | None = None,
                    coeffs: CoefficientField | None = None) -> LinearSystem:
    """Constrain inflow facet dofs to ``Q_b g`` and eliminate them symmetrically."""
    space = system.space if space is None else space
    coeffs = system.coeffs if coeffs is None else coeffs
    bc = classify_boundary(space.mesh, coeffs.beta_field())
    inflow = bc.inflow
    cdofs = space.facet_dofs(inflow) if len(inflow) else np.zeros(0, dtype=np.int64)
    cvals = project_Qb(coeffs.g, space, inflow).ravel() if len(inflow) else np.zeros(0)
    mask = np.ones(space.n_dofs, dtype=bool)
    mask[cdofs] = False
    free = np.flatnonzero(mask)
    A = system.matrix
    A_free = A[free][:, free].tocsr()
    b_free = system.rhs[free] - A[free][:, cdofs] @ cvals if len(cdofs) else system.rhs[free].copy()
    return replace(system, free_dofs=free, constrained_dofs=cdofs, constrained_values=cvals, boundary=bc,
                   free_matrix=A_free, free_rhs=b_free)


# ----------------------------------------------------------------------
def conjugate_gradient(A, b: np.ndarray, tol: float = 1e-12, maxiter: int | None = None,
                       x0: np.ndarray | None = None, max_restarts: int = 5):
    """Jacobi-preconditioned conjugate gradients.

    Convergence is declared on the true relative residual ``||b - A x|| / ||b||``;
    when the recursive residual converges early the iteration restarts from the
    true residual.  Returns ``(x, iterations, relative_residual, trace)``.
    """
    n = len(b)
    maxiter = 20 * n if maxiter is None else maxiter
    d = A.diagonal().copy()
    if np.any(d <= 0):
        raise SolverError("matrix has non-positive diagonal entries (not SPD)")
    dinv = 1.0 / d
    bnorm = float(np.sqrt(np.dot(b, b)))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    trace: list[float] = []
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0, trace
    it = 0
    for _ in range(max_restarts + 1):
        r = b - A @ x
        res = float(np.sqrt(np.dot(r, r))) / bnorm
        if res <= tol:
            return x, it, res, trace
        z = dinv * r
        p = z.copy()
        rz = float(np.dot(r, z))
        while it < maxiter:
            Ap = A @ p
            pAp = float(np.dot(p, Ap))
            if not pAp > 0.0:
                raise SolverError(f"non-positive curvature p.Ap = {pAp:.3e} at iteration {it} (not SPD)", trace)
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            res = float(np.sqrt(np.dot(r, r))) / bnorm
            trace.append(res)
            if res <= tol:
                break
            z = dinv * r
            rz_new = float(np.dot(r, z))
            p *= rz_new / rz
            p += z
            rz = rz_new
        if it >= maxiter:
            break
    r = b - A @ x
    res = float(np.sqrt(np.dot(r, r))) / bnorm
    if res <= tol:
        return x, it, res, trace
    raise SolverError(f"CG did not reach relative residual {tol:g} in {it} iterations "
                      f"(final {res:.3e}); system may be singular or ill-conditioned", trace)


def _check_pivots(piv: np.ndarray) -> None:
    a = np.abs(piv)
    if a.min() <= PIVOT_RTOL * a.max():
        raise SolverError(f"matrix is numerically singular (pivot ratio {a.min() / a.max():.2e}); "
                          "the problem may lack a unique solution")


def solve(system: LinearSystem, method: str = "cg", tol: float = 1e-12, maxiter: int | None = None) -> Solution:
    """Solve the free-dof system.

    ``method="cg"``: Jacobi-preconditioned CG.  ``method="cholesky"``: dense
    Cholesky when ``n_free <= DENSE_LIMIT``, otherwise a sparse direct LU.
    """
    if system.free_matrix is None:
        system = apply_inflow_bc(system)
    A, b = system.free_matrix, system.free_rhs
    n = len(b)
    if n == 0:
        raise SolverError("free system is empty")
    t0 = time.perf_counter()
    trace: list = []
    if method == "cg":
        x, its, res, trace = conjugate_gradient(A, b, tol=tol, maxiter=maxiter)
    elif method == "cholesky":
        its = 0
        if n <= DENSE_LIMIT:
            try:
                fac = sla.cho_factor(A.toarray(), lower=True)
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"Cholesky factorization failed (not SPD): {exc}") from exc
            _check_pivots(np.diag(fac[0]) ** 2)
            x = sla.cho_solve(fac, b)
        else:
            try:
                lu = spla.splu(A.tocsc())
            except RuntimeError as exc:
                raise SolverError(f"sparse factorization failed (singular): {exc}") from exc
            _check_pivots(lu.U.diagonal())
            x = lu.solve(b)
        bn = np.linalg.norm(b)
        res = float(np.linalg.norm(b - A @ x) / bn) if bn > 0 else 0.0
    else:
        raise ValueError(f"unknown solver {method!r}")
    if not np.all(np.isfinite(x)):
        raise SolverError("solution contains non-finite values", trace)
    u = WeakFunction(system.space, system.expand(x))
    return Solution(u, its, res, method, trace, time.perf_counter() - t0)


# ----------------------------------------------------------------------
def _block_quadratic(space: WeakSpace, ops: LocalOperators, flat: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-cell ``x_T^T B_T x_T`` for the flat block array ``flat``."""
    out = np.empty(space.mesh.n_cells)
    for n in np.unique(ops.nloc):
        ids = np.flatnonzero(ops.nloc == n)
        B = flat[ops.blk_ptr[ids][:, None] + np.arange(n * n)].reshape(len(ids), n, n)
        loc = x[space.local_dofs_flat[space.loc_ptr[ids][:, None] + np.arange(n)]]
        out[ids] = np.einsum("ci,cij,cj->c", loc, B, loc)
    return out


def error_norms(system: LinearSystem, solution: Solution | WeakFunction, u) -> ErrorReport:
    """Errors of ``Q_h u - u_h`` in the interior L2 norm, the weak-gradient L2 norm
    and the energy semi-norm ``sqrt(a(e, e))``."""
    space, ops = system.space, system.ops
    uh = solution.u_h if isinstance(solution, Solution) else solution
    e = project_Qh(u, space) - uh
    e0 = e.interior
    l2 = np.einsum("ci,cij,cj->", e0, ops.mk, e0)
    ge = e.weak_gradient(ops)
    wg = np.einsum("cdi,cij,cdj->", ge, ops.mr, ge)
    en = _block_quadratic(space, ops, ops.ls, e.coefficients).sum()
    return ErrorReport(float(np.sqrt(max(l2, 0.0))), float(np.sqrt(max(wg, 0.0))), float(np.sqrt(max(en, 0.0))))


def energy_norm_direct(system: LinearSystem, v: WeakFunction) -> float:
    """``sqrt(a(v, v))`` evaluated pointwise at the cell quadrature points.

    Independent of the assembled least-squares blocks: it applies the weak
    gradient coefficients and the coefficient fields directly.
    """
    space = system.space
    q = space.quadrature
    pts = q.cell_points
    owner = space.quad_owner
    V = space.cell_basis_values
    gv = v.weak_gradient(system.ops)[owner]  # (nq, 2, nr)
    gx = np.einsum("qi,qi->q", V[:, :space.nr], gv[:, 0])
    gy = np.einsum("qi,qi->q", V[:, :space.nr], gv[:, 1])
    v0 = np.einsum("qi,qi->q", V[:, :space.nk], v.interior[owner])
    beta = np.asarray(system.coeffs.beta_field()(pts), dtype=float).reshape(pts.shape)
    cval = _evaluate(system.coeffs.c, pts)
    res = beta[:, 0] * gx + beta[:, 1] * gy + cval * v0
    return float(np.sqrt(np.dot(q.cell_weights, res * res)))


def verify_error_equation(system: LinearSystem, solution: Solution, u) -> float:
    """``max_v |a(e_h, v) + s(e_h, v) + s(Q_h u, v)|`` over free test basis functions,
    with ``e_h = u_h - Q_h u``."""
    if system.free_matrix is None:
        system = apply_inflow_bc(system)
    Qhu = project_Qh(u, system.space).coefficients
    e = solution.u_h.coefficients - Qhu
    r = system.matrix @ e + system.stab_matrix @ Qhu
    return float(np.abs(r[system.free_dofs]).max()) if system.n_free else 0.0
