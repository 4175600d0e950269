"""Invariant suites run by ``wgls verify``.

Each suite returns a list of :class:`CheckResult`; a suite passes when every
entry has ``value <= tol``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .lsfem import CoefficientField, apply_inflow_bc, assemble, error_norms, solve, verify_error_equation
from .polymesh import generate_nonconvex_polygonal, generate_triangular
from .weakcalc import WeakSpace, verify_commutativity

__all__ = ["CheckResult", "SUITES", "random_polynomial", "commutativity_suite", "spd_suite", "patch_suite",
           "error_equation_suite", "run_suite"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} (tol {self.tol:.0e})"


def _meshes(tri_level: int = 3, poly_level: int = 2):
    return [("triangular", generate_triangular(tri_level)), ("polygonal", generate_nonconvex_polygonal(poly_level))]


def random_polynomial(degree: int, rng: np.random.Generator):
    """Random polynomial of total degree ``degree`` and its gradient, as callables of (..., 2) points."""
    terms = [(a - b, b) for a in range(degree + 1) for b in range(a + 1)]
    coef = rng.standard_normal(len(terms))

    def w(p):
        x, y = p[..., 0], p[..., 1]
        return sum(c * x**i * y**j for c, (i, j) in zip(coef, terms))

    def grad(p):
        x, y = p[..., 0], p[..., 1]
        gx = sum(c * i * x ** max(i - 1, 0) * y**j for c, (i, j) in zip(coef, terms))
        gy = sum(c * j * x**i * y ** max(j - 1, 0) for c, (i, j) in zip(coef, terms))
        return np.stack([np.broadcast_to(gx, x.shape), np.broadcast_to(gy, x.shape)], axis=-1)

    return w, grad


def commutativity_suite(degrees=(1, 2, 3, 4), seed: int = 0, tol: float = 1e-10) -> list[CheckResult]:
    """``grad_w Q_h w = Q_r grad w`` for random ``w`` in ``P_k``, ``r`` in ``k .. k+2``."""
    rng = np.random.default_rng(seed)
    out = []
    for fam, mesh in _meshes():
        for k in degrees:
            w, g = random_polynomial(k, rng)
            for r in (k, k + 1, k + 2):
                res = verify_commutativity(WeakSpace(mesh, k, r), w, g, relative=True)
                out.append(CheckResult(f"commutativity {fam} k={k} r={r}", res, tol))
    return out


def _problem_coeffs(lam: float = 1.0) -> CoefficientField:
    return CoefficientField((1.0, 1.0), lambda p: lam * (p[..., 0] - 0.5) * (p[..., 1] - 0.5))


def spd_suite(degrees=(1, 2), levels=(1, 2, 3), tol: float = 1e-13) -> list[CheckResult]:
    """Symmetry of the full matrix and definiteness of the free block (dense Cholesky and eigenvalues).

    Definiteness is reported as ``-lambda_min / lambda_max`` so that a pass means a positive spectrum.
    """
    out = []
    for fam, gen in (("triangular", generate_triangular), ("polygonal", generate_nonconvex_polygonal)):
        for level in levels:
            mesh = gen(level)
            for k in degrees:
                system = apply_inflow_bc(assemble(WeakSpace(mesh, k), _problem_coeffs()))
                A = system.matrix
                sym = abs(A - A.T).max() / abs(A).max()
                out.append(CheckResult(f"symmetry {fam} level={level} k={k}", float(sym), tol))
                Af = system.free_matrix.toarray()
                try:
                    sla.cholesky(Af, lower=True)
                    ok = 0.0
                except np.linalg.LinAlgError:
                    ok = np.inf
                out.append(CheckResult(f"cholesky {fam} level={level} k={k}", ok, 0.0))
                ev = np.linalg.eigvalsh(Af)
                out.append(CheckResult(f"min eigenvalue {fam} level={level} k={k}", float(-ev[0] / ev[-1]), 0.0))
    return out


_PATCH = {
    "linear": (lambda p: p[..., 0] + p[..., 1], lambda p: np.full(p.shape[:-1], 2.0), 1),
    "quadratic": (lambda p: p[..., 0] ** 2 - p[..., 1], lambda p: 2 * p[..., 0] - 1.0, 2),
}


def patch_suite(degrees=(1, 2, 3), levels=(1, 2), tol: float = 1e-9) -> list[CheckResult]:
    """Global polynomials of degree ``<= k`` with ``c = 0`` are reproduced exactly."""
    out = []
    for fam, gen in (("triangular", generate_triangular), ("polygonal", generate_nonconvex_polygonal)):
        for level in levels:
            mesh = gen(level)
            for name, (u, f, kmin) in _PATCH.items():
                for k in degrees:
                    if k < kmin:
                        continue
                    system = apply_inflow_bc(assemble(WeakSpace(mesh, k), CoefficientField((1.0, 1.0), 0.0, f, u)))
                    err = error_norms(system, solve(system, "cholesky"), u)
                    out.append(CheckResult(f"patch {name} {fam} level={level} k={k}", max(err.as_tuple()), tol))
    return out


def _quadrant(p: np.ndarray) -> np.ndarray:
    return (p[..., 0] > 0).astype(int) + 2 * (p[..., 1] > 0).astype(int)


def error_equation_suite(degrees=(1, 2), draws: int = 20, level: int = 2, seed: int = 0,
                         tol: float = 1e-9) -> list[CheckResult]:
    """Error-equation residual for random ``beta``, ``c`` constant on each quadrant.

    The quadrant lines are mesh lines, so the coefficients are constant per cell.
    The identity is exact up to quadrature error for a transcendental ``u``, so
    the space uses ``r = k`` and quadrature of exactness ``2k + 12``.  The value
    is the residual divided by the problem scale ``max(1, ||rhs||_inf)``.
    """
    rng = np.random.default_rng(seed)
    mesh = generate_triangular(level)

    def u(p):
        return np.sin(p[..., 0]) * np.sin(p[..., 1])

    out = []
    for k in degrees:
        q = 2 * k + 12
        space = WeakSpace(mesh, k, k, cell_degree=q, facet_degree=q)
        for i in range(draws):
            B = rng.uniform(-2, 2, size=(4, 2))
            small = np.abs(B).max(axis=1) < 0.1
            B[small] += 0.5
            C = rng.uniform(-2, 2, size=4)

            def beta(p, B=B):
                return B[_quadrant(p)]

            def c(p, C=C):
                return C[_quadrant(p)]

            def f(p, B=B, C=C):
                x, y = p[..., 0], p[..., 1]
                b = B[_quadrant(p)]
                return b[..., 0] * np.cos(x) * np.sin(y) + b[..., 1] * np.sin(x) * np.cos(y) + C[_quadrant(p)] * u(p)

            system = apply_inflow_bc(assemble(space, CoefficientField(beta, c, f, u)))
            sol = solve(system, "cholesky")
            scale = max(1.0, float(np.abs(system.rhs).max()))
            res = verify_error_equation(system, sol, u) / scale
            out.append(CheckResult(f"error equation k={k} draw={i}", res, tol))
    return out


SUITES = {
    "commutativity": commutativity_suite,
    "spd": spd_suite,
    "patch": patch_suite,
    "error-equation": error_equation_suite,
}


def run_suite(name: str, degree: int | None = None) -> list[CheckResult]:
    """Run one suite (or ``"all"``), optionally restricted to a single degree."""
    names = list(SUITES) if name == "all" else [name]
    out = []
    for n in names:
        fn = SUITES[n]
        out += fn() if degree is None else fn(degrees=(degree,))
    return out
