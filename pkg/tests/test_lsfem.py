import numpy as np
import pytest
import scipy.sparse as sp

from wgls.convergence import make_problem
from wgls.lsfem import (CoefficientField, ConfigurationError, SolverError, apply_inflow_bc, assemble,
                        conjugate_gradient, energy_norm_direct, error_norms, solve, verify_error_equation)
from wgls.polymesh import PolyMesh, generate_nonconvex_polygonal, generate_triangular
from wgls.weakcalc import WeakFunction, WeakSpace, project_Qh

MESHES = {"tri": lambda lv: generate_triangular(lv), "poly": lambda lv: generate_nonconvex_polygonal(lv)}


def sin_u(p):
    return np.sin(p[..., 0]) * np.sin(p[..., 1])


def lam_coeffs(lam=1.0):
    return make_problem("sin", lam).coefficients()


@pytest.fixture(scope="module")
def tri3_system():
    return apply_inflow_bc(assemble(WeakSpace(generate_triangular(3), 1), lam_coeffs()))


@pytest.mark.parametrize("mesh", MESHES)
@pytest.mark.parametrize("k", [1, 2])
def test_symmetric_and_spd(mesh, k):
    system = apply_inflow_bc(assemble(WeakSpace(MESHES[mesh](2), k), lam_coeffs()))
    A = system.matrix
    assert abs(A - A.T).max() <= 1e-13 * abs(A).max()
    Af = system.free_matrix.toarray()
    np.linalg.cholesky(Af)
    assert np.linalg.eigvalsh(Af)[0] > 0


def test_unset_coefficients():
    space = WeakSpace(generate_triangular(1), 1)
    with pytest.raises(ConfigurationError):
        assemble(space, CoefficientField(None))
    with pytest.raises(ConfigurationError):
        assemble(space, None)


@pytest.mark.parametrize("mesh", MESHES)
def test_energy_identity(mesh):
    system = assemble(WeakSpace(MESHES[mesh](2), 2), lam_coeffs())
    rng = np.random.default_rng(7)
    for _ in range(5):
        x = rng.standard_normal(system.space.n_dofs)
        quad = x @ (system.ls_matrix @ x)
        direct = energy_norm_direct(system, WeakFunction(system.space, x)) ** 2
        assert quad == pytest.approx(direct, rel=1e-12)


def test_norm_on_test_space():
    system = apply_inflow_bc(assemble(WeakSpace(generate_triangular(2), 1), lam_coeffs()))
    rng = np.random.default_rng(0)
    A = system.free_matrix
    for _ in range(50):
        x = rng.standard_normal(system.n_free)
        assert x @ (A @ x) > 0


def test_stabilizer_kernel_single_square():
    m = PolyMesh(np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float), [[0, 1, 2, 3]])
    space = WeakSpace(m, 1, 2)
    system = assemble(space, CoefficientField((1.0, 1.0), 0.0, 0.0))
    const = project_Qh(1.0, space).coefficients
    assert np.abs(system.stab_matrix @ const).max() <= 1e-14
    # hand oracle: v0 = 1, vb = 0 gives h^-1 * perimeter with h = 2 sqrt(2)
    v = space.zero()
    v.interior[0, 0] = 1.0
    assert v.coefficients @ (system.stab_matrix @ v.coefficients) == pytest.approx(8 / (2 * np.sqrt(2)), rel=1e-14)


@pytest.mark.parametrize("mesh", MESHES)
def test_stabilizer_vanishes_on_conforming_interpolants(mesh):
    space = WeakSpace(MESHES[mesh](2), 2)
    S = assemble(space, CoefficientField((1.0, 1.0))).stab_matrix
    poly = project_Qh(lambda p: p[..., 0] ** 2 - 3 * p[..., 0] * p[..., 1] + 1, space).coefficients
    assert poly @ (S @ poly) <= 1e-13
    smooth = project_Qh(sin_u, space).coefficients
    assert smooth @ (S @ smooth) > 1e-10


@pytest.mark.parametrize("k", [1, 2, 3])
def test_zero_data_gives_zero_solution(k):
    system = apply_inflow_bc(assemble(WeakSpace(generate_nonconvex_polygonal(2), k),
                                      CoefficientField((1.0, 1.0), lambda p: p[..., 0] * p[..., 1], 0.0, 0.0)))
    assert np.all(system.free_rhs == 0.0)
    for method in ("cg", "cholesky"):
        assert np.abs(solve(system, method).u_h.coefficients).max() <= 1e-12


def test_g_zero_leaves_rhs_unchanged(tri3_system):
    system = apply_inflow_bc(assemble(tri3_system.space, CoefficientField((1.0, 1.0), 1.0, 1.0, 0.0)))
    assert np.all(system.constrained_values == 0.0)
    np.testing.assert_array_equal(system.free_rhs, system.rhs[system.free_dofs])


def test_constrained_dofs_are_inflow_facets(tri3_system):
    s = tri3_system
    assert len(s.constrained_dofs) == len(s.boundary.inflow) * s.space.nb
    assert len(np.intersect1d(s.constrained_dofs, s.free_dofs)) == 0
    assert len(s.constrained_dofs) + s.n_free == s.space.n_dofs


@pytest.mark.parametrize("k", [3, 4])
def test_inflow_values_match_analytic_edge_fit(k):
    m = generate_triangular(4)
    space = WeakSpace(m, k)
    system = apply_inflow_bc(assemble(space, CoefficientField((1.0, 1.0), 0.0, 0.0, sin_u)))
    vals = system.constrained_values.reshape(-1, space.nb)
    for f, coef in zip(system.boundary.inflow[:3], vals[:3]):
        a, b = m.vertices[m.facets[f]]
        fb = space.facet_basis(f)

        def trace(s):
            return sin_u(a + 0.5 * (np.asarray(s)[:, None] + 1) * (b - a))

        # s runs from vertex a to vertex b when a has the lower id, which facets store first
        M = np.array([[2.0 / (i + j + 1) if (i + j) % 2 == 0 else 0.0 for j in range(k + 1)] for i in range(k + 1)])
        t, w = np.polynomial.legendre.leggauss(40)
        rhs = np.array([np.dot(w, trace(t) * t**i) for i in range(k + 1)])
        np.testing.assert_allclose(coef, np.linalg.solve(M, rhs), atol=1e-13)
        assert np.allclose(fb.arc_coordinate(np.array([a, b])), [-1, 1])


def test_rotational_beta_has_no_inflow_and_is_singular():
    # constants lie in the kernel: zero weak gradient, c = 0, no facet jumps, no inflow constraint
    v = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
    m = PolyMesh(v, [[0, 1, 2, 3]])
    rot = lambda p: np.stack([-p[..., 1], p[..., 0]], axis=-1)  # noqa: E731
    system = apply_inflow_bc(assemble(WeakSpace(m, 1), CoefficientField(rot, 0.0, 1.0, 0.0)))
    assert len(system.boundary.inflow) == 0
    assert system.n_free == system.space.n_dofs
    with pytest.raises(SolverError):
        solve(system, "cholesky")


def test_identity_and_two_by_two():
    b = np.array([1.0, -2.0, 3.0])
    x, its, res, _ = conjugate_gradient(sp.identity(3, format="csr"), b)
    np.testing.assert_allclose(x, b)
    x, _, _, _ = conjugate_gradient(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0]))
    np.testing.assert_allclose(x, [1.0, 1.0], rtol=1e-14)


def test_cg_reports_non_spd():
    with pytest.raises(SolverError):
        conjugate_gradient(sp.csr_matrix([[1.0, 0.0], [0.0, -1.0]]), np.array([1.0, 1.0]))


def test_cg_and_cholesky_agree(tri3_system):
    cg = solve(tri3_system, "cg")
    ch = solve(tri3_system, "cholesky")
    assert cg.residual <= 1e-12
    d = cg.u_h.coefficients - ch.u_h.coefficients
    A = tri3_system.matrix
    x = ch.u_h.coefficients
    assert np.sqrt(d @ (A @ d)) <= 1e-9 * np.sqrt(x @ (A @ x))


def test_perfect_solution_has_zero_error(tri3_system):
    e = error_norms(tri3_system, project_Qh(sin_u, tri3_system.space), sin_u)
    assert max(e.as_tuple()) <= 1e-12


@pytest.mark.parametrize("mesh", MESHES)
@pytest.mark.parametrize("k", [1, 2])
def test_patch_linear(mesh, k):
    u = lambda p: p[..., 0] + p[..., 1]  # noqa: E731
    system = apply_inflow_bc(assemble(WeakSpace(MESHES[mesh](2), k), CoefficientField((1.0, 1.0), 0.0, 2.0, u)))
    sol = solve(system, "cholesky")
    assert max(error_norms(system, sol, u).as_tuple()) <= 1e-10
    assert verify_error_equation(system, sol, u) <= 1e-10


def test_error_equation_sin_k2():
    # transcendental u: r = k and high quadrature exactness keep the quadrature error below the tolerance
    u = sin_u

    def f(p):
        x, y = p[..., 0], p[..., 1]
        return np.cos(x) * np.sin(y) + np.sin(x) * np.cos(y) + sin_u(p)

    space = WeakSpace(generate_triangular(3), 2, 2, cell_degree=16, facet_degree=16)
    system = apply_inflow_bc(assemble(space, CoefficientField((1.0, 1.0), 1.0, f, u)))
    sol = solve(system, "cholesky")
    scale = max(1.0, np.abs(system.rhs).max())
    assert verify_error_equation(system, sol, u) <= 1e-9 * scale


def test_k1_energy_error_halves():
    prob = make_problem("sin", 1.0)
    errs = []
    for level in (4, 5):
        system = apply_inflow_bc(assemble(WeakSpace(generate_triangular(level), 1), prob.coefficients()))
        errs.append(error_norms(system, solve(system, "cholesky"), prob.u).energy)
    assert np.log2(errs[0] / errs[1]) == pytest.approx(1.0, abs=0.2)
