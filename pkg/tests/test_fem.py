import numpy as np
import pytest
from scipy import integrate

from chpenalty.fem import (
    P1Function,
    assemble_lumped_mass,
    assemble_mass,
    assemble_stiffness,
    h1_norm,
    integrate_excess,
    interpolate,
    l1_norm,
    linf_norm,
)
from chpenalty.mesh import Mesh, geometry, refine, unit_square_mesh

from oracles import dense_operators, triangle_quad

REF = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))


def test_reference_mass():
    M = assemble_mass(REF).toarray()
    assert np.allclose(M, np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24, atol=1e-16)


def test_reference_stiffness():
    K = assemble_stiffness(REF).toarray()
    assert np.allclose(K, np.array([[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]]), atol=1e-15)


@pytest.mark.parametrize("n0", [1, 3, 8])
def test_mass_moments(n0):
    m = unit_square_mesh(n0)
    M = assemble_mass(m)
    one = np.ones(m.num_vertices)
    x = m.vertices[:, 0]
    assert one @ M @ one == pytest.approx(1.0, abs=1e-13)
    assert one @ M @ x == pytest.approx(0.5, abs=1e-13)
    assert x @ M @ x == pytest.approx(1 / 3, abs=1e-13)
    assert abs(M - M.T).max() == 0


@pytest.mark.parametrize("n0", [1, 3, 8])
def test_stiffness_kernel_and_energy(n0):
    m = unit_square_mesh(n0)
    K = assemble_stiffness(m)
    x = m.vertices[:, 0]
    assert np.abs(K @ np.ones(m.num_vertices)).max() <= 1e-13
    assert x @ K @ x == pytest.approx(1.0, abs=1e-13)
    assert abs(K - K.T).max() <= 1e-15


def test_mass_positive_definite():
    m, _ = refine(unit_square_mesh(2), [0, 3])
    assert np.linalg.eigvalsh(assemble_mass(m).toarray()).min() > 0


def test_matches_loop_assembly():
    m, _ = refine(unit_square_mesh(3), [1, 4, 9])
    Md, Kd = dense_operators(m)
    assert np.abs(assemble_mass(m).toarray() - Md).max() <= 1e-15
    assert np.abs(assemble_stiffness(m).toarray() - Kd).max() <= 1e-13


def test_lumped_mass():
    m = unit_square_mesh(1)
    d = assemble_lumped_mass(m)
    corner = np.flatnonzero(np.all(m.vertices == [1.0, 0.0], axis=1))[0]
    assert d[corner] == pytest.approx(1 / 6, abs=1e-16)
    m, _ = refine(unit_square_mesh(4), [2, 7, 11])
    d = assemble_lumped_mass(m)
    assert d.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(d, np.asarray(assemble_mass(m).sum(axis=1)).ravel(), atol=1e-15)


def test_assembly_deterministic():
    m, _ = refine(unit_square_mesh(4), [0, 5, 9])
    for f in (assemble_mass, assemble_stiffness):
        a, b = f(m), f(m)
        assert np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.data, b.data)


def test_mesh_scaling():
    K2, K4 = assemble_stiffness(unit_square_mesh(2)), assemble_stiffness(unit_square_mesh(4))
    M2, M4 = assemble_mass(unit_square_mesh(2)), assemble_mass(unit_square_mesh(4))
    assert abs(K2).max() == pytest.approx(abs(K4).max())
    assert abs(M2).max() == pytest.approx(4 * abs(M4).max())


def test_p1function_validation():
    m = unit_square_mesh(1)
    with pytest.raises(ValueError):
        P1Function(m, np.zeros(3))
    with pytest.raises(ValueError):
        P1Function(m, np.array([0, 0, np.nan, 0]))
    f = P1Function(m, np.arange(4.0))
    with pytest.raises(ValueError):
        f.values[0] = 1.0
    assert np.array_equal((-f).values, -np.arange(4.0))


def test_norms_of_constants():
    m = unit_square_mesh(3)
    f = interpolate(m, lambda x, y: -2.0)
    assert l1_norm(f) == pytest.approx(2.0, abs=1e-14)
    assert linf_norm(f) == 2.0
    assert h1_norm(f) == pytest.approx(2.0, abs=1e-13)
    z = interpolate(m, lambda x, y: 0.0 * x)
    assert l1_norm(z) == 0.0 and linf_norm(z) == 0.0


def test_l1_of_kinked_function():
    m = unit_square_mesh(3)  # x = 1/2 cuts cells
    f = interpolate(m, lambda x, y: x - 0.5)
    ref = integrate.dblquad(lambda y, x: abs(x - 0.5), 0, 1, 0, 1, epsabs=1e-14)[0]
    assert l1_norm(f) == pytest.approx(ref, abs=1e-13)
    assert l1_norm(f) == pytest.approx(0.25, abs=1e-14)


def test_integrate_excess_against_quadrature():
    rng = np.random.default_rng(3)
    m, _ = refine(unit_square_mesh(2), [1, 6])
    vals = rng.uniform(-2, 2, m.num_vertices)
    got = integrate_excess(m, vals, 0.7)
    ref = 0.0
    for c in m.cells:
        P = m.vertices[c]
        A = np.column_stack([np.ones(3), P])
        coef = np.linalg.solve(A, vals[c])
        g = lambda x, y: max(coef[0] + coef[1] * x + coef[2] * y - 0.7, 0.0)
        ref += triangle_quad(g, P, kinks=[(coef[0] - 0.7, coef[1], coef[2])])
    assert got == pytest.approx(ref, rel=1e-11)


def _h1_error(mesh, uh, grad_u):
    # edge-midpoint rule, exact for quadratics
    area, grads, _, _ = geometry(mesh)
    gh = np.einsum("cj,cjd->cd", uh[mesh.cells], grads)
    P = mesh.vertices[mesh.cells]
    err = 0.0
    for a, b in ((0, 1), (1, 2), (2, 0)):
        q = 0.5 * (P[:, a] + P[:, b])
        err += np.sum(area / 3 * np.sum((grad_u(q[:, 0], q[:, 1]) - gh) ** 2, axis=1))
    return np.sqrt(err)


def test_neumann_poisson_convergence():
    u = lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y)
    grad_u = lambda x, y: np.column_stack([-np.pi * np.sin(np.pi * x) * np.cos(np.pi * y),
                                           -np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)])
    errs = []
    for n0 in (8, 16, 32):
        m = unit_square_mesh(n0)
        M, K, d = assemble_mass(m), assemble_stiffness(m), assemble_lumped_mass(m)
        g = 2 * np.pi ** 2 * interpolate(m, u).values
        b = M @ g
        b -= b.sum() * d  # zero-mean load
        uh = np.linalg.solve(K.toarray() + np.outer(d, d), b)
        errs.append(_h1_error(m, uh, grad_u))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios >= 1.7) & (ratios <= 2.3)), ratios


def test_h1_norm_explicit_operators():
    m = unit_square_mesh(4)
    f = interpolate(m, lambda x, y: x)
    expected = np.sqrt(1 / 3 + 1)
    assert h1_norm(f) == pytest.approx(expected, abs=1e-13)
    assert h1_norm(f, assemble_mass(m), assemble_stiffness(m)) == h1_norm(f)

