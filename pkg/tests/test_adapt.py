import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chpenalty.adapt import MarkParams, NewtonFailure, adaptive_cycle, doerfler_mark, estimate
from chpenalty.chstep import NewtonConfig, StepProblem, initial_phase_field
from chpenalty.fem import P1Function, interpolate
from chpenalty.mesh import unit_square_mesh

from oracles import check_doerfler

EPS, TAU = 0.04, 0.01


def const(mesh, c):
    return P1Function(mesh, np.full(mesh.num_vertices, float(c)))


def test_constants_give_zero():
    m = unit_square_mesh(4)
    assert np.all(estimate(m, const(m, 0.3), const(m, -2.0), EPS, TAU) == 0)


def _cells_on_sides(m, axis):
    v = m.vertices[m.cells][:, :, axis]
    return (np.sum(v == 0, axis=1) == 2) | (np.sum(v == 1, axis=1) == 2)


def test_affine_fields():
    m = unit_square_mesh(4)
    phi = interpolate(m, lambda x, y: 2 * x - y)
    mu = interpolate(m, lambda x, y: 0.5 + x + 3 * y)
    assert np.allclose(estimate(m, phi, mu, EPS, TAU, include_boundary=False), 0, atol=1e-13)
    eta = estimate(m, phi, mu, EPS, TAU)
    on_side = _cells_on_sides(m, 0) | _cells_on_sides(m, 1)
    assert np.all(eta[on_side] > 0) and np.all(eta[~on_side] == 0)
    # the flux of x is tangential on the sides y = 0, 1
    eta = estimate(m, interpolate(m, lambda x, y: x), const(m, 0), EPS, TAU)
    assert np.all((eta > 0) == _cells_on_sides(m, 0))


def test_two_cell_kink():
    m = unit_square_mesh(1)
    corner = np.flatnonzero(np.all(m.vertices == [1.0, 0.0], axis=1))[0]
    v = np.zeros(4)
    v[corner] = 1 / np.sqrt(2)  # unit gradient, normal to the shared diagonal
    phi = P1Function(m, v)
    zero = const(m, 0)
    eta2 = estimate(m, phi, zero, EPS, TAU, include_boundary=False) ** 2
    assert np.allclose(eta2, EPS ** 2, rtol=1e-14)
    eta2 = estimate(m, phi, zero, EPS, TAU) ** 2
    owner = np.flatnonzero(np.any(m.cells == corner, axis=1))[0]
    assert eta2[owner] == pytest.approx(2 * EPS ** 2, rel=1e-14)
    assert eta2[1 - owner] == pytest.approx(EPS ** 2, rel=1e-14)
    # same kink in mu is weighted by tau
    eta2 = estimate(m, zero, phi, EPS, TAU, include_boundary=False) ** 2
    assert np.allclose(eta2, TAU ** 2, rtol=1e-14)


def test_estimator_shrinks_under_refinement():
    f = lambda x, y: np.tanh((np.hypot(x - 0.5, y - 0.5) - 0.25) / 0.1)
    totals = []
    for n0 in (8, 16, 32):
        m = unit_square_mesh(n0)
        eta = estimate(m, interpolate(m, f), interpolate(m, lambda x, y: f(y, x)), EPS, TAU)
        totals.append(np.sqrt(np.sum(eta ** 2)))
    assert totals[0] > totals[1] > totals[2]


def test_doerfler_examples():
    assert list(doerfler_mark(np.sqrt([4, 1, 1, 1, 1]), 0.5)) == [0]
    eta = np.sqrt([3.0, 1.0, 0.0, 2.0, 0.5])
    assert list(doerfler_mark(eta, 0.999999)) == [0, 1, 3, 4]
    for n in (1, 6, 7):
        assert len(doerfler_mark(np.ones(n), 0.5)) == math.ceil(n / 2)
    assert len(doerfler_mark(np.zeros(5), 0.5)) == 0


def test_doerfler_ties_by_index():
    assert list(doerfler_mark(np.ones(4), 0.5)) == [0, 1]
    assert list(doerfler_mark(np.array([1.0, 2.0, 2.0, 1.0]), 0.5)) == [1, 2]


def test_doerfler_theta_validation():
    for theta in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            doerfler_mark(np.ones(3), theta)
        with pytest.raises(ValueError):
            MarkParams(theta)


@settings(max_examples=200, deadline=None)
@given(eta=st.lists(st.floats(0, 10), min_size=1, max_size=60), theta=st.floats(0.01, 0.99))
def test_doerfler_properties(eta, theta):
    assert check_doerfler(np.array(eta), theta)


def test_doerfler_deterministic():
    eta = np.random.default_rng(0).random(500)
    assert np.array_equal(doerfler_mark(eta, 0.4), doerfler_mark(eta.copy(), 0.4))


def test_cycle_with_empty_marking():
    m = unit_square_mesh(4)
    p = StepProblem(EPS, TAU, 1e3, 2, "Lumped", const(m, 0))
    mesh, sol, diag = adaptive_cycle(p, m, cycles=2)
    assert mesh is m
    assert len(diag) == 3 and all(d["marked"] == 0 for d in diag)
    assert sol.converged


def test_generation_cap_blocks_marking():
    m = unit_square_mesh(4)
    p = StepProblem(EPS, TAU, 1e3, 2, "Lumped", initial_phase_field(m, EPS))
    mesh, _, diag = adaptive_cycle(p, m, cycles=1, mark=MarkParams(0.5, max_generation=0))
    assert mesh is m and diag[0]["marked"] == 0


def test_cycles_validation():
    m = unit_square_mesh(2)
    p = StepProblem(EPS, TAU, 1.0, 2, "Lumped", const(m, 0))
    with pytest.raises(ValueError):
        adaptive_cycle(p, m, cycles=0)
    with pytest.raises(ValueError):
        adaptive_cycle(p, unit_square_mesh(2), cycles=1)


def test_newton_failure_carries_cycle():
    m = unit_square_mesh(8)
    p = StepProblem(EPS, TAU, 1e4, 2, "Lumped", initial_phase_field(m, EPS))
    with pytest.raises(NewtonFailure) as info:
        adaptive_cycle(p, m, cycles=2, newton=NewtonConfig(max_iter=0))
    assert info.value.cycle == 0 and info.value.mesh is m
    assert len(info.value.diagnostics) == 1


def _run_sphere():
    m = unit_square_mesh(8)
    prev = lambda mesh: initial_phase_field(mesh, EPS)
    p = StepProblem(EPS, TAU, 1e3, 2, "Lumped", prev(m))
    return adaptive_cycle(p, m, cycles=3, mark=MarkParams(0.5, 8), phi_prev_fn=prev)


@pytest.fixture(scope="module")
def sphere():
    return _run_sphere()


def test_refinement_concentrates_at_interface(sphere):
    mesh, sol, diag = sphere
    assert sol.converged
    assert [d["dofs"] for d in diag] == sorted(d["dofs"] for d in diag)
    r = np.linalg.norm(mesh.vertices[mesh.cells] - 0.5, axis=2)
    lo, hi = 0.25 - np.pi * EPS, 0.25 + np.pi * EPS
    in_band = (r.min(axis=1) <= hi) & (r.max(axis=1) >= lo)
    assert in_band.mean() >= 0.6


def test_cycle_deterministic(sphere):
    mesh, sol, _ = _run_sphere()
    assert np.array_equal(mesh.cells, sphere[0].cells)
    assert np.array_equal(sol.phi.values, sphere[1].phi.values)
