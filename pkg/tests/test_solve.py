import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from hpdpg.app.verify import mesh_oracle_checks
from hpdpg.mesh import Mesh, RefFlag, refine_with_closure
from hpdpg.problems import make_problem
from hpdpg.solve import (DofMap, SolverError, StaleDofMapError, assemble_global,
                         relative_error, solve_mesh, solve_spd)


def test_solve_spd_examples():
    b = np.arange(1.0, 6.0)
    assert np.allclose(solve_spd(sp.eye(5), b), b)
    rng = np.random.default_rng(1)
    A = rng.normal(size=(50, 50))
    A = A @ A.T + 50 * np.eye(50)
    b = rng.normal(size=50)
    x = solve_spd(sp.csr_matrix(A), b)
    assert np.max(np.abs(x - np.linalg.solve(A, b))) < 1e-9 * np.max(np.abs(x))
    S = np.ones((3, 3))
    with pytest.raises(SolverError):
        solve_spd(sp.csr_matrix(S), np.array([1.0, 2.0, 3.0]))


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
@pytest.mark.parametrize("condense", [True, False])
def test_polynomial_exactness(degree, condense):
    prob = make_problem("poly_sanity", degree=degree, p_max=4)
    mesh = Mesh.box_grid((2, 1, 1), order=prob.initial_order, p_max=4)
    refine_with_closure(mesh, [(mesh.leaves[0], RefFlag.H4_YZ)])
    sol = solve_mesh(mesh, prob, condense_interior=condense)
    assert relative_error(sol, prob) < 1e-10
    assert sol.eta_total < 1e-8


def test_condensation_reproduces_full_system():
    prob = make_problem("boundary_layer", eps=0.2)
    mesh = prob.initial_mesh()
    refine_with_closure(mesh, [(mesh.leaves[3], RefFlag.H2_X)])
    a = solve_mesh(mesh, prob, condense_interior=True)
    b = solve_mesh(mesh, prob, condense_interior=False)
    scale = max(np.max(np.abs(f)) for f in b.fields.values())
    for e in a.fields:
        assert np.max(np.abs(a.fields[e] - b.fields[e])) < 1e-11 * scale
    for e in a.eta:
        assert abs(a.eta[e] - b.eta[e]) < 1e-9 * max(b.eta.values())


def test_mesh_level_dense_oracle():
    for c in mesh_oracle_checks(np.random.default_rng(5), 1e-11):
        assert c.passed, c.detail


def test_stale_dofmap():
    prob = make_problem("poly_sanity", degree=1)
    mesh = prob.initial_mesh()
    dm = DofMap(mesh, prob)
    mesh.set_order(mesh.leaves[0], (1, 1, 1))
    with pytest.raises(StaleDofMapError):
        assemble_global(dm)


def test_zero_data_zero_solution():
    prob = make_problem("poly_sanity", degree=0)
    zero = dataclasses.replace(prob, source=lambda X: np.zeros(len(X)),
                               u_dirichlet=lambda X: np.zeros(len(X)),
                               flux_neumann=lambda X, n: np.zeros(len(X)))
    sol = solve_mesh(zero.initial_mesh(), zero)
    assert all(not f.any() for f in sol.fields.values())


@given(st.floats(0.1, 10.0))
def test_linear_scaling(c):
    prob = make_problem("boundary_layer", eps=0.3)
    mesh = prob.initial_mesh()
    scaled = dataclasses.replace(
        prob, source=lambda X: c * prob.source(X), u_dirichlet=lambda X: c * prob.u_dirichlet(X),
        flux_neumann=lambda X, n: c * prob.flux_neumann(X, n))
    a = solve_mesh(mesh, prob)
    b = solve_mesh(mesh, scaled)
    for e in a.fields:
        assert np.allclose(b.fields[e], c * a.fields[e], rtol=1e-9, atol=1e-12)
    assert abs(b.eta_total ** 2 - c * c * a.eta_total ** 2) < 1e-8 * c * c * a.eta_total ** 2


def test_uniform_enrichment_reduces_residual():
    prob = make_problem("eriksson_johnson", eps=0.2)
    mesh = prob.initial_mesh()
    prev = np.inf
    for p in (1, 2, 3, 4):
        for e in mesh.leaves:
            mesh.set_order(e, (p, p, p))
        eta = solve_mesh(mesh, prob).eta_total
        assert eta < prev
        prev = eta
