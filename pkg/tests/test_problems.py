import math

import mpmath
import numpy as np
import pytest

from hpdpg.problems import (eriksson_johnson_problem, fichera_problem, lshape_literal,
                            lshape_standard, make_problem, polynomial_sanity_problem)


def fd_laplacian(f, X, h=1e-3):
    out = -6.0 * f(X)
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        out = out + f(X + e) + f(X - e)
    return out / (h * h)


def fd_grad(f, X, h=1e-5):
    cols = []
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        cols.append((f(X + e) - f(X - e)) / (2 * h))
    return np.stack(cols, axis=1)


def test_boundary_layer_values():
    p = make_problem("boundary_layer", eps=0.05)
    assert abs(p.exact(np.array([[0.0, 0.0, 0.0]]))[0]) < 1e-15
    assert abs(p.exact(np.array([[1.0, 1.0, 1.0]]))[0]) < 1e-15


def test_boundary_layer_high_precision():
    eps = mpmath.mpf("0.5")
    mpmath.mp.dps = 40

    def phi(x):
        x = mpmath.mpf(x)
        return x + (mpmath.e ** (x / eps) - 1) / (1 - mpmath.e ** (1 / eps))

    ref = float(phi(0.5) ** 3)
    p = make_problem("boundary_layer", eps=0.5)
    assert abs(p.exact(np.array([[0.5, 0.5, 0.5]]))[0] - ref) < 1e-12


@pytest.mark.parametrize("name,eps", [("boundary_layer", 0.2), ("eriksson_johnson", 0.2),
                                      ("poly_sanity", None)])
def test_pde_consistency(name, eps):
    p = make_problem(name, eps=eps, degree=3)
    rng = np.random.default_rng(0)
    X = rng.uniform(0.1, 0.9, (1000, 3))
    lap = fd_laplacian(p.exact, X)
    conv = np.asarray(p.beta) @ p.exact_grad(X).T
    f = conv - p.eps_d * lap
    assert np.max(np.abs(f - p.source(X))) < 1e-4 * max(1.0, np.max(np.abs(p.source(X))))
    assert np.max(np.abs(fd_grad(p.exact, X) - p.exact_grad(X))) < 1e-6 * max(
        1.0, np.max(np.abs(p.exact_grad(X))))


def test_boundary_data_consistency():
    p = make_problem("eriksson_johnson", eps=0.1)
    y = np.linspace(0, 1, 7)
    X0 = np.stack([np.zeros(7), y, 0.3 * np.ones(7)], axis=1)
    assert np.allclose(p.exact(X0), np.sin(np.pi * y) * np.sin(0.3 * np.pi))
    X1 = X0.copy()
    X1[:, 0] = 1.0
    assert np.allclose(p.exact(X1), 0.0)


@pytest.mark.parametrize("eps", [0.01, 0.1, 1.0])
def test_characteristic_roots(eps):
    p = eriksson_johnson_problem(eps)
    assert abs(p.info["s1"] * p.info["s2"] + math.pi ** 2) < 1e-9 * math.pi ** 2


@pytest.mark.parametrize("eps", [1e-4, 1e-3])
def test_small_eps_finite(eps):
    rng = np.random.default_rng(1)
    X = np.vstack([rng.random((500, 3)), np.eye(3), np.ones((1, 3)), np.zeros((1, 3))])
    for name in ("boundary_layer", "eriksson_johnson"):
        p = make_problem(name, eps=eps)
        for fn in (p.exact, p.exact_grad, p.source):
            assert np.all(np.isfinite(fn(X)))


def test_fichera():
    p = fichera_problem()
    assert lshape_literal(np.array([1.0]), np.array([0.0]))[0] == pytest.approx(1.0)
    assert len(p.roots) == 7
    assert p.exact is None
    # the xy-plane term is z independent
    X = np.array([[0.3, -0.4, -0.7]])
    n = np.array([0.0, 0.0, -1.0])
    pot = p.info["neumann_potential"]
    g = p.flux_neumann(X, n)
    fd = -(pot(X + [0, 0, 1e-6]) - pot(X - [0, 0, 1e-6])) / 2e-6
    assert abs(g[0] - fd[0]) < 1e-8
    assert fichera_problem("standard").info["variant"] == "standard"
    # the standard corner function vanishes on the Dirichlet side of its sector
    assert abs(lshape_standard(np.array([0.0]), np.array([0.7]))[0]) < 1e-15


def test_fichera_dirichlet_partition():
    p = fichera_problem()
    assert p.is_dirichlet(0, -1.0, np.array([0.0, 0.5, 0.5]))
    assert not p.is_dirichlet(0, -1.0, np.array([-1.0, 0.5, 0.5]))


def test_poly_sanity():
    p = polynomial_sanity_problem(0)
    assert np.all(p.source(np.random.rand(5, 3)) == 0)
    p = polynomial_sanity_problem(2)
    assert np.allclose(p.source(np.random.rand(5, 3)), -6.0)
    with pytest.raises(ValueError):
        polynomial_sanity_problem(9, p_max=6)
    with pytest.raises(KeyError):
        make_problem("nope")
