import numpy as np
import pytest
from hypothesis import given, strategies as st
from types import SimpleNamespace

from hpdpg import dpg, oracles
from hpdpg.dpg import ElementSystem, GramError, assemble_element, condense, element_residual
from hpdpg.spaces import ElementSpace


def _poly(X):
    return 1.0 + X[:, 0] * X[:, 1] - X[:, 2] ** 2


def rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


@given(st.integers(0, 2**31 - 1))
def test_matches_dense_quadrature(seed):
    rng = np.random.default_rng(seed)
    order = tuple(int(v) for v in rng.integers(1, 4, 3))
    lo = rng.uniform(-1, 1, 3)
    box = np.ravel(np.column_stack([lo, lo + rng.uniform(0.1, 2.0, 3)]))
    eps, alpha = float(rng.uniform(0.05, 1.5)), float(rng.uniform(0.5, 2.0))
    beta = tuple(rng.normal(size=3))
    prob = SimpleNamespace(eps_d=eps, beta=beta, source=_poly)
    s = assemble_element(box, order, prob, alpha=alpha)
    G, B, Bh, l = oracles.dense_element(box, order, 1, eps, beta, alpha, _poly)
    assert rel(s.G, G) < 1e-12
    assert rel(s.B, B) < 1e-12
    assert rel(s.Bhat, Bh) < 1e-12
    assert rel(s.l, l) < 1e-12
    K, r, c = oracles.dense_condensed(G, B, Bh, l)
    ce = condense(s)
    assert rel(ce.stiffness, K) < 1e-11
    assert rel(ce.rhs, r) < 1e-11


def test_unit_cube_gram_order_one():
    s = assemble_element([0, 1, 0, 1, 0, 1], (1, 1, 1))
    G, *_ = oracles.dense_element([0, 1, 0, 1, 0, 1], (1, 1, 1))
    assert rel(s.G, G) < 1e-12


@given(st.integers(0, 2**31 - 1))
def test_gram_symmetric_positive(seed):
    rng = np.random.default_rng(seed)
    h = rng.uniform(0.01, 3.0, 3)
    order = tuple(int(v) for v in rng.integers(1, 6, 3))
    G = dpg.gram_matrix(ElementSpace(order), h, float(rng.uniform(0.01, 1)), rng.normal(size=3))
    assert np.max(np.abs(G - G.T)) < 1e-13 * np.max(np.abs(G))
    assert np.linalg.eigvalsh(G).min() > 0


def test_zero_source_zero_load():
    s = assemble_element([0, 1, 0, 1, 0, 1], (2, 2, 2), SimpleNamespace(source=lambda X: 0 * X[:, 0]))
    assert not s.l.any()


def _system(G, B, Bh=None, l=None):
    n = G.shape[0]
    Bh = np.zeros((n, 0)) if Bh is None else Bh
    l = np.zeros(n) if l is None else l
    return ElementSystem(G, B, Bh, l, np.arange(Bh.shape[1]), None, 1.0, (0, 0, 0), 7)


def test_condense_small_cases():
    ce = condense(_system(np.array([[4.0]]), np.array([[2.0]])))
    assert np.allclose(ce.stiffness, [[1.0]])
    ce = condense(_system(np.eye(3), np.zeros((3, 2)), np.zeros((3, 1))))
    assert not ce.stiffness.any() and not ce.rhs.any()


@given(st.integers(0, 2**31 - 1))
def test_condense_and_residual_random(seed):
    rng = np.random.default_rng(seed)
    n, m = 12, 5
    A = rng.normal(size=(n, n))
    G = A @ A.T + n * np.eye(n)
    B = rng.normal(size=(n, m))
    l = rng.normal(size=n)
    s = _system(G, B, l=l)
    ce = condense(s)
    assert rel(ce.stiffness, B.T @ np.linalg.solve(G, B)) < 1e-11
    x = rng.normal(size=m)
    r = l - B @ x
    assert abs(element_residual(s, x, np.zeros(0)) - r @ np.linalg.solve(G, r)) \
        < 1e-12 * (r @ np.linalg.solve(G, r))
    # the normal-equation solution minimizes the residual
    xs = np.linalg.solve(ce.stiffness, ce.rhs)
    best = element_residual(s, xs, np.zeros(0))
    for _ in range(5):
        assert best <= element_residual(s, xs + 1e-3 * rng.normal(size=m), np.zeros(0))


def test_residual_zero_and_errors():
    s = _system(np.eye(2), np.eye(2), l=np.array([1.0, 2.0]))
    assert element_residual(s, [1.0, 2.0], []) == 0.0
    with pytest.raises(ValueError):
        element_residual(s, [1.0], [])
    bad = _system(-np.eye(2), np.eye(2))
    with pytest.raises(GramError) as exc:
        condense(bad)
    assert "element 7" in str(exc.value)


def test_degenerate_element():
    with pytest.raises(GramError):
        assemble_element([0, 1, 0, 0, 0, 1], (1, 1, 1))


def test_enrichment_monotone():
    """Residual of fixed coefficients grows with the (nested) enriched test space."""
    rng = np.random.default_rng(0)
    box = [0, 1, 0, 0.5, 0, 2]
    prob = SimpleNamespace(eps_d=0.3, beta=(1.0, 0.0, 0.0), source=_poly)
    etas = []
    for dp in (1, 2, 3):
        s = assemble_element(box, (2, 2, 1), prob, dp=dp, alpha=1.0)
        if dp == 1:
            xf = rng.normal(size=s.B.shape[1])
            xt = rng.normal(size=s.Bhat.shape[1])
        etas.append(element_residual(s, xf, xt))
    assert etas[0] <= etas[1] * (1 + 1e-12) and etas[1] <= etas[2] * (1 + 1e-12)
