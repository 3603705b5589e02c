import numpy as np
import pytest
from hypothesis import given, strategies as st

from hpdpg.mesh import (Mesh, MeshError, RefFlag, UnwantedPolicy, child_boxes,
                        neighbors_across_face, refine_with_closure, unrefine)
from hpdpg.oracles import irregularity_violations


def test_flags():
    assert len(RefFlag) == 8
    counts = {f: f.nchildren for f in RefFlag if f is not RefFlag.NONE}
    assert sorted(counts.values()) == [2, 2, 2, 4, 4, 4, 8]


@pytest.mark.parametrize("flag", [f for f in RefFlag if f is not RefFlag.NONE])
def test_children_tile_parent(flag):
    box = (0, 8, 0, 4, 0, 16)
    kids = np.array(child_boxes(box, flag))
    assert len(kids) == flag.nchildren
    vol = np.prod(kids[:, 1::2] - kids[:, 0::2], axis=1).sum()
    assert vol == 8 * 4 * 16
    # x fastest
    if 0 in flag.axes and flag.nchildren > 1:
        assert kids[0][0] == 0 and kids[1][0] == 4


def test_single_element_h8():
    m = Mesh.box_grid()
    rep = refine_with_closure(m, [(m.leaves[0], RefFlag.H8)])
    assert len(m.leaves) == 8
    assert rep.unwanted == []
    assert irregularity_violations(m) == []


def test_two_cubes_split_parallel_to_shared_face():
    m = Mesh.box_grid((2, 1, 1))
    left = m.leaves[0]
    refine_with_closure(m, [(left, RefFlag.H2_X)])
    assert len(m.leaves) == 3
    right = m.leaves[0] if m.box(m.leaves[0])[0] == 1.0 else [e for e in m.leaves
                                                             if m.box(e)[0] == 1.0][0]
    nb = neighbors_across_face(m, right, 0)
    assert len(nb) == 1
    assert nb[0][1] == ((0.0, 1.0), (0.0, 1.0))


def test_corner_refinement_triggers_closure():
    m = Mesh.box_grid((2, 1, 1))
    refine_with_closure(m, [(m.leaves[0], RefFlag.H8)], UnwantedPolicy.MINIMAL)
    corner = [e for e in m.leaves if np.allclose(m.box(e)[[1, 3, 5]], [1.0, 0.5, 0.5])
              and m.box(e)[0] == 0.5][0]
    rep = refine_with_closure(m, [(corner, RefFlag.H8)], UnwantedPolicy.MINIMAL)
    assert rep.unwanted, "the coarse right cube must be refined"
    assert irregularity_violations(m) == []


def test_neighbors():
    m = Mesh.box_grid((2, 1, 1))
    a, b = sorted(m.leaves)
    assert neighbors_across_face(m, a, 0) == []
    assert neighbors_across_face(m, a, 1) == [(b, ((0.0, 1.0), (0.0, 1.0)))]
    refine_with_closure(m, [(b, RefFlag.H4_YZ)])
    nb = neighbors_across_face(m, a, 1)
    assert len(nb) == 4
    assert sorted(p for _, p in nb) == sorted(
        ((ca, 0.5), (cb, 0.5)) for cb in (0.0, 0.5) for ca in (0.0, 0.5))


def test_set_order():
    m = Mesh.box_grid(p_max=6)
    e = m.leaves[0]
    m.set_order(e, (3, 2, 2))
    assert m[e].order == (3, 2, 2)
    with pytest.raises(MeshError):
        m.set_order(e, (7, 1, 1))
    refine_with_closure(m, [(e, RefFlag.H2_X)])
    with pytest.raises(MeshError):
        m.set_order(e, (2, 2, 2))


def test_errors():
    m = Mesh.box_grid()
    e = m.leaves[0]
    with pytest.raises(MeshError):
        refine_with_closure(m, [(e, RefFlag.NONE)])
    with pytest.raises((MeshError, KeyError)):
        refine_with_closure(m, [(999, RefFlag.H8)])
    refine_with_closure(m, [(e, RefFlag.H8)])
    with pytest.raises(MeshError):
        refine_with_closure(m, [(e, RefFlag.H8)])
    other = Mesh.box_grid()
    with pytest.raises(MeshError):
        unrefine(m, other.snapshot())


def test_empty_request_is_noop():
    m = Mesh.box_grid((2, 2, 1))
    refine_with_closure(m, [(m.leaves[0], RefFlag.H2_Z)])
    before = m.serialize()
    refine_with_closure(m, [])
    assert m.serialize() == before


requests = st.lists(st.tuples(st.integers(0, 10_000), st.integers(1, 7)), min_size=1,
                    max_size=4)


def _apply(m, seq, policy):
    for raw in seq:
        leaves = m.leaves
        reqs = {}
        for k, f in raw:
            reqs[leaves[k % len(leaves)]] = RefFlag(f)
        refine_with_closure(m, sorted(reqs.items()), policy)


@given(st.lists(requests, min_size=1, max_size=4), st.sampled_from(list(UnwantedPolicy)))
def test_refinement_invariants(seq, policy):
    m = Mesh.box_grid((2, 1, 2))
    _apply(m, seq, policy)
    assert irregularity_violations(m) == []
    assert abs(m.volume() - 4.0) < 4e-12
    assert m.topology.closure_violations() == {}


@given(st.lists(requests, min_size=1, max_size=3), requests,
       st.sampled_from(list(UnwantedPolicy)))
def test_unrefine_roundtrip(base, extra, policy):
    m = Mesh.box_grid((1, 2, 1))
    _apply(m, base, policy)
    before = m.serialize()
    snap = m.snapshot()
    _apply(m, [extra], policy)
    m.set_order(m.leaves[-1], (1, 1, 3))
    unrefine(m, snap)
    assert m.serialize() == before


@given(st.lists(requests, min_size=1, max_size=3))
def test_determinism(seq):
    a, b = Mesh.box_grid((2, 1, 1)), Mesh.box_grid((2, 1, 1))
    _apply(a, seq, UnwantedPolicy.MINIMAL)
    _apply(b, seq, UnwantedPolicy.MINIMAL)
    assert a.serialize() == b.serialize()


def test_serialize_format():
    m = Mesh.box_grid()
    line = m.serialize().splitlines()[0].split()
    # id parent flag x0 x1 y0 y1 z0 z1 px py pz
    assert len(line) == 12
