"""Skeleton entities of a leaf mesh and their hanging-node structure.

Faces, edges and vertices of all leaves are enumerated on the integer
lattice and deduplicated.  An entity is *hanging* when it lies inside a
larger leaf entity without lying on that entity's boundary; its master is
the maximal such container (face containers before edge containers).

Local numbering used throughout:

* faces ``2 * axis + side``;
* edges ``4 * a + i + 2 * j`` for an edge along axis ``a`` whose two other
  axes (increasing order) sit at sides ``i`` and ``j``;
* vertices ``ix + 2 * iy + 4 * iz``.

A face's tangential axes ``(a, b)`` are the two other axes in increasing
order.  Its edges are stored as ``[a-edge at b0, a-edge at b1, b-edge at a0,
b-edge at a1]`` and its vertices as ``i + 2 * j`` over the ``(a, b)`` sides.
"""
from __future__ import annotations

from collections import defaultdict

import numpy as np

from . import kernels

TANGENT = ((1, 2), (0, 2), (0, 1))
OTHERS = TANGENT

NONE, FACE, EDGE = 0, 1, 2


def local_edge(a: int, sides: dict) -> int:
    o1, o2 = OTHERS[a]
    return 4 * a + sides[o1] + 2 * sides[o2]


def local_vertex(sides) -> int:
    return sides[0] + 2 * sides[1] + 4 * sides[2]


def _face_local_tables():
    """Per local face: its 4 local edges and 4 local vertices in face order."""
    fe = np.zeros((6, 4), dtype=np.int64)
    fv = np.zeros((6, 4), dtype=np.int64)
    for d in range(3):
        a, b = TANGENT[d]
        for s in range(2):
            f = 2 * d + s
            fe[f, 0] = local_edge(a, {d: s, b: 0})
            fe[f, 1] = local_edge(a, {d: s, b: 1})
            fe[f, 2] = local_edge(b, {d: s, a: 0})
            fe[f, 3] = local_edge(b, {d: s, a: 1})
            for j in range(2):
                for i in range(2):
                    sides = {d: s, a: i, b: j}
                    fv[f, i + 2 * j] = local_vertex([sides[0], sides[1], sides[2]])
    return fe, fv


FACE_EDGES, FACE_VERTS = _face_local_tables()


def _unique_rows(rows):
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    return uniq, inv.reshape(-1)


class Topology:
    """Derived entity tables for the current leaves of ``mesh``."""

    def __init__(self, mesh):
        self.generation = mesh.generation
        ids, boxes, orders = mesh.leaf_array()
        self.ids = ids
        self.boxes = boxes
        self.orders = orders
        self.pos = {int(e): i for i, e in enumerate(ids)}
        n = len(ids)
        self.nleaves = n
        self._build_faces(boxes)
        self._build_edges(boxes)
        self._build_vertices(boxes)
        self._face_closure()
        self._build_pairs()
        self._build_masters()

    # {{{ enumeration

    def _build_faces(self, boxes):
        n = len(boxes)
        rows = np.empty((n, 6, 6), dtype=np.int64)
        for d in range(3):
            a, b = TANGENT[d]
            for s in range(2):
                f = 2 * d + s
                rows[:, f, 0] = d
                rows[:, f, 1] = boxes[:, 2 * d + s]
                rows[:, f, 2] = boxes[:, 2 * a]
                rows[:, f, 3] = boxes[:, 2 * a + 1]
                rows[:, f, 4] = boxes[:, 2 * b]
                rows[:, f, 5] = boxes[:, 2 * b + 1]
        self.face_key, inv = _unique_rows(rows.reshape(-1, 6))
        self.elem_face = inv.reshape(n, 6)
        nf = len(self.face_key)
        below = np.full(nf, -1, dtype=np.int64)
        above = np.full(nf, -1, dtype=np.int64)
        for s in range(2):
            loc = np.arange(s, 6, 2)
            fids = self.elem_face[:, loc].ravel()
            owners = np.repeat(np.arange(n), 3)
            # side 1 face: the element lies below the plane
            (below if s == 1 else above)[fids] = owners
        self.face_below = below
        self.face_above = above

    def _build_edges(self, boxes):
        n = len(boxes)
        rows = np.empty((n, 12, 5), dtype=np.int64)
        for a in range(3):
            o1, o2 = OTHERS[a]
            for j in range(2):
                for i in range(2):
                    le = 4 * a + i + 2 * j
                    rows[:, le, 0] = a
                    rows[:, le, 1] = boxes[:, 2 * o1 + i]
                    rows[:, le, 2] = boxes[:, 2 * o2 + j]
                    rows[:, le, 3] = boxes[:, 2 * a]
                    rows[:, le, 4] = boxes[:, 2 * a + 1]
        self.edge_key, inv = _unique_rows(rows.reshape(-1, 5))
        self.elem_edge = inv.reshape(n, 12)

    def _build_vertices(self, boxes):
        n = len(boxes)
        rows = np.empty((n, 8, 3), dtype=np.int64)
        for iz in range(2):
            for iy in range(2):
                for ix in range(2):
                    lv = ix + 2 * iy + 4 * iz
                    rows[:, lv, 0] = boxes[:, ix]
                    rows[:, lv, 1] = boxes[:, 2 + iy]
                    rows[:, lv, 2] = boxes[:, 4 + iz]
        self.vert_key, inv = _unique_rows(rows.reshape(-1, 3))
        self.elem_vert = inv.reshape(n, 8)

    def _face_closure(self):
        nf = len(self.face_key)
        owner = np.where(self.face_below >= 0, self.face_below, self.face_above)
        self.face_owner = owner
        # the local face index of the owner
        loc = np.empty(nf, dtype=np.int64)
        for f in range(6):
            fids = self.elem_face[:, f]
            sel = owner[fids] == np.arange(self.nleaves)
            loc[fids[sel]] = f
        self.face_edges = self.elem_edge[owner[:, None], FACE_EDGES[loc]]
        self.face_verts = self.elem_vert[owner[:, None], FACE_VERTS[loc]]
        ne = len(self.edge_key)
        self.edge_verts = np.empty((ne, 2), dtype=np.int64)
        for le in range(12):
            a = le // 4
            i, j = le % 2, (le // 2) % 2
            o1, o2 = OTHERS[a]
            sides = {o1: i, o2: j}
            for t in range(2):
                sides[a] = t
                lv = local_vertex([sides[0], sides[1], sides[2]])
                self.edge_verts[self.elem_edge[:, le], t] = self.elem_vert[:, lv]

    # }}}

    # {{{ face overlaps

    def _build_pairs(self):
        """Overlapping one-sided faces across each plane."""
        key = self.face_key
        one_below = np.nonzero((self.face_below >= 0) & (self.face_above < 0))[0]
        one_above = np.nonzero((self.face_above >= 0) & (self.face_below < 0))[0]
        groups = defaultdict(lambda: ([], []))
        for f in one_below:
            groups[(key[f, 0], key[f, 1])][0].append(f)
        for f in one_above:
            groups[(key[f, 0], key[f, 1])][1].append(f)
        pairs = []
        for g in sorted(groups):
            lo, hi = groups[g]
            if not lo or not hi:
                continue
            lo = np.array(lo)
            hi = np.array(hi)
            A = key[lo][:, None, 2:]
            B = key[hi][None, :, 2:]
            ov = ((np.minimum(A[..., 1], B[..., 1]) > np.maximum(A[..., 0], B[..., 0]))
                  & (np.minimum(A[..., 3], B[..., 3]) > np.maximum(A[..., 2], B[..., 2])))
            ii, jj = np.nonzero(ov)
            pairs.extend(zip(lo[ii].tolist(), hi[jj].tolist()))
        self.pairs = pairs
        paired = np.zeros(len(key), dtype=bool)
        for f, g in pairs:
            paired[f] = paired[g] = True
        twosided = (self.face_below >= 0) & (self.face_above >= 0)
        self.face_boundary = ~twosided & ~paired

    @staticmethod
    def _contains(outer, inner) -> bool:
        return (outer[2] <= inner[2] and inner[3] <= outer[3]
                and outer[4] <= inner[4] and inner[5] <= outer[5])

    # }}}

    # {{{ hanging structure

    def _build_masters(self):
        key = self.face_key
        nf, ne, nv = len(key), len(self.edge_key), len(self.vert_key)
        self.face_master = np.full(nf, -1, dtype=np.int64)
        self.crossings = []
        self.slaves = defaultdict(list)
        for f, g in self.pairs:
            if self._contains(key[f], key[g]):
                self.face_master[g] = f
                self.slaves[f].append(g)
            elif self._contains(key[g], key[f]):
                self.face_master[f] = g
                self.slaves[g].append(f)
            else:
                self.crossings.append((f, g))

        # edges and vertices inside a face interior come from slave faces
        self.edge_mkind = np.zeros(ne, dtype=np.int8)
        self.edge_master = np.full(ne, -1, dtype=np.int64)
        self.vert_mkind = np.zeros(nv, dtype=np.int8)
        self.vert_master = np.full(nv, -1, dtype=np.int64)
        for g in np.nonzero(self.face_master >= 0)[0]:
            F = self.face_master[g]
            kF = key[F]
            a, b = TANGENT[kF[0]]
            for k, e in enumerate(self.face_edges[g]):
                ek = self.edge_key[e]
                # a-edges (k < 2) sit at a b-coordinate, b-edges at an a-coordinate
                ax, tr = (a, b) if k < 2 else (b, a)
                c = ek[1 + OTHERS[ax].index(tr)]
                lo, hi = (kF[4], kF[5]) if k < 2 else (kF[2], kF[3])
                if lo < c < hi:
                    self.edge_mkind[e] = FACE
                    self.edge_master[e] = F
            for v in self.face_verts[g]:
                vk = self.vert_key[v]
                d = kF[0]
                a, b = TANGENT[d]
                if kF[2] < vk[a] < kF[3] and kF[4] < vk[b] < kF[5]:
                    self.vert_mkind[v] = FACE
                    self.vert_master[v] = F

        # collinear nesting: maximal edge per line by a sweep
        ek = self.edge_key
        order = np.lexsort((-ek[:, 4], ek[:, 3], ek[:, 2], ek[:, 1], ek[:, 0]))
        s = ek[order]
        newline = np.ones(ne, dtype=bool)
        newline[1:] = np.any(s[1:, :3] != s[:-1, :3], axis=1)
        top_of = kernels.sweep_tops(newline, s[:, 3], s[:, 4])
        top = np.empty(ne, dtype=np.int64)
        top[order] = order[top_of]
        self.edge_top = top
        hang_e = (top != np.arange(ne)) & (self.edge_mkind == NONE)
        self.edge_mkind[hang_e] = EDGE
        self.edge_master[hang_e] = top[hang_e]

        # vertices strictly inside a top-level edge
        tops = np.nonzero(top == np.arange(ne))[0]
        vk = self.vert_key
        qv = np.nonzero(self.vert_mkind == NONE)[0]
        queries = [np.column_stack([np.full(len(qv), a), vk[qv, OTHERS[a][0]],
                                    vk[qv, OTHERS[a][1]]]) for a in range(3)]
        _, inv = _unique_rows(np.vstack([ek[tops, :3]] + queries))
        tline = inv[:len(tops)]
        srt = np.lexsort((ek[tops, 3], tline))
        tops, tline = tops[srt], tline[srt]
        for a in range(3):
            lo = len(srt) + a * len(qv)
            hit = kernels.locate(tline, ek[tops, 3], ek[tops, 4], inv[lo:lo + len(qv)], vk[qv, a])
            sel = (hit >= 0) & (self.vert_mkind[qv] == NONE)
            v = qv[sel]
            self.vert_mkind[v] = EDGE
            self.vert_master[v] = tops[hit[sel]]

    # }}}

    # {{{ queries

    def face_rect(self, f):
        k = self.face_key[f]
        return k[2], k[3], k[4], k[5]

    def placement(self, outer, inner):
        """``((c_a, w_a), (c_b, w_b))`` of face ``inner`` within face ``outer``."""
        ko, ki = self.face_key[outer], self.face_key[inner]
        out = []
        for j in (2, 4):
            L = ko[j + 1] - ko[j]
            out.append(((ki[j] - ko[j]) / L, (ki[j + 1] - ki[j]) / L))
        return tuple(out)

    def neighbors(self, eid, face):
        i = self.pos[int(eid)]
        f = self.elem_face[i, face]
        below, above = self.face_below[f], self.face_above[f]
        full = ((0.0, 1.0), (0.0, 1.0))
        if below >= 0 and above >= 0:
            other = above if below == i else below
            return [(int(self.ids[other]), full)]
        out = []
        for g, h in self.pairs:
            if g == f or h == f:
                other = h if g == f else g
                owner = self.face_owner[other]
                out.append((int(self.ids[owner]), self.placement(f, other)))
        return sorted(out)

    def edge_owners(self):
        """Map edge id -> list of leaf positions having that exact edge."""
        owners = defaultdict(list)
        for i in range(self.nleaves):
            for e in self.elem_edge[i]:
                owners[int(e)].append(i)
        return owners

    # }}}

    # {{{ closure checks

    def closure_violations(self) -> dict:
        """Elements to refine (id -> set of axes) to repair irregularities.

        Crossing face overlaps are repaired first; then every hanging
        entity must be a direct bisection piece of its master.
        """
        todo = defaultdict(set)
        key = self.face_key
        if self.crossings:
            for f, g in self.crossings:
                cand = []
                for h in (f, g):
                    i = self.face_owner[h]
                    b = self.boxes[i]
                    vol = int(np.prod((b[1::2] - b[0::2]).astype(object)))
                    cand.append((-vol, int(self.ids[i]), h, i))
                cand.sort()
                _, eid, h, _ = cand[0]
                other = g if h == f else f
                d = key[h, 0]
                a, b = TANGENT[d]
                la, lb = key[h, 3] - key[h, 2], key[h, 5] - key[h, 4]
                oa, ob = key[other, 3] - key[other, 2], key[other, 5] - key[other, 4]
                axes = set()
                if la > oa:
                    axes.add(a)
                if lb > ob:
                    axes.add(b)
                todo[eid] |= axes
            return dict(todo)

        for g in np.nonzero(self.face_master >= 0)[0]:
            F = self.face_master[g]
            d = key[F, 0]
            a, b = TANGENT[d]
            eid = int(self.ids[self.face_owner[F]])
            if (key[F, 3] - key[F, 2]) > 2 * (key[g, 3] - key[g, 2]):
                todo[eid].add(a)
            if (key[F, 5] - key[F, 4]) > 2 * (key[g, 5] - key[g, 4]):
                todo[eid].add(b)

        ek = self.edge_key
        vk = self.vert_key
        for e in np.nonzero(self.edge_mkind == FACE)[0]:
            F = self.edge_master[e]
            d = key[F, 0]
            a, b = TANGENT[d]
            eid = int(self.ids[self.face_owner[F]])
            ax = ek[e, 0]
            other = b if ax == a else a
            lo, hi = key[F, 2 + 2 * TANGENT[d].index(ax)], key[F, 3 + 2 * TANGENT[d].index(ax)]
            if hi - lo > 2 * (ek[e, 4] - ek[e, 3]):
                todo[eid].add(ax)
            olo, ohi = key[F, 2 + 2 * TANGENT[d].index(other)], key[F, 3 + 2 * TANGENT[d].index(other)]
            c = ek[e, 1 + OTHERS[ax].index(other)]
            if 2 * c != olo + ohi:
                todo[eid].add(other)
        for v in np.nonzero(self.vert_mkind == FACE)[0]:
            F = self.vert_master[v]
            d = key[F, 0]
            eid = int(self.ids[self.face_owner[F]])
            for t, ax in enumerate(TANGENT[d]):
                if 2 * vk[v, ax] != key[F, 2 + 2 * t] + key[F, 3 + 2 * t]:
                    todo[eid].add(ax)

        owners = None
        bad_edges = {}
        for e in np.nonzero(self.edge_mkind == EDGE)[0]:
            E = self.edge_master[e]
            if ek[E, 4] - ek[E, 3] > 2 * (ek[e, 4] - ek[e, 3]):
                bad_edges[int(E)] = ek[E, 0]
        for v in np.nonzero(self.vert_mkind == EDGE)[0]:
            E = self.vert_master[v]
            if 2 * vk[v, ek[E, 0]] != ek[E, 3] + ek[E, 4]:
                bad_edges[int(E)] = ek[E, 0]
        if bad_edges:
            owners = self.edge_owners()
            for E, ax in bad_edges.items():
                for i in owners[E]:
                    todo[int(self.ids[i])].add(int(ax))
        return dict(todo)

    # }}}
