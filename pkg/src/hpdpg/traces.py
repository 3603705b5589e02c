"""Skeleton trace spaces and the element-to-global dof map.

``u_hat`` is a continuous hierarchical (Lobatto) function on the skeleton:
one dof per unconstrained vertex, bubbles ``l_2..l_q`` per unconstrained
edge and tensor bubbles per unconstrained face.  Every entity is
parametrized in increasing global coordinates, so no orientation flags are
needed.  Hanging entities carry no dofs; their coefficients are the master
polynomial restricted to them.

``sigma_hat`` lives face-wise: each unconstrained face carries a tensor
Legendre expansion of the flux ``sigma . e_axis``; slave faces see the
master polynomial restricted to their sub-rectangle.

Orders follow the minimum rule: a face takes the componentwise minimum of
the tangential orders of the leaves on its two sides, an edge the minimum of
the orders along it over the leaves around it.  Where one side is refined
(hanging entities) that side contributes the largest order among its small
leaves.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .spaces import (gauss, legendre, legendre_restriction, lobatto, lobatto_at,
                     lobatto_restriction)
from .topology import EDGE, FACE, NONE, OTHERS, TANGENT

log = logging.getLogger(__name__)


class StaleDofMapError(RuntimeError):
    pass


@dataclass
class Lin:
    """Rows of local coefficients as a dense combination of global dofs."""

    cols: np.ndarray
    mat: np.ndarray

    def left(self, R) -> "Lin":
        return Lin(self.cols, R @ self.mat)


def combine(nrows: int, blocks) -> Lin:
    """Assemble ``[(row indices, Lin)]`` into one ``Lin`` with merged columns."""
    cols = np.unique(np.concatenate([b.cols for _, b in blocks])) if blocks else \
        np.zeros(0, dtype=np.int64)
    mat = np.zeros((nrows, len(cols)))
    for rows, b in blocks:
        idx = np.searchsorted(cols, b.cols)
        mat[np.ix_(rows, idx)] += b.mat
    return Lin(cols, mat)


@dataclass
class FaceTrace:
    """Trace representation on one element face.

    ``uhat`` rows follow the tensor Lobatto basis of order ``q`` (``a``
    slow, ``b`` fast); ``sig`` rows the tensor Legendre basis with ``r``
    functions per direction, representing ``sigma . e_axis`` (multiply by the
    outward sign for the normal flux).
    """

    axis: int
    side: int
    q: tuple
    uhat: Lin
    r: tuple
    sig: Lin


class TraceSpace:
    """Global trace dofs of a mesh, with constraints and boundary data."""

    def __init__(self, mesh, problem=None):
        self.mesh = mesh
        self.generation = mesh.generation
        self.topo = mesh.topology
        self.problem = problem
        self._orders()
        self._number()
        self._cache_f, self._cache_e, self._cache_v = {}, {}, {}
        self._cache_sig = {}
        self._face_eff = {}
        self.fixed = np.zeros(self.ndof, dtype=bool)
        self.values = np.zeros(self.ndof)
        self.dirichlet_faces = []
        self.neumann_faces = []
        if problem is not None:
            self._boundary(problem)

    # {{{ orders and numbering

    def _orders(self):
        # a hanging face or edge sees its refined side as one neighbor whose
        # order is the largest among the small leaves, so refining next to a
        # high-order element never coarsens the shared trace
        t = self.topo
        nf, ne = len(t.face_key), len(t.edge_key)
        big = np.iinfo(np.int64).max
        fq = np.full((nf, 2), big, dtype=np.int64)
        fs = np.zeros((nf, 2), dtype=np.int64)
        for fl in range(6):
            d = fl // 2
            a, b = TANGENT[d]
            f = t.elem_face[:, fl]
            m = t.face_master[f]
            own = m < 0
            np.minimum.at(fq[:, 0], f[own], t.orders[own, a])
            np.minimum.at(fq[:, 1], f[own], t.orders[own, b])
            np.maximum.at(fs[:, 0], m[~own], t.orders[~own, a])
            np.maximum.at(fs[:, 1], m[~own], t.orders[~own, b])
        self.face_q = np.where(fs > 0, np.minimum(fq, fs), fq)
        eq = np.full(ne, big, dtype=np.int64)
        es = np.zeros(ne, dtype=np.int64)
        for le in range(12):
            a = le // 4
            e = t.elem_edge[:, le]
            kind = t.edge_mkind[e]
            own = kind == NONE
            hang = kind == EDGE
            np.minimum.at(eq, e[own], t.orders[own, a])
            np.maximum.at(es, t.edge_master[e[hang]], t.orders[hang, a])
        self.edge_q = np.where(es > 0, np.minimum(eq, es), eq)

    def _number(self):
        t = self.topo
        n = 0
        vfree = np.nonzero(t.vert_mkind == NONE)[0]
        self.vert_dof = np.full(len(t.vert_key), -1, dtype=np.int64)
        self.vert_dof[vfree] = np.arange(len(vfree))
        n = len(vfree)
        self.edge_dof = np.full(len(t.edge_key), -1, dtype=np.int64)
        self.edge_nb = np.zeros(len(t.edge_key), dtype=np.int64)
        efree = np.nonzero(t.edge_mkind == NONE)[0]
        nb = np.maximum(self.edge_q[efree] - 1, 0)
        self.edge_dof[efree] = n + np.concatenate([[0], np.cumsum(nb)[:-1]]) if len(efree) else 0
        self.edge_nb[efree] = nb
        n += int(nb.sum())
        ffree = np.nonzero(t.face_master < 0)[0]
        self.face_dof = np.full(len(t.face_key), -1, dtype=np.int64)
        self.face_nb = np.zeros(len(t.face_key), dtype=np.int64)
        nbf = np.prod(np.maximum(self.face_q[ffree] - 1, 0), axis=1)
        self.face_dof[ffree] = n + np.concatenate([[0], np.cumsum(nbf)[:-1]]) if len(ffree) else 0
        self.face_nb[ffree] = nbf
        n += int(nbf.sum())
        self.n_uhat = n
        ns = np.prod(self.face_q[ffree], axis=1)
        self.sig_dof = np.full(len(t.face_key), -1, dtype=np.int64)
        self.sig_dof[ffree] = n + np.concatenate([[0], np.cumsum(ns)[:-1]]) if len(ffree) else 0
        n += int(ns.sum())
        self.ndof = n
        self.n_sig = n - self.n_uhat

    # }}}

    # {{{ constraint resolution

    def vertex_lin(self, v) -> Lin:
        v = int(v)
        hit = self._cache_v.get(v)
        if hit is not None:
            return hit
        t = self.topo
        kind = t.vert_mkind[v]
        if kind == NONE:
            out = Lin(np.array([self.vert_dof[v]]), np.ones((1, 1)))
        elif kind == EDGE:
            E = t.vert_master[v]
            ek = t.edge_key[E]
            lin = self.edge_lin(E)
            q = lin.mat.shape[0] - 1
            s = (t.vert_key[v, ek[0]] - ek[3]) / (ek[4] - ek[3])
            out = lin.left(lobatto_at(q, s)[None, :])
        else:
            F = t.vert_master[v]
            lin = self.face_lin(F)
            qa, qb = self._face_shape(F)
            fk = t.face_key[F]
            a, b = TANGENT[fk[0]]
            sa = (t.vert_key[v, a] - fk[2]) / (fk[3] - fk[2])
            sb = (t.vert_key[v, b] - fk[4]) / (fk[5] - fk[4])
            out = lin.left(np.kron(lobatto_at(qa, sa), lobatto_at(qb, sb))[None, :])
        self._cache_v[v] = out
        return out

    def _face_shape(self, F):
        return self._face_eff[int(F)]

    def edge_lin(self, e) -> Lin:
        e = int(e)
        hit = self._cache_e.get(e)
        if hit is not None:
            return hit
        t = self.topo
        kind = t.edge_mkind[e]
        ek = t.edge_key[e]
        if kind == NONE:
            q = int(self.edge_q[e])
            v0, v1 = t.edge_verts[e]
            blocks = [([0], self.vertex_lin(v0)), ([1], self.vertex_lin(v1))]
            if q >= 2:
                d0 = self.edge_dof[e]
                blocks.append((list(range(2, q + 1)),
                               Lin(np.arange(d0, d0 + q - 1), np.eye(q - 1))))
            out = combine(q + 1, blocks)
        elif kind == EDGE:
            E = t.edge_master[e]
            mk = t.edge_key[E]
            lin = self.edge_lin(E)
            q = lin.mat.shape[0] - 1
            L = mk[4] - mk[3]
            out = lin.left(lobatto_restriction(q, (ek[3] - mk[3]) / L, (ek[4] - ek[3]) / L))
        else:
            F = t.edge_master[e]
            fk = t.face_key[F]
            lin = self.face_lin(F)
            qa, qb = self._face_shape(F)
            a, b = TANGENT[fk[0]]
            ax = ek[0]
            if ax == a:
                L = fk[3] - fk[2]
                R1 = lobatto_restriction(qa, (ek[3] - fk[2]) / L, (ek[4] - ek[3]) / L)
                c = ek[1 + OTHERS[ax].index(b)]
                E1 = lobatto_at(qb, (c - fk[4]) / (fk[5] - fk[4]))
                R = np.kron(R1, E1[None, :])
            else:
                L = fk[5] - fk[4]
                R1 = lobatto_restriction(qb, (ek[3] - fk[4]) / L, (ek[4] - ek[3]) / L)
                c = ek[1 + OTHERS[ax].index(a)]
                E1 = lobatto_at(qa, (c - fk[2]) / (fk[3] - fk[2]))
                R = np.kron(E1[None, :], R1)
            out = lin.left(R)
        self._cache_e[e] = out
        return out

    def face_lin(self, f) -> Lin:
        """Lobatto tensor coefficients of u_hat on leaf face ``f``."""
        f = int(f)
        hit = self._cache_f.get(f)
        if hit is not None:
            return hit
        t = self.topo
        F = t.face_master[f]
        if F >= 0:
            lin = self.face_lin(F)
            qa, qb = self._face_shape(F)
            (ca, wa), (cb, wb) = t.placement(F, f)
            R = np.kron(lobatto_restriction(qa, ca, wa), lobatto_restriction(qb, cb, wb))
            out = lin.left(R)
            self._face_eff[f] = (qa, qb)
        else:
            qa, qb = (int(x) for x in self.face_q[f])
            fe = t.face_edges[f]
            fv = t.face_verts[f]
            elins = [self.edge_lin(e) for e in fe]
            Qa = max(qa, elins[0].mat.shape[0] - 1, elins[1].mat.shape[0] - 1)
            Qb = max(qb, elins[2].mat.shape[0] - 1, elins[3].mat.shape[0] - 1)
            nb = Qb + 1
            blocks = []
            for k in range(4):
                i, j = k % 2, k // 2
                blocks.append(([i * nb + j], self.vertex_lin(fv[k])))
            for j in range(2):
                lin = elins[j]
                q = lin.mat.shape[0] - 1
                if q >= 2:
                    blocks.append(([k * nb + j for k in range(2, q + 1)],
                                   Lin(lin.cols, lin.mat[2:])))
            for i in range(2):
                lin = elins[2 + i]
                q = lin.mat.shape[0] - 1
                if q >= 2:
                    blocks.append(([i * nb + k for k in range(2, q + 1)],
                                   Lin(lin.cols, lin.mat[2:])))
            if qa >= 2 and qb >= 2:
                d0 = self.face_dof[f]
                rows = [k * nb + m for k in range(2, qa + 1) for m in range(2, qb + 1)]
                blocks.append((rows, Lin(np.arange(d0, d0 + len(rows)), np.eye(len(rows)))))
            out = combine((Qa + 1) * (Qb + 1), blocks)
            self._face_eff[f] = (Qa, Qb)
        self._cache_f[f] = out
        return out

    def sigma_lin(self, f):
        """Legendre tensor coefficients of ``sigma . e_axis`` on leaf face ``f``."""
        f = int(f)
        hit = self._cache_sig.get(f)
        if hit is not None:
            return hit
        t = self.topo
        F = t.face_master[f]
        root = F if F >= 0 else f
        ra, rb = (int(x) for x in self.face_q[root])
        d0 = self.sig_dof[root]
        cols = np.arange(d0, d0 + ra * rb)
        if F >= 0:
            (ca, wa), (cb, wb) = t.placement(F, f)
            R = np.kron(legendre_restriction(ra - 1, ca, wa), legendre_restriction(rb - 1, cb, wb))
            out = ((ra, rb), Lin(cols, R))
        else:
            out = ((ra, rb), Lin(cols, np.eye(ra * rb)))
        self._cache_sig[f] = out
        return out

    def face_trace(self, f, axis, side) -> FaceTrace:
        lin = self.face_lin(f)
        q = self._face_eff[int(f)]
        r, slin = self.sigma_lin(f)
        return FaceTrace(axis, side, q, lin, r, slin)

    def element_traces(self, eid):
        """The six :class:`FaceTrace` objects of leaf ``eid``."""
        self.check_generation()
        i = self.topo.pos[int(eid)]
        return [self.face_trace(self.topo.elem_face[i, fl], fl // 2, fl % 2) for fl in range(6)]

    def check_generation(self):
        if self.mesh.generation != self.generation:
            raise StaleDofMapError(
                f"trace space built for generation {self.generation}, mesh is at "
                f"{self.mesh.generation}")

    # }}}

    # {{{ boundary data

    def _boundary(self, problem):
        t = self.topo
        mesh = self.mesh
        dfaces, nfaces = [], []
        for f in np.nonzero(t.face_boundary)[0]:
            fk = t.face_key[f]
            d = int(fk[0])
            a, b = TANGENT[d]
            c = np.zeros(3)
            c[d] = fk[1]
            c[a] = 0.5 * (fk[2] + fk[3])
            c[b] = 0.5 * (fk[4] + fk[5])
            x = mesh.physical(c)
            normal = 1 if t.face_below[f] >= 0 else -1
            if problem.is_dirichlet(d, normal, x):
                dfaces.append(int(f))
            else:
                nfaces.append(int(f))
        self.dirichlet_faces = dfaces
        self.neumann_faces = nfaces
        self._fix_dirichlet(problem, dfaces)
        self._fix_neumann(problem, nfaces)

    def _face_geometry(self, f):
        t = self.topo
        fk = t.face_key[f]
        d = int(fk[0])
        a, b = TANGENT[d]
        lo = np.zeros(3)
        hi = np.zeros(3)
        lo[d] = hi[d] = fk[1]
        lo[a], hi[a] = fk[2], fk[3]
        lo[b], hi[b] = fk[4], fk[5]
        return d, a, b, self.mesh.physical(lo), self.mesh.physical(hi)

    def _fix_dirichlet(self, problem, dfaces):
        if not dfaces:
            return
        rows, cols, vals, rhs = [], [], [], []
        r0 = 0
        for f in dfaces:
            lin = self.face_lin(f)
            qa, qb = self._face_eff[f]
            d, a, b, lo, hi = self._face_geometry(f)
            na, nb = qa + 2, qb + 2
            sa, wa = gauss(na)
            sb, wb = gauss(nb)
            X = np.zeros((na, nb, 3))
            X[..., d] = lo[d]
            X[..., a] = lo[a] + (hi[a] - lo[a]) * sa[:, None]
            X[..., b] = lo[b] + (hi[b] - lo[b]) * sb[None, :]
            g = problem.u_dirichlet(X.reshape(-1, 3))
            area = (hi[a] - lo[a]) * (hi[b] - lo[b])
            w = np.sqrt(area * np.outer(wa, wb).ravel())
            Phi = np.einsum("ia,jb->abij", lobatto(qa, sa), lobatto(qb, sb)).reshape(na * nb, -1)
            A = (Phi @ lin.mat) * w[:, None]
            ii, jj = np.nonzero(A)
            rows.append(ii + r0)
            cols.append(lin.cols[jj])
            vals.append(A[ii, jj])
            rhs.append(g * w)
            r0 += na * nb
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        rhs = np.concatenate(rhs)
        fixed = np.unique(cols)
        loc = np.searchsorted(fixed, cols)
        A = sp.csr_matrix((vals, (rows, loc)), shape=(r0, len(fixed)))
        N = (A.T @ A).tocsc()
        x = spla.spsolve(N, A.T @ rhs)
        self.fixed[fixed] = True
        self.values[fixed] = np.atleast_1d(x)

    def _fix_neumann(self, problem, nfaces):
        for f in nfaces:
            (ra, rb), lin = self.sigma_lin(f)
            d, a, b, lo, hi = self._face_geometry(f)
            na, nb = ra + 4, rb + 4
            sa, wa = gauss(na)
            sb, wb = gauss(nb)
            X = np.zeros((na, nb, 3))
            X[..., d] = lo[d]
            X[..., a] = lo[a] + (hi[a] - lo[a]) * sa[:, None]
            X[..., b] = lo[b] + (hi[b] - lo[b]) * sb[None, :]
            normal = np.zeros(3)
            sign = 1.0 if self.topo.face_below[f] >= 0 else -1.0
            normal[d] = sign
            g = problem.flux_neumann(X.reshape(-1, 3), normal).reshape(na, nb)
            Pa = legendre(ra - 1, sa) * wa
            Pb = legendre(rb - 1, sb) * wb
            c = Pa @ g @ Pb.T
            c *= np.outer(2 * np.arange(ra) + 1.0, 2 * np.arange(rb) + 1.0)
            # stored variable is sigma . e_axis
            self.fixed[lin.cols] = True
            self.values[lin.cols] = sign * c.ravel()

    # }}}

    @property
    def free(self) -> np.ndarray:
        return np.nonzero(~self.fixed)[0]
