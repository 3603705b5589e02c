"""Brute-force reference implementations used by the verification suites.

Nothing here shares code paths with the production kernels beyond the
definitions of the basis families: element matrices are integrated
point by point, projections use plain quadrature, marking and mesh
audits enumerate cases directly.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from numpy.polynomial import legendre as npleg

# {{{ 1D bases from numpy


def _leg(n, s, deriv=0):
    """Shifted Legendre ``P_0..P_{n-1}`` (or a derivative in ``s``) at ``s``."""
    x = 2.0 * np.asarray(s, dtype=float) - 1.0
    if not deriv:
        return npleg.legvander(x, max(n - 1, 0))[:, :n].T.copy()
    out = np.empty((n, len(x)))
    for k in range(n):
        c = np.zeros(k + 1)
        c[k] = 1.0
        if deriv:
            c = npleg.legder(c) * 2.0 if k > 0 else np.zeros(1)
        out[k] = npleg.legval(x, c)
    return out


def _lob(q, s):
    s = np.asarray(s, dtype=float)
    P = _leg(q + 1, s)
    out = [1.0 - s, s]
    for k in range(2, q + 1):
        out.append((P[k] - P[k - 2]) / math.sqrt(2.0 * (2 * k - 1)))
    return np.array(out[: q + 1])


def _gauss(n):
    x, w = npleg.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w

# }}}


# {{{ element matrices by quadrature

def _tensor(vals):
    """Tensor product of 1D tables ``(n_k, npts_k)``; x slowest."""
    A, B, C = vals
    out = np.einsum("ia,jb,kc->ijkabc", A, B, C)
    return out.reshape(A.shape[0] * B.shape[0] * C.shape[0], -1)


def dense_element(box, order, dp=1, eps=1.0, beta=(0.0, 0.0, 0.0), alpha=1.0, source=None):
    """``(G, B, Bhat, l)`` for an isolated element with private face traces.

    Trace columns follow faces ``0..5`` (``2 axis + side``), each with its
    Lobatto ``u_hat`` block then its Legendre ``sigma_hat`` block.
    """
    box = np.asarray(box, dtype=float)
    lo, h = box[0::2], box[1::2] - box[0::2]
    jac = float(np.prod(h))
    p = tuple(int(v) for v in order)
    beta = np.asarray(beta, dtype=float)
    nq = max(p) + dp + 3
    s, w = _gauss(nq)
    W = jac * np.einsum("a,b,c->abc", w, w, w).ravel()
    nv = [q + dp + 1 for q in p]

    def tab(n, d):
        return _leg(n, s, d)

    # test functions: rows (v part, tau vector part) at quadrature points
    v_val = [_tensor([tab(nv[0], 0), tab(nv[1], 0), tab(nv[2], 0)])]
    v_grad = [[_tensor([tab(nv[k], int(k == c)) for k in range(3)]) / h[c] for c in range(3)]]
    tests = []   # (v, grad v (3), tau (3), div tau)
    nvt = v_val[0].shape[0]
    npts = v_val[0].shape[1]
    zero = np.zeros((nvt, npts))
    tests.append((v_val[0], v_grad[0], [zero, zero, zero], zero))
    for d in range(3):
        shp = [q + dp + (1 if e == d else 0) for e, q in enumerate(p)]
        t = _tensor([tab(shp[k], 0) for k in range(3)])
        dt = _tensor([tab(shp[k], int(k == d)) for k in range(3)]) / h[d]
        z = np.zeros_like(t)
        tau = [t if c == d else z for c in range(3)]
        tests.append((z, [z, z, z], tau, dt))
    V = np.vstack([t[0] for t in tests])
    GV = [np.vstack([t[1][c] for t in tests]) for c in range(3)]
    TAU = [np.vstack([t[2][c] for t in tests]) for c in range(3)]
    DIV = np.vstack([t[3] for t in tests])

    comp_vec = [TAU[c] + GV[c] for c in range(3)]
    comp_sca = eps * DIV - sum(beta[c] * GV[c] for c in range(3))
    G = sum((comp_vec[c] * W) @ comp_vec[c].T for c in range(3))
    G = G + (comp_sca * W) @ comp_sca.T
    G = G + alpha * ((V * W) @ V.T + sum((TAU[c] * W) @ TAU[c].T for c in range(3)))

    trial = _tensor([_leg(p[k], s) for k in range(3)]) / jac
    B = np.hstack([(comp_sca * W) @ trial.T] + [(comp_vec[c] * W) @ trial.T for c in range(3)])

    l = np.zeros(V.shape[0])
    if source is not None:
        X = np.stack(np.meshgrid(*[lo[k] + h[k] * s for k in range(3)], indexing="ij"),
                     axis=-1).reshape(-1, 3)
        l = (V * W) @ np.asarray(source(X), dtype=float)

    # faces
    blocks = []
    for f in range(6):
        d, side = divmod(f, 2)
        a, b = [k for k in range(3) if k != d]
        n = 2.0 * side - 1.0
        area = jac / h[d]
        wf = area * np.einsum("a,b->ab", w, w).ravel()
        # tests restricted to the face: evaluate with the d-coordinate fixed
        pt = np.array([float(side)])

        def face_tab(n_per_axis, deriv_axis=-1):
            tabs = []
            for k in range(3):
                if k == d:
                    tabs.append(_leg(n_per_axis[k], pt, int(deriv_axis == k)))
                else:
                    tabs.append(_leg(n_per_axis[k], s, int(deriv_axis == k)))
            A = np.einsum("ia,jb,kc->ijkabc", *tabs)
            return A.reshape(A.shape[0] * A.shape[1] * A.shape[2], -1)

        vf = face_tab(nv)
        rows_v = [vf]
        rows_tn = [np.zeros_like(vf)]
        for dd in range(3):
            shp = [q + dp + (1 if e == dd else 0) for e, q in enumerate(p)]
            t = face_tab(shp)
            rows_v.append(np.zeros_like(t))
            rows_tn.append(n * t if dd == d else np.zeros_like(t))
        VF = np.vstack(rows_v)
        TN = np.vstack(rows_tn)
        qa, qb = p[a], p[b]
        U = np.einsum("ia,jb->ijab", _lob(qa, s), _lob(qb, s)).reshape((qa + 1) * (qb + 1), -1)
        S = np.einsum("ia,jb->ijab", _leg(qa, s), _leg(qb, s)).reshape(qa * qb, -1)
        flux = eps * TN - n * beta[d] * VF
        Bu = -(flux * wf) @ U.T
        Bs = -(VF * wf) @ (n * S).T
        blocks += [Bu, Bs]
    Bhat = np.hstack(blocks)
    return G, B, Bhat, l


def dense_condensed(G, B, Bhat, l):
    """``K = C^T G^-1 C``, ``r = C^T G^-1 l`` and ``l^T G^-1 l`` with ``C = [B | Bhat]``."""
    C = np.hstack([B, Bhat])
    GiC = np.linalg.solve(G, C)
    Gil = np.linalg.solve(G, l)
    return C.T @ GiC, C.T @ Gil, float(l @ Gil)


def schur(K, r, nf):
    """Eliminate the first ``nf`` unknowns."""
    Kff, Kft, Ktt = K[:nf, :nf], K[:nf, nf:], K[nf:, nf:]
    X = np.linalg.solve(Kff, np.hstack([Kft, r[:nf, None]]))
    return Ktt - Kft.T @ X[:, :-1], r[nf:] - Kft.T @ X[:, -1]

# }}}


# {{{ marking

def doerfler_bruteforce(eta: dict, theta: float):
    """Minimal-cardinality subsets reaching ``theta**2`` of the total, by enumeration.

    Returns ``(k, subsets)`` with all minimal subsets of size ``k`` that
    maximize the covered sum.  Feasible for up to ~12 entries.
    """
    keys = sorted(eta)
    total = sum(eta[k] for k in keys)
    target = theta * theta * total
    if total == 0:
        return 0, [()]
    for k in range(1, len(keys) + 1):
        best, subs = -1.0, []
        for c in itertools.combinations(keys, k):
            sval = sum(eta[i] for i in c)
            if sval >= target:
                if sval > best:
                    best, subs = sval, [c]
                elif sval == best:
                    subs.append(c)
        if subs:
            return k, subs
    return len(keys), [tuple(keys)]

# }}}


# {{{ mesh audit

def irregularity_violations(mesh):
    """Pairs of touching leaves that break one-irregularity, by exhaustive comparison.

    Leaves sharing a face portion must have nested face rectangles with
    per-axis size ratio at most two and must not cross (one wider along
    the first tangent, the other along the second); leaves sharing a
    segment of positive length must have nested extents along it with
    ratio at most two.  Every pair of leaves is examined.
    """
    ids = sorted(mesh.leaves)
    bx = np.array([mesh[e].ibox for e in ids], dtype=np.int64)
    A0, A1 = bx[:, None, 0::2], bx[:, None, 1::2]
    B0, B1 = bx[None, :, 0::2], bx[None, :, 1::2]
    lo, hi = np.maximum(A0, B0), np.minimum(A1, B1)
    touch = np.all(hi >= lo, axis=2)
    pos = hi > lo
    dim = pos.sum(axis=2)
    la, lb = A1 - A0, B1 - B0
    nested = ((B0 <= A0) & (A1 <= B1)) | ((A0 <= B0) & (B1 <= A1))
    ratio_ok = np.maximum(la, lb) <= 2 * np.minimum(la, lb)
    axis_bad = pos & ~(nested & ratio_ok)
    wider = np.sign(la - lb) * pos
    crossing = (dim == 2) & np.any(wider > 0, axis=2) & np.any(wider < 0, axis=2)
    upper = np.triu(np.ones((len(ids), len(ids)), dtype=bool), 1)
    bad = []
    for i, j in zip(*np.nonzero(upper & touch & (dim == 3))):
        bad.append((ids[i], ids[j], "overlap"))
    sel = upper & touch & (dim >= 1) & (dim <= 2)
    for i, j in zip(*np.nonzero(sel & np.any(axis_bad, axis=2))):
        bad.append((ids[i], ids[j], f"axes {np.nonzero(axis_bad[i, j])[0].tolist()}"))
    for i, j in zip(*np.nonzero(sel & crossing)):
        bad.append((ids[i], ids[j], "crossing faces"))
    return bad

# }}}


# {{{ projection-based competition by quadrature

class ProjectionOracle:
    """Squared L2 best-approximation errors of ``func`` by plain quadrature.

    ``func`` maps points ``(n, 3)`` to ``(ncomp, n)``; errors of all
    components are summed.  Samples are cached per integration piece.
    """

    def __init__(self, func, npts=12):
        self.func = func
        self.s, self.w = _gauss(npts)
        self._samples = {}

    def _piece(self, pc):
        key = tuple(float(v) for v in pc)
        if key not in self._samples:
            s, w = self.s, self.w
            plo, ph = pc[0::2], pc[1::2] - pc[0::2]
            X = np.stack(np.meshgrid(*[plo[k] + ph[k] * s for k in range(3)], indexing="ij"),
                         axis=-1).reshape(-1, 3)
            F = np.atleast_2d(self.func(X))
            W = np.prod(ph) * np.einsum("a,b,c->abc", w, w, w).ravel()
            self._samples[key] = (F * W, float(np.sum(F * F * W)))
        return self._samples[key]

    def err2(self, box, order, pieces=None):
        """Error on ``box``; ``pieces`` tile ``box`` where ``func`` is smooth."""
        box = np.asarray(box, dtype=float)
        lo, h = box[0::2], box[1::2] - box[0::2]
        nsq, coef = 0.0, 0.0
        for pc in (pieces if pieces is not None else [box]):
            pc = np.asarray(pc, dtype=float)
            FW, sq = self._piece(pc)
            plo, ph = pc[0::2], pc[1::2] - pc[0::2]
            tabs = []
            for k in range(3):
                t = (plo[k] + ph[k] * self.s - lo[k]) / h[k]
                tabs.append(_leg(order[k], t) * np.sqrt(2 * np.arange(order[k]) + 1.0)[:, None])
            basis = _tensor(tabs) / math.sqrt(np.prod(h))
            nsq += sq
            coef = coef + FW @ basis.T
        return float(nsq - np.sum(coef * coef))


def projection_error(func, box, order, pieces=None, npts=12):
    """One-shot :meth:`ProjectionOracle.err2`."""
    return ProjectionOracle(func, npts).err2(box, order, pieces)


def exhaustive_compete(errfn, start, p_max, flags, sub_boxes):
    """Best rate over every tie-resolution of the greedy paths.

    ``errfn(sub, order)`` returns the squared projection error on sub-box
    ``sub``; ``sub_boxes[flag]`` lists the children of ``flag``.  Returns
    ``{flag: best rate}``.
    """
    ncomp = 4
    err_old = errfn((2, 2, 2), start)
    n_old = ncomp * int(np.prod(start))

    def rate(e0, n0, e1, n1):
        return (e0 - e1) / (n1 - n0)

    def p_paths(sub, st):
        """All maximum-rate paths from ``st``; lists of (order, err)."""
        e0, n0 = errfn(sub, st), ncomp * int(np.prod(st))
        out = []

        def rec(cur, todo, acc):
            if not todo:
                out.append(acc)
                return
            cands = []
            for d in todo:
                q = list(cur)
                q[d] += 1
                q = tuple(q)
                e = errfn(sub, q)
                cands.append((rate(e0, n0, e, ncomp * int(np.prod(q))), d, q, e))
            m = max(c[0] for c in cands)
            for r, d, q, e in cands:
                if r == m:
                    rec(q, [t for t in todo if t != d], acc + [(q, e)])

        rec(tuple(st), [d for d in range(3) if st[d] < p_max], [])
        return out

    result = {}
    for flag in flags:
        best = -math.inf
        if flag == 0:
            for path in p_paths((2, 2, 2), tuple(start)):
                for q, e in path:
                    n = ncomp * int(np.prod(q))
                    if n > n_old and e < err_old:
                        best = max(best, rate(err_old, n_old, e, n))
            result[flag] = best
            continue
        subs = sub_boxes[flag]
        budget = 8 * ncomp * int(np.prod([min(q + 1, p_max) for q in start]))

        def walk(orders):
            nonlocal best
            errs = [errfn(sb, o) for sb, o in zip(subs, orders)]
            n = ncomp * sum(int(np.prod(o)) for o in orders)
            e = sum(errs)
            if n > n_old and e < err_old:
                best = max(best, rate(err_old, n_old, e, n))
            active = [c for c in range(len(subs)) if not all(v >= p_max for v in orders[c])]
            if not active:
                return
            mx = max(errs[c] for c in active)
            chosen = [c for c in active if errs[c] >= 0.7 * mx]
            options = []
            for c in chosen:
                opts = set()
                e0, n0 = errs[c], ncomp * int(np.prod(orders[c]))
                for path in p_paths(subs[c], orders[c]):
                    rates = [rate(e0, n0, e1, ncomp * int(np.prod(q))) for q, e1 in path]
                    m = max(rates)
                    if m > 0:
                        opts.update(q for (q, _), r in zip(path, rates) if r == m)
                    else:
                        opts.add(path[-1][0])
                options.append(sorted(opts))
            for combo in itertools.product(*options):
                new = list(orders)
                for c, q in zip(chosen, combo):
                    new[c] = q
                if ncomp * sum(int(np.prod(o)) for o in new) > budget:
                    continue
                walk(tuple(new))

        walk(tuple([(1, 1, 1)] * len(subs)))
        result[flag] = best
    return result

# }}}
