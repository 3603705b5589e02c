"""Refinement forest of axis-aligned hexahedra with anisotropic h-refinement.

Geometry is stored on an integer dyadic lattice: every root cell is the box
``[i, i+1] x [j, j+1] x [k, k+1]`` scaled by ``2**MAXLEV``, so all bisections
stay exact and boxes compare without rounding.  Physical coordinates are
``origin + cell * ibox / 2**MAXLEV``.
"""
from __future__ import annotations

import copy
import enum
import logging
import uuid
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MAXLEV = 20
SCALE = 1 << MAXLEV


class RefFlag(enum.IntEnum):
    """Refinement kinds; the integer value doubles as the tie-break order."""

    NONE = 0
    H2_X = 1
    H2_Y = 2
    H2_Z = 3
    H4_XY = 4
    H4_YZ = 5
    H4_XZ = 6
    H8 = 7

    @property
    def axes(self) -> tuple:
        return _FLAG_AXES[self]

    @property
    def nchildren(self) -> int:
        return 1 << len(self.axes)

    @classmethod
    def from_axes(cls, axes) -> "RefFlag":
        return _AXES_FLAG[tuple(sorted(set(axes)))]


_FLAG_AXES = {
    RefFlag.NONE: (), RefFlag.H2_X: (0,), RefFlag.H2_Y: (1,), RefFlag.H2_Z: (2,),
    RefFlag.H4_XY: (0, 1), RefFlag.H4_YZ: (1, 2), RefFlag.H4_XZ: (0, 2),
    RefFlag.H8: (0, 1, 2),
}
_AXES_FLAG = {v: k for k, v in _FLAG_AXES.items()}


class UnwantedPolicy(enum.Enum):
    ISOTROPIC = "isotropic"
    MINIMAL = "minimal"


class MeshError(ValueError):
    pass


@dataclass
class Element:
    id: int
    ibox: tuple
    order: tuple
    parent: int | None = None
    children: list = field(default_factory=list)
    ref_flag: RefFlag = RefFlag.NONE
    level: tuple = (0, 0, 0)

    @property
    def is_leaf(self) -> bool:
        return not self.children


def child_boxes(ibox, flag: RefFlag):
    """Child integer boxes of ``ibox`` under ``flag``, x fastest then y then z."""
    ranges = []
    for d in range(3):
        lo, hi = ibox[2 * d], ibox[2 * d + 1]
        if d in flag.axes:
            mid = (lo + hi) // 2
            if mid == lo:
                raise MeshError("refinement depth exceeds the integer lattice")
            ranges.append([(lo, mid), (mid, hi)])
        else:
            ranges.append([(lo, hi)])
    out = []
    for rz in ranges[2]:
        for ry in ranges[1]:
            for rx in ranges[0]:
                out.append((rx[0], rx[1], ry[0], ry[1], rz[0], rz[1]))
    return out


@dataclass
class RefinementReport:
    """Executed refinements in execution order: ``(element id, flag, requested)``."""

    entries: list = field(default_factory=list)
    closure_passes: int = 0

    @property
    def unwanted(self):
        return [e for e in self.entries if not e[2]]


@dataclass(frozen=True)
class Snapshot:
    lineage: str
    text: str
    state: tuple


class Mesh:
    """Hexahedral refinement forest.

    ``roots`` lists integer root cells ``(i, j, k)`` of a uniform grid with
    spacing ``cell`` anchored at ``origin``.
    """

    def __init__(self, roots, order=(2, 2, 2), origin=(0.0, 0.0, 0.0), cell=1.0,
                 p_max: int = 6):
        self.origin = np.asarray(origin, dtype=float)
        self.cell = float(cell)
        self.p_max = int(p_max)
        self.elements: dict = {}
        self._next_id = 0
        self.generation = 0
        self.lineage = uuid.uuid4().hex
        self._topo = None
        order = tuple(int(p) for p in order)
        self._check_order(order)
        for (i, j, k) in roots:
            box = (i * SCALE, (i + 1) * SCALE, j * SCALE, (j + 1) * SCALE,
                   k * SCALE, (k + 1) * SCALE)
            self._add(box, order, None, (0, 0, 0))

    @classmethod
    def box_grid(cls, n=(1, 1, 1), lo=(0.0, 0.0, 0.0), cell=1.0, **kw) -> "Mesh":
        roots = [(i, j, k) for k in range(n[2]) for j in range(n[1]) for i in range(n[0])]
        return cls(roots, origin=lo, cell=cell, **kw)

    # {{{ basic access

    def _add(self, ibox, order, parent, level) -> Element:
        el = Element(self._next_id, tuple(int(v) for v in ibox), order, parent, [],
                     RefFlag.NONE, level)
        self.elements[el.id] = el
        self._next_id += 1
        return el

    def _bump(self):
        self.generation += 1
        self._topo = None

    def _check_order(self, order):
        if len(order) != 3 or any(p < 1 or p > self.p_max for p in order):
            raise MeshError(f"order {order} outside [1, {self.p_max}]")

    def __getitem__(self, eid) -> Element:
        try:
            return self.elements[eid]
        except KeyError:
            raise MeshError(f"unknown element id {eid}") from None

    @property
    def leaves(self) -> list:
        return [e.id for e in self.elements.values() if not e.children]

    def leaf_array(self):
        """``(ids, iboxes, orders)`` arrays for the current leaves, sorted by id."""
        els = [e for e in self.elements.values() if not e.children]
        ids = np.array([e.id for e in els], dtype=np.int64)
        boxes = np.array([e.ibox for e in els], dtype=np.int64).reshape(-1, 6)
        orders = np.array([e.order for e in els], dtype=np.int64).reshape(-1, 3)
        return ids, boxes, orders

    def box(self, eid) -> np.ndarray:
        """Physical box ``[x0, x1, y0, y1, z0, z1]``."""
        ib = np.asarray(self[eid].ibox, dtype=float)
        o = np.repeat(self.origin, 2)
        return o + self.cell * ib / SCALE

    def extents(self, eid) -> np.ndarray:
        b = self.box(eid)
        return b[1::2] - b[0::2]

    def physical(self, ivals) -> np.ndarray:
        """Map integer coordinates (last axis of length 3) to physical ones."""
        return self.origin + self.cell * np.asarray(ivals, dtype=float) / SCALE

    def descendants(self, eid) -> list:
        """Leaf descendants of ``eid`` (itself if a leaf)."""
        out, stack = [], [eid]
        while stack:
            e = self[stack.pop()]
            if e.children:
                stack.extend(reversed(e.children))
            else:
                out.append(e.id)
        return sorted(out)

    def volume(self) -> float:
        ids, boxes, _ = self.leaf_array()
        ext = (boxes[:, 1::2] - boxes[:, 0::2]).astype(float) * (self.cell / SCALE)
        return float(np.sum(np.prod(ext, axis=1)))

    @property
    def topology(self):
        from .topology import Topology
        if self._topo is None or self._topo.generation != self.generation:
            self._topo = Topology(self)
        return self._topo

    # }}}

    # {{{ serialization and snapshots

    def serialize(self) -> str:
        lines = []
        for eid in sorted(self.elements):
            e = self.elements[eid]
            parent = -1 if e.parent is None else e.parent
            coords = " ".join(str(v) for v in e.ibox)
            px, py, pz = e.order
            lines.append(f"{e.id} {parent} {e.ref_flag.name} {coords} {px} {py} {pz}")
        return "\n".join(lines) + "\n"

    def snapshot(self) -> Snapshot:
        state = (copy.deepcopy(self.elements), self._next_id)
        return Snapshot(self.lineage, self.serialize(), state)

    def copy(self) -> "Mesh":
        other = copy.copy(self)
        other.elements = copy.deepcopy(self.elements)
        other._topo = None
        return other

    # }}}

    # {{{ mutation

    def set_order(self, eid, order):
        e = self[eid]
        if e.children:
            raise MeshError(f"element {eid} is not a leaf")
        order = tuple(int(p) for p in order)
        self._check_order(order)
        e.order = order
        self._bump()

    def _refine(self, eid, flag: RefFlag, child_orders=None) -> list:
        e = self[eid]
        if e.children:
            raise MeshError(f"element {eid} is not a leaf")
        if flag is RefFlag.NONE:
            raise MeshError("cannot refine with NONE")
        kids = []
        for c, cbox in enumerate(child_boxes(e.ibox, flag)):
            lev = tuple(e.level[d] + (1 if d in flag.axes else 0) for d in range(3))
            order = e.order if child_orders is None else tuple(int(p) for p in child_orders[c])
            self._check_order(order)
            kids.append(self._add(cbox, order, e.id, lev).id)
        e.children = kids
        e.ref_flag = flag
        return kids

    # }}}


def refine_with_closure(mesh: Mesh, requests, policy=UnwantedPolicy.MINIMAL,
                        child_orders=None) -> RefinementReport:
    """Execute requested refinements, then restore one-irregularity.

    ``requests`` is a sequence of ``(element id, RefFlag)``.  ``child_orders``
    optionally maps a requested id to the list of its children's orders.
    Unwanted refinements copy the parent's order.
    """
    requests = [(int(eid), RefFlag(flag)) for eid, flag in requests]
    seen = set()
    for eid, flag in requests:
        e = mesh[eid]
        if e.children:
            raise MeshError(f"element {eid} is not a leaf")
        if flag is RefFlag.NONE:
            raise MeshError(f"NONE requested for element {eid}")
        if eid in seen:
            raise MeshError(f"element {eid} requested twice")
        seen.add(eid)
    report = RefinementReport()
    if not requests:
        return report
    child_orders = child_orders or {}
    for eid, flag in requests:
        mesh._refine(eid, flag, child_orders.get(eid))
        report.entries.append((eid, flag, True))
    mesh._bump()

    nlim = len(mesh.elements)
    cap = max(nlim * nlim, 64)
    passes = 0
    while True:
        passes += 1
        if passes > cap:
            raise RuntimeError("closure did not reach a fixed point")
        todo = mesh.topology.closure_violations()
        if not todo:
            break
        for eid in sorted(todo):
            axes = todo[eid]
            if policy is UnwantedPolicy.ISOTROPIC:
                axes = _isotropic_axes(mesh[eid].level, axes)
            flag = RefFlag.from_axes(axes)
            mesh._refine(eid, flag)
            report.entries.append((eid, flag, False))
        mesh._bump()
    report.closure_passes = passes
    log.debug("closure: %d passes, %d unwanted", passes, len(report.unwanted))
    return report


def _isotropic_axes(level, axes):
    """Required axes plus every axis not already finer than all of them.

    Plain h8 would keep splitting directions that are already fine and the
    closure would never settle on anisotropic meshes.
    """
    top = max(level[d] for d in axes)
    return tuple(d for d in range(3) if d in axes or level[d] <= top)


def unrefine(mesh: Mesh, snap: Snapshot) -> Mesh:
    """Restore ``mesh`` in place to the state recorded in ``snap``."""
    if snap.lineage != mesh.lineage:
        raise MeshError("snapshot belongs to a different mesh lineage")
    elements, next_id = snap.state
    mesh.elements = copy.deepcopy(elements)
    mesh._next_id = next_id
    mesh._bump()
    return mesh


def set_order(mesh: Mesh, eid, order):
    mesh.set_order(eid, order)


def neighbors_across_face(mesh: Mesh, eid, face: int):
    """Leaves adjacent to ``eid`` across local face ``face`` (``2 * axis + side``).

    Returns ``[(leaf id, placement)]``; placement gives the neighbor face's
    rectangle as ``((c_a, w_a), (c_b, w_b))`` fractions of this element's
    face along the two tangential axes (increasing axis order).
    """
    if not 0 <= face < 6:
        raise MeshError(f"face index {face} out of range")
    if mesh[eid].children:
        raise MeshError(f"element {eid} is not a leaf")
    return mesh.topology.neighbors(eid, face)
