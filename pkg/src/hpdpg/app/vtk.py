"""ASCII VTK unstructured-grid (.vtu) output of leaf hexahedra."""
from __future__ import annotations

import numpy as np

from ..spaces import evaluate_l2

VTK_HEXAHEDRON = 12
# corner order expected by VTK for a hexahedron, as (ix, iy, iz)
_CORNERS = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
            (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))


def _array(name, values, fmt, ncomp=1, kind="Float64"):
    body = " ".join(fmt % v for v in np.asarray(values).ravel())
    comp = f' NumberOfComponents="{ncomp}"' if ncomp > 1 else ""
    return (f'<DataArray type="{kind}" Name="{name}"{comp} format="ascii">\n'
            f"{body}\n</DataArray>\n")


def export_vtk(path, mesh, fields=None, eta=None):
    """Write leaves of ``mesh`` as hexahedra with order and residual cell data.

    ``fields`` maps element ids to field coefficients; when given, ``u`` is
    sampled at the (unshared) cell corners.  Returns the number of cells.
    """
    ids = sorted(mesh.leaves)
    pts, u = [], []
    for eid in ids:
        b = mesh.box(eid)
        for c in _CORNERS:
            pts.append([b[2 * d + c[d]] for d in range(3)])
        if fields is not None:
            coef = fields[eid]
            jac = float(np.prod(mesh.extents(eid)))
            u.extend(evaluate_l2(coef[0], np.array(_CORNERS, dtype=float), jac))
    n = len(ids)
    orders = np.array([mesh[e].order for e in ids], dtype=np.int64).reshape(-1, 3)
    out = ['<?xml version="1.0"?>\n',
           '<VTKFile type="UnstructuredGrid" version="0.1" byte_order="LittleEndian">\n',
           "<UnstructuredGrid>\n",
           f'<Piece NumberOfPoints="{8 * n}" NumberOfCells="{n}">\n',
           "<Points>\n", _array("Points", pts, "%.17g", 3), "</Points>\n",
           "<Cells>\n",
           _array("connectivity", np.arange(8 * n), "%d", kind="Int64"),
           _array("offsets", 8 * np.arange(1, n + 1), "%d", kind="Int64"),
           _array("types", np.full(n, VTK_HEXAHEDRON), "%d", kind="UInt8"),
           "</Cells>\n", "<CellData>\n"]
    for k, name in enumerate(("px", "py", "pz")):
        out.append(_array(name, orders[:, k], "%d", kind="Int32"))
    out.append(_array("id", ids, "%d", kind="Int64"))
    if eta is not None:
        out.append(_array("eta", [eta.get(e, 0.0) for e in ids], "%.17g"))
    out.append("</CellData>\n")
    if fields is not None:
        out += ["<PointData>\n", _array("u", u, "%.17g"), "</PointData>\n"]
    out += ["</Piece>\n", "</UnstructuredGrid>\n", "</VTKFile>\n"]
    with open(path, "w") as fh:
        fh.write("".join(out))
    return n


def read_vtu_counts(path):
    """``(points, cells)`` from a file written by :func:`export_vtk`."""
    import xml.etree.ElementTree as ET
    piece = ET.parse(path).getroot().find("UnstructuredGrid/Piece")
    return int(piece.get("NumberOfPoints")), int(piece.get("NumberOfCells"))
