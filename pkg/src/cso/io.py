"""TetGen-style node/ele files and legacy VTK output."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from cso.errors import ParseError
from cso.mesh import TetMesh

VTK_TETRA = 10
VTK_TRIANGLE = 5
VTK_QUADRATIC_TRIANGLE = 22


def _data_rows(path: Path):
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if text:
            yield lineno, text.split()


def _read_table(path: Path, width: int, kind: str, parse):
    rows = list(_data_rows(path))
    if not rows:
        raise ParseError(f"{path.name}: empty {kind} file")
    # optional header "<count> <dim> ...": its first token is the row count
    first_line, first = rows[0]
    if len(rows) > 1 and first[0].lstrip("-").isdigit() and int(first[0]) == len(rows) - 1:
        rows = rows[1:]
    elif len(first) != width + 1:
        raise ParseError(f"{path.name}: malformed header or first row", first_line)
    out = np.empty((len(rows), width), dtype=float if parse is float else np.int64)
    for k, (lineno, tok) in enumerate(rows):
        if len(tok) != width + 1:
            raise ParseError(
                f"{path.name}: {kind} row has {len(tok) - 1} entries, expected {width}", lineno
            )
        try:
            idx = int(tok[0])
            vals = [parse(x) for x in tok[1:]]
        except ValueError as exc:
            raise ParseError(f"{path.name}: cannot parse {kind} row", lineno) from exc
        if idx != k:
            raise ParseError(f"{path.name}: expected index {k}, found {idx}", lineno)
        out[k] = vals
    return out


def read_mesh(path) -> TetMesh:
    """Read ``<path>.node`` and ``<path>.ele`` (0-based indices).

    ``path`` may name either file or the common stem.
    """
    stem = Path(path)
    if stem.suffix in (".node", ".ele"):
        stem = stem.with_suffix("")
    node_path = stem.with_suffix(".node")
    ele_path = stem.with_suffix(".ele")
    vertices = _read_table(node_path, 3, "node", float)
    tets = _read_table(ele_path, 4, "ele", int)
    if tets.size and (tets.min() < 0 or tets.max() >= len(vertices)):
        bad = int(np.flatnonzero((tets < 0).any(axis=1) | (tets >= len(vertices)).any(axis=1))[0])
        raise ParseError(f"{ele_path.name}: element {bad} references a missing vertex")
    return TetMesh(vertices, tets)


def write_mesh(mesh: TetMesh, path) -> None:
    stem = Path(path)
    if stem.suffix in (".node", ".ele"):
        stem = stem.with_suffix("")
    stem.parent.mkdir(parents=True, exist_ok=True)
    with open(stem.with_suffix(".node"), "w") as fh:
        fh.write(f"{mesh.n_vertices} 3 0 0\n")
        for i, (x, y, z) in enumerate(mesh.vertices):
            fh.write(f"{i} {float(x)!r} {float(y)!r} {float(z)!r}\n")
    with open(stem.with_suffix(".ele"), "w") as fh:
        fh.write(f"{mesh.n_tets} 4 0\n")
        for i, t in enumerate(mesh.tets):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]} {t[3]}\n")


def _write_point_data(fh, n_points: int, fields: dict | None) -> None:
    if not fields:
        return
    fh.write(f"POINT_DATA {n_points}\n")
    for name, values in fields.items():
        arr = np.asarray(values, dtype=float)
        name = str(name).replace(" ", "_")
        if arr.ndim == 1 and len(arr) == n_points:
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, arr[:, None], fmt="%.17g")
        else:
            arr = arr.reshape(n_points, 3)
            fh.write(f"VECTORS {name} double\n")
            np.savetxt(fh, arr, fmt="%.17g")


def _write_grid(path, points, cells, cell_type, fields, title):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cells = np.asarray(cells, dtype=np.int64)
    k = cells.shape[1]
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(points)} double\n")
        np.savetxt(fh, np.asarray(points, dtype=float), fmt="%.17g")
        fh.write(f"CELLS {len(cells)} {len(cells) * (k + 1)}\n")
        np.savetxt(fh, np.column_stack([np.full(len(cells), k), cells]), fmt="%d")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        np.savetxt(fh, np.full((len(cells), 1), cell_type), fmt="%d")
        _write_point_data(fh, len(points), fields)


def write_vtk(mesh: TetMesh, fields: dict | None, path) -> None:
    """Legacy ASCII VTK with tetra cells; per-vertex scalar or vector fields."""
    _write_grid(path, mesh.vertices, mesh.tets, VTK_TETRA, fields, "cso tetrahedral mesh")


def write_surface_vtk(points, triangles, path, fields=None, quadratic: bool = False) -> None:
    """Triangle surface; ``quadratic`` cells list 3 corners then 3 edge nodes."""
    cell_type = VTK_QUADRATIC_TRIANGLE if quadratic else VTK_TRIANGLE
    _write_grid(path, points, triangles, cell_type, fields, "cso surface")
