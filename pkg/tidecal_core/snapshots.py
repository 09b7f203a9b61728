# tidecal_core/snapshots.py
"""
Legacy-VTK structured-points snapshots of the cell pressure field.
Cell data are written x-fastest; cells outside the section hold NaN.
"""

import re
from dataclasses import dataclass

import numpy as np

from tidecal_core.errors import MalformedInput
from tidecal_core.utils import atomic_write_text

_TITLE = "tidecal pressure snapshot t={t!r}"


@dataclass
class Snapshot:
    t: float
    x_edges: np.ndarray
    y_edges: np.ndarray
    pressure: np.ndarray    # (ny, nx) Pa

    @property
    def x_centres(self):
        return 0.5 * (self.x_edges[:-1] + self.x_edges[1:])

    @property
    def y_centres(self):
        return 0.5 * (self.y_edges[:-1] + self.y_edges[1:])

    def value_at(self, x, y):
        """Cell value containing (x, y); NaN outside the grid."""
        i = np.searchsorted(self.x_edges, x) - 1
        j = np.searchsorted(self.y_edges, y) - 1
        ok = (i >= 0) & (i < len(self.x_edges) - 1) & (j >= 0) & (j < len(self.y_edges) - 1)
        out = np.full(np.shape(x), np.nan)
        out[ok] = self.pressure[np.asarray(j)[ok], np.asarray(i)[ok]]
        return out


def format_snapshot_vtk(t, x_edges, y_edges, grid):
    ny, nx = grid.shape
    dx, dy = float(x_edges[1] - x_edges[0]), float(y_edges[1] - y_edges[0])
    lines = [
        "# vtk DataFile Version 3.0",
        _TITLE.format(t=float(t)),
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx + 1} {ny + 1} 1",
        f"ORIGIN {float(x_edges[0])!r} {float(y_edges[0])!r} 0",
        f"SPACING {dx!r} {dy!r} 1",
        f"CELL_DATA {nx * ny}",
        "SCALARS pressure_Pa double 1",
        "LOOKUP_TABLE default",
    ]
    lines.extend(" ".join("nan" if np.isnan(v) else repr(float(v)) for v in row) for row in grid)
    return "\n".join(lines) + "\n"


def write_snapshot_vtk(path, t, mesh, grid):
    atomic_write_text(path, format_snapshot_vtk(t, mesh.x_edges, mesh.y_edges, grid))


def read_snapshot_vtk(path) -> Snapshot:
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
    except OSError as e:
        raise MalformedInput(path, str(e)) from e
    try:
        m = re.search(r"t=([-+0-9.eEinfa]+)", lines[1])
        t = float(m.group(1)) if m else float("nan")
        header = {ln.split()[0]: ln.split()[1:] for ln in lines[2:10] if ln.strip()}
        nx, ny = int(header["DIMENSIONS"][0]) - 1, int(header["DIMENSIONS"][1]) - 1
        x0, y0 = float(header["ORIGIN"][0]), float(header["ORIGIN"][1])
        dx, dy = float(header["SPACING"][0]), float(header["SPACING"][1])
        values = np.array([float(v) for ln in lines[10:] for v in ln.split()])
        if values.size != nx * ny:
            raise ValueError(f"expected {nx * ny} cell values, found {values.size}")
    except (KeyError, IndexError, ValueError) as e:
        raise MalformedInput(path, f"not a tidecal VTK snapshot ({e})") from e
    return Snapshot(t, x0 + dx * np.arange(nx + 1), y0 + dy * np.arange(ny + 1), values.reshape(ny, nx))
