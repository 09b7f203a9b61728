"""
mesh.py — structured cell-centred grid clipped to the cross-section polygon.

Cells are active when their centre lies inside the section. Every active cell
belongs to exactly one zone; every face between an active cell and an inactive
(or out-of-grid) neighbour is a boundary face tagged with the condition of the
nearest polygon edge.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from matplotlib.path import Path as MplPath
from scipy import ndimage

from tidal_cheat_sheet import TIDAL_SHEET
from tidecal_core.dike_model import DikeModel, point_segment_distance
from tidecal_core.errors import MeshTooCoarseWarning, ModelConfigError
from tidecal_core.utils import debug

MIN_CELLS = TIDAL_SHEET["solver"]["min_cells_per_zone"]


@dataclass
class FaceSet:
    a: np.ndarray           # owner cell
    b: np.ndarray           # neighbour cell (-1 on boundary faces)
    direction: np.ndarray   # 0 = x-normal, 1 = y-normal
    trans: np.ndarray       # face length / centre distance
    xf: np.ndarray
    yf: np.ndarray
    tag: np.ndarray = None  # boundary faces only
    edge: np.ndarray = None

    def __len__(self):
        return len(self.a)


@dataclass
class Mesh:
    x_edges: np.ndarray
    y_edges: np.ndarray
    active: np.ndarray      # (ny, nx)
    index: np.ndarray       # (ny, nx), -1 where inactive
    xc: np.ndarray          # per active cell
    yc: np.ndarray
    zone: np.ndarray
    interior: FaceSet
    boundary: FaceSet

    @property
    def dx(self):
        return float(self.x_edges[1] - self.x_edges[0])

    @property
    def dy(self):
        return float(self.y_edges[1] - self.y_edges[0])

    @property
    def n_cells(self):
        return len(self.xc)

    @property
    def cell_area(self):
        return self.dx * self.dy

    @property
    def x_centres(self):
        return 0.5 * (self.x_edges[:-1] + self.x_edges[1:])

    @property
    def y_centres(self):
        return 0.5 * (self.y_edges[:-1] + self.y_edges[1:])

    def to_grid(self, values):
        """Per-cell values onto the (ny, nx) grid, NaN where inactive."""
        grid = np.full(self.active.shape, np.nan)
        grid[self.active] = np.asarray(values)[self.index[self.active]]
        return grid

    def fill_inactive(self, grid):
        """Copy the nearest active value into inactive grid points."""
        _, idx = ndimage.distance_transform_edt(~self.active, return_indices=True)
        return grid[tuple(idx)]

    def locate(self, x, y):
        i = int(np.clip(np.searchsorted(self.x_edges, x) - 1, 0, len(self.x_edges) - 2))
        j = int(np.clip(np.searchsorted(self.y_edges, y) - 1, 0, len(self.y_edges) - 2))
        return int(self.index[j, i])

    def zone_mask(self, k):
        return self.zone == k


def _axis_edges(lo, hi, h):
    n = max(1, int(math.ceil((hi - lo) / h - 1e-9)))
    return lo + h * np.arange(n + 1)


def _assign_zones(model, pts):
    tol = 1e-9
    strict = np.zeros((len(model.zones), len(pts)), dtype=bool)
    near = np.zeros_like(strict)
    for k, z in enumerate(model.zones):
        poly = np.asarray(z.region)
        inside = MplPath(poly).contains_points(pts)
        on_edge = np.zeros(len(pts), dtype=bool)
        for i in range(len(poly)):
            on_edge |= point_segment_distance(pts, poly[i], poly[(i + 1) % len(poly)]) <= tol
        strict[k] = inside & ~on_edge
        near[k] = on_edge
    counts = strict.sum(axis=0)
    if np.any(counts > 1):
        j = int(np.flatnonzero(counts > 1)[0])
        raise ModelConfigError(f"zones overlap at cell centre ({pts[j][0]:.3f}, {pts[j][1]:.3f})")
    covered = strict | near
    if not np.all(covered.any(axis=0)):
        j = int(np.flatnonzero(~covered.any(axis=0))[0])
        raise ModelConfigError(f"no zone covers cell centre ({pts[j][0]:.3f}, {pts[j][1]:.3f})")
    return np.where(strict.any(axis=0), strict.argmax(axis=0), near.argmax(axis=0))


def build_mesh(model: DikeModel, dx=None, dy=None, context=None) -> Mesh:
    dx = float(dx or model.dx)
    dy = float(dy or model.dy)
    xmin, xmax, ymin, ymax = model.bounds()
    xe, ye = _axis_edges(xmin, xmax, dx), _axis_edges(ymin, ymax, dy)
    xc_all, yc_all = 0.5 * (xe[:-1] + xe[1:]), 0.5 * (ye[:-1] + ye[1:])
    X, Y = np.meshgrid(xc_all, yc_all)
    active = MplPath(np.asarray(model.polygon)).contains_points(
        np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)
    if not active.any():
        raise ModelConfigError("grid has no active cell; check polygon and grid spacing")

    index = np.full(active.shape, -1, dtype=int)
    index[active] = np.arange(int(active.sum()))
    xc, yc = X[active], Y[active]
    zone = _assign_zones(model, np.column_stack([xc, yc]))

    # --- interior faces ----------------------------------------------------
    hx = active[:, :-1] & active[:, 1:]
    vy = active[:-1, :] & active[1:, :]
    jx, ix = np.nonzero(hx)
    jy, iy = np.nonzero(vy)
    interior = FaceSet(
        a=np.concatenate([index[jx, ix], index[jy, iy]]),
        b=np.concatenate([index[jx, ix + 1], index[jy + 1, iy]]),
        direction=np.concatenate([np.zeros(len(jx), int), np.ones(len(jy), int)]),
        trans=np.concatenate([np.full(len(jx), dy / dx), np.full(len(jy), dx / dy)]),
        xf=np.concatenate([xe[ix + 1], xc_all[iy]]),
        yf=np.concatenate([yc_all[jx], ye[jy + 1]]),
    )

    # --- boundary faces ----------------------------------------------------
    pad = np.pad(active, 1, constant_values=False)
    core = pad[1:-1, 1:-1]
    sides = {
        "west": (core & ~pad[1:-1, :-2], 0, lambda j, i: (xe[i], yc_all[j])),
        "east": (core & ~pad[1:-1, 2:], 0, lambda j, i: (xe[i + 1], yc_all[j])),
        "south": (core & ~pad[:-2, 1:-1], 1, lambda j, i: (xc_all[i], ye[j])),
        "north": (core & ~pad[2:, 1:-1], 1, lambda j, i: (xc_all[i], ye[j + 1])),
    }
    cells, dirs, xs, ys = [], [], [], []
    for mask, direction, centre in sides.values():
        j, i = np.nonzero(mask)
        fx, fy = centre(j, i)
        cells.append(index[j, i])
        dirs.append(np.full(len(j), direction))
        xs.append(np.asarray(fx, dtype=float))
        ys.append(np.asarray(fy, dtype=float))
    bcell, bdir = np.concatenate(cells), np.concatenate(dirs)
    bx, by = np.concatenate(xs), np.concatenate(ys)

    edges = model.edges()
    dist = np.column_stack([point_segment_distance(np.column_stack([bx, by]), a, b) for a, b, _ in edges])
    nearest = dist.argmin(axis=1)
    tags = np.array([edges[k][2] for k in nearest])
    boundary = FaceSet(
        a=bcell, b=np.full(len(bcell), -1), direction=bdir,
        trans=np.where(bdir == 0, dy / (0.5 * dx), dx / (0.5 * dy)),
        xf=bx, yf=by, tag=tags, edge=nearest,
    )

    mesh = Mesh(xe, ye, active, index, xc, yc, zone, interior, boundary)
    _check_resolution(model, mesh, context)
    debug(context, f"[MESH] {mesh.n_cells} cells ({len(xc_all)}x{len(yc_all)} grid, dx={dx}, dy={dy}), "
                   f"{len(interior)} interior / {len(boundary)} boundary faces", level="DEBUG")
    return mesh


def _check_resolution(model, mesh, context):
    cols = np.searchsorted(mesh.x_edges, mesh.xc) - 1
    rows = np.searchsorted(mesh.y_edges, mesh.yc) - 1
    for k, z in enumerate(model.zones):
        mask = mesh.zone == k
        span = min(len(np.unique(cols[mask])), len(np.unique(rows[mask]))) if mask.any() else 0
        if span < MIN_CELLS:
            msg = f"zone '{z.name or k}' spans only {span} cell(s) across; refine dx/dy"
            warnings.warn(msg, MeshTooCoarseWarning, stacklevel=3)
            debug(context, f"[MESH] ⚠️ {msg}", level="WARNING")
