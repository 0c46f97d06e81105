"""TSDF fusion, visibility ray marching, 2D occupancy, frontiers and grid path planning."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .frames import Keyframe

UNKNOWN, FREE, OCCUPIED = 0, 1, 2
SQRT2 = math.sqrt(2.0)


@dataclass
class GridSpec:
    """Geometry of the 2D cell grid; cell (ix, iy) covers [origin + i*cell, origin + (i+1)*cell)."""

    origin: np.ndarray
    cell: float
    nx: int
    ny: int

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(2)

    def cell_of(self, xy) -> tuple[int, int]:
        ij = np.floor((np.asarray(xy[:2], dtype=np.float64) - self.origin) / self.cell).astype(int)
        return int(ij[0]), int(ij[1])

    def center(self, ix: int, iy: int) -> np.ndarray:
        return self.origin + (np.array([ix, iy], dtype=np.float64) + 0.5) * self.cell

    def centers(self, cells) -> np.ndarray:
        return self.origin + (np.asarray(cells, dtype=np.float64).reshape(-1, 2) + 0.5) * self.cell

    def inside(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.nx and 0 <= iy < self.ny

    @classmethod
    def covering(cls, lo, hi, cell: float = 0.1, margin: float = 0.5) -> "GridSpec":
        lo = np.floor((np.asarray(lo[:2]) - margin) / cell) * cell
        hi = np.asarray(hi[:2]) + margin
        n = np.ceil((hi - lo) / cell).astype(int)
        return cls(lo, cell, int(n[0]), int(n[1]))


@dataclass
class TsdfGrid:
    origin: np.ndarray
    voxel_size: float
    values: np.ndarray
    weights: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def trunc(self) -> float:
        return 4.0 * self.voxel_size

    @classmethod
    def create(cls, origin, dims, voxel_size: float = 0.05) -> "TsdfGrid":
        dims = tuple(int(d) for d in dims)
        return cls(
            origin=np.asarray(origin, dtype=np.float64).reshape(3),
            voxel_size=float(voxel_size),
            values=np.full(dims, 4.0 * voxel_size),
            weights=np.zeros(dims),
        )

    @classmethod
    def for_grid(cls, grid: GridSpec, height: float = 2.6, voxel_size: float = 0.05) -> "TsdfGrid":
        per = int(round(grid.cell / voxel_size))
        return cls.create(
            [grid.origin[0], grid.origin[1], -2 * voxel_size],
            (grid.nx * per, grid.ny * per, int(math.ceil(height / voxel_size)) + 2),
            voxel_size,
        )

    def copy(self) -> "TsdfGrid":
        return TsdfGrid(self.origin.copy(), self.voxel_size, self.values.copy(), self.weights.copy())

    def voxel_of(self, p) -> tuple[int, int, int]:
        ijk = np.floor((np.asarray(p, dtype=np.float64) - self.origin) / self.voxel_size).astype(int)
        return int(ijk[0]), int(ijk[1]), int(ijk[2])

    def is_blocked_at(self, p) -> bool:
        """True when ``p`` lies in an observed voxel behind a surface."""
        i, j, k = self.voxel_of(p)
        nx, ny, nz = self.dims
        if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
            return False
        return bool(self.weights[i, j, k] > 0 and self.values[i, j, k] < 0)


@numba.njit(cache=True)
def _integrate(values, weights, origin, vs, trunc, R, t, fx, fy, cx, cy, depth):
    nx, ny, nz = values.shape
    h, w = depth.shape
    for i in range(nx):
        px = origin[0] + (i + 0.5) * vs
        for j in range(ny):
            py = origin[1] + (j + 0.5) * vs
            for k in range(nz):
                pz = origin[2] + (k + 0.5) * vs
                zc = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
                if zc <= 1e-6:
                    continue
                xc = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
                yc = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
                u = int(math.floor(fx * xc / zc + cx + 0.5))
                v = int(math.floor(fy * yc / zc + cy + 0.5))
                if u < 0 or u >= w or v < 0 or v >= h:
                    continue
                d = depth[v, u]
                if d <= 0.0:
                    continue
                sdf = d - zc
                if sdf < -trunc:
                    continue
                if sdf > trunc:
                    sdf = trunc
                wt = weights[i, j, k]
                values[i, j, k] = (values[i, j, k] * wt + sdf) / (wt + 1.0)
                weights[i, j, k] = wt + 1.0


def integrate_depth(tsdf: TsdfGrid, frame: Keyframe) -> TsdfGrid:
    """Fuse one depth frame in place (and return the grid)."""
    if not np.any(frame.depth > 0):
        return tsdf
    cam = frame.camera
    _integrate(
        tsdf.values, tsdf.weights, tsdf.origin, tsdf.voxel_size, tsdf.trunc,
        cam.R_cw, cam.t_cw, cam.fx, cam.fy, cam.cx, cam.cy, np.ascontiguousarray(frame.depth, dtype=np.float64),
    )
    return tsdf


@numba.njit(cache=True)
def _march(values, weights, origin, vs, a, b):
    nx, ny, nz = values.shape
    d0 = b[0] - a[0]
    d1 = b[1] - a[1]
    d2 = b[2] - a[2]
    dist = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    limit = dist - vs
    if limit < 0.0:
        return True
    step = 0.5 * vs
    n = int(math.floor(limit / step))
    inv = 1.0 / dist if dist > 0 else 0.0
    for s in range(n + 1):
        r = s * step
        i = int(math.floor((a[0] + d0 * inv * r - origin[0]) / vs))
        j = int(math.floor((a[1] + d1 * inv * r - origin[1]) / vs))
        k = int(math.floor((a[2] + d2 * inv * r - origin[2]) / vs))
        if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
            continue
        if weights[i, j, k] > 0.0 and values[i, j, k] < 0.0:
            return False
    return True


@numba.njit(cache=True)
def _march_many(values, weights, origin, vs, starts, ends):
    out = np.empty(starts.shape[0], dtype=np.bool_)
    for r in range(starts.shape[0]):
        out[r] = _march(values, weights, origin, vs, starts[r], ends[r])
    return out


def ray_visible(tsdf: TsdfGrid, a, b) -> bool:
    """March from ``a`` to ``b`` at half-voxel steps; blocked by observed negative voxels.

    The last voxel before ``b`` is not tested, so a point on a surface counts as visible.
    """
    return bool(_march(tsdf.values, tsdf.weights, tsdf.origin, tsdf.voxel_size,
                       np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))


def rays_visible(tsdf: TsdfGrid, starts, ends) -> np.ndarray:
    starts = np.ascontiguousarray(np.broadcast_to(np.asarray(starts, dtype=np.float64), np.shape(ends)))
    return _march_many(tsdf.values, tsdf.weights, tsdf.origin, tsdf.voxel_size,
                       starts, np.ascontiguousarray(ends, dtype=np.float64))


@dataclass
class OccupancyGrid:
    grid: GridSpec
    states: np.ndarray  # (nx, ny) uint8 of UNKNOWN / FREE / OCCUPIED
    z_min: float = 0.1
    z_max: float = 1.5

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.grid, self.states.copy(), self.z_min, self.z_max)


def occupancy_from_tsdf(tsdf: TsdfGrid, grid: GridSpec, z_min: float = 0.1, z_max: float = 1.5) -> OccupancyGrid:
    """Height-slice projection: occupied if any observed negative voxel, free if observed and none."""
    per = int(round(grid.cell / tsdf.voxel_size))
    zc = tsdf.origin[2] + (np.arange(tsdf.dims[2]) + 0.5) * tsdf.voxel_size
    ks = np.flatnonzero((zc >= z_min) & (zc <= z_max))
    w = tsdf.weights[: grid.nx * per, : grid.ny * per, ks]
    v = tsdf.values[: grid.nx * per, : grid.ny * per, ks]
    obs = (w > 0).reshape(grid.nx, per, grid.ny, per, -1).any(axis=(1, 3, 4))
    neg = ((w > 0) & (v < 0)).reshape(grid.nx, per, grid.ny, per, -1).any(axis=(1, 3, 4))
    states = np.full((grid.nx, grid.ny), UNKNOWN, dtype=np.uint8)
    states[obs] = FREE
    states[neg] = OCCUPIED
    return OccupancyGrid(grid, states, z_min, z_max)


@dataclass
class FrontierCluster:
    cells: np.ndarray  # (k, 2) int cell indices, lexicographically sorted
    centroid: np.ndarray  # world xy
    normal: np.ndarray  # unit world xy pointing toward unknown space


_N4 = ((1, 0), (-1, 0), (0, 1), (0, -1))


def frontier_mask(states: np.ndarray) -> np.ndarray:
    unknown = states == UNKNOWN
    nb = np.zeros_like(unknown)
    nb[1:, :] |= unknown[:-1, :]
    nb[:-1, :] |= unknown[1:, :]
    nb[:, 1:] |= unknown[:, :-1]
    nb[:, :-1] |= unknown[:, 1:]
    return (states == FREE) & nb


def extract_frontiers(occ: OccupancyGrid, min_size: int = 5) -> list[FrontierCluster]:
    """Free cells 4-adjacent to unknown, grouped into 8-connected clusters of at least ``min_size``."""
    mask = frontier_mask(occ.states)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    unknown = occ.states == UNKNOWN
    nx, ny = unknown.shape
    out = []
    for lab in range(1, n + 1):
        cells = np.argwhere(labels == lab)
        if len(cells) < min_size:
            continue
        normal = np.zeros(2)
        for ix, iy in cells:
            for dx, dy in _N4:
                jx, jy = ix + dx, iy + dy
                if 0 <= jx < nx and 0 <= jy < ny and unknown[jx, jy]:
                    normal += (dx, dy)
        norm = np.linalg.norm(normal)
        normal = normal / norm if norm > 1e-9 else np.array([1.0, 0.0])
        out.append(FrontierCluster(cells=cells, centroid=occ.grid.centers(cells).mean(axis=0), normal=normal))
    return out


_N8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def _neighbors(passable: np.ndarray, ix: int, iy: int):
    nx, ny = passable.shape
    for dx, dy in _N8:
        jx, jy = ix + dx, iy + dy
        if not (0 <= jx < nx and 0 <= jy < ny) or not passable[jx, jy]:
            continue
        if dx and dy and not (passable[ix + dx, iy] and passable[ix, iy + dy]):
            continue  # no corner cutting
        yield jx, jy, (SQRT2 if dx and dy else 1.0)


def distance_field(passable: np.ndarray, source) -> np.ndarray:
    """Dijkstra distances in cells from ``source`` over passable cells (inf elsewhere)."""
    dist = np.full(passable.shape, np.inf)
    sx, sy = source
    if not passable[sx, sy]:
        return dist
    dist[sx, sy] = 0.0
    heap = [(0.0, sx, sy)]
    while heap:
        d, ix, iy = heapq.heappop(heap)
        if d > dist[ix, iy]:
            continue
        for jx, jy, c in _neighbors(passable, ix, iy):
            nd = d + c
            if nd < dist[jx, jy] - 1e-12:
                dist[jx, jy] = nd
                heapq.heappush(heap, (nd, jx, jy))
    return dist


def plan_path(occ_or_passable, start, goal) -> list[tuple[int, int]] | None:
    """Shortest 8-connected cell path from ``start`` to ``goal``; ``None`` when unreachable.

    Accepts an OccupancyGrid (free cells passable, unknown blocked) or a boolean
    passability array. Among equal-cost paths the lexicographically smallest
    cell sequence wins.
    """
    passable = occ_or_passable.states == FREE if isinstance(occ_or_passable, OccupancyGrid) else occ_or_passable
    start, goal = tuple(int(v) for v in start), tuple(int(v) for v in goal)
    if not (passable[start] and passable[goal]):
        return None
    if start == goal:
        return [start]
    to_goal = distance_field(passable, goal)
    if not np.isfinite(to_goal[start]):
        return None
    path = [start]
    cur = start
    while cur != goal:
        best = None
        for jx, jy, c in _neighbors(passable, *cur):
            if abs(to_goal[cur] - c - to_goal[jx, jy]) < 1e-9 and (best is None or (jx, jy) < best):
                best = (jx, jy)
        cur = best
        path.append(cur)
    return path


def path_length(path, cell: float) -> float:
    total = 0.0
    for (ax, ay), (bx, by) in zip(path, path[1:]):
        total += SQRT2 if ax != bx and ay != by else 1.0
    return total * cell


def inflate(occupied: np.ndarray, radius_cells: int) -> np.ndarray:
    if radius_cells <= 0:
        return occupied.copy()
    r = radius_cells
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return ndimage.binary_dilation(occupied, structure=(xx**2 + yy**2) <= r * r)
