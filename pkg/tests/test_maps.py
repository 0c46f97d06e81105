from collections import deque

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st
from scipy.sparse.csgraph import dijkstra

from conftest import axis_camera
from gsmem.frames import Keyframe
from gsmem.maps import (
    FREE, OCCUPIED, UNKNOWN, GridSpec, OccupancyGrid, TsdfGrid, extract_frontiers, inflate, integrate_depth,
    occupancy_from_tsdf, path_length, plan_path, ray_visible, rays_visible,
)

VS = 0.05


def wall_tsdf(z=2.0, size=48):
    """Camera frame == world frame, flat wall filling the view at depth ``z``."""
    cam = axis_camera(size, size / 2)
    frame = Keyframe(np.zeros((size, size, 3)), np.full((size, size), z), cam)
    tsdf = TsdfGrid.create([-0.5, -0.5, 0.0], (20, 20, 60), VS)
    return integrate_depth(tsdf, frame), frame


# ---------------------------------------------------------------- TSDF

def test_flat_wall_zero_crossing():
    tsdf, _ = wall_tsdf(2.0)
    zc = tsdf.origin[2] + (np.arange(tsdf.dims[2]) + 0.5) * VS
    for i, j in [(10, 10), (5, 12), (14, 3)]:
        col, w = tsdf.values[i, j], tsdf.weights[i, j]
        obs = np.flatnonzero(w > 0)
        k = obs[np.flatnonzero(np.diff(np.sign(col[obs])) != 0)[0]]
        assert abs(zc[k] - 2.0) <= VS and abs(zc[k + 1] - 2.0) <= VS
    assert np.all(np.abs(tsdf.values) <= tsdf.trunc + 1e-12)
    assert np.all(tsdf.weights >= 0)


def test_empty_depth_changes_nothing():
    cam = axis_camera(16)
    tsdf = TsdfGrid.create([-0.5, -0.5, 0.0], (10, 10, 20), VS)
    before = tsdf.copy()
    integrate_depth(tsdf, Keyframe(np.zeros((16, 16, 3)), np.zeros((16, 16)), cam))
    np.testing.assert_array_equal(tsdf.values, before.values)
    np.testing.assert_array_equal(tsdf.weights, before.weights)


def test_double_integration_doubles_weights():
    tsdf, frame = wall_tsdf(1.5)
    once = tsdf.copy()
    integrate_depth(tsdf, frame)
    np.testing.assert_allclose(tsdf.values, once.values, atol=1e-12)
    np.testing.assert_array_equal(tsdf.weights, 2 * once.weights)


# ---------------------------------------------------------------- visibility

def test_ray_visible_cases():
    empty = TsdfGrid.create([-0.5, -0.5, 0.0], (20, 20, 60), VS)
    assert ray_visible(empty, [0, 0, 0.5], [0, 0, 2.5])
    tsdf, _ = wall_tsdf(2.0)
    assert not ray_visible(tsdf, [0, 0, 0.5], [0, 0, 2.6])
    assert ray_visible(tsdf, [0, 0, 0.5], [0, 0, 2.0])
    assert ray_visible(tsdf, [0, 0, 0.5], [0, 0, 1.5])


@given(st.lists(st.floats(-0.45, 0.45), min_size=6, max_size=6))
def test_ray_visible_symmetric_in_empty_grid(c):
    empty = TsdfGrid.create([-0.5, -0.5, 0.0], (20, 20, 60), VS)
    a, b = np.array(c[:3]) + [0, 0, 1], np.array(c[3:]) + [0, 0, 1.5]
    assert ray_visible(empty, a, b) and ray_visible(empty, b, a)


@given(st.integers(0, 2**31 - 1))
def test_adding_obstacles_never_restores_visibility(seed):
    rng = np.random.default_rng(seed)
    tsdf = TsdfGrid.create([0, 0, 0], (12, 12, 12), 0.1)
    tsdf.weights[:] = 1.0
    tsdf.values[:] = 0.4
    starts = rng.uniform(0, 1.2, (30, 3))
    ends = rng.uniform(0, 1.2, (30, 3))
    before = rays_visible(tsdf, starts, ends)
    blocked = rng.random(tsdf.dims) < 0.05
    tsdf.values[blocked] = -0.1
    after = rays_visible(tsdf, starts, ends)
    assert not np.any(after & ~before)


# ---------------------------------------------------------------- occupancy

def test_occupancy_height_slice_rule():
    grid = GridSpec(np.zeros(2), 0.1, 3, 1)
    tsdf = TsdfGrid.create([0, 0, 0], (6, 2, 40), VS)
    # column 0: observed, all positive -> free; column 1: a negative voxel at 1 m -> occupied;
    # column 2: negative only above the slice -> free; everything else unobserved
    tsdf.weights[0:2, :, 2:30] = 1
    tsdf.weights[2:4, :, 2:30] = 1
    tsdf.values[2, 0, 20] = -0.05
    tsdf.weights[4:6, :, 2:35] = 1
    tsdf.values[4, 0, 33] = -0.05
    occ = occupancy_from_tsdf(tsdf, grid, 0.1, 1.5)
    assert list(occ.states[:, 0]) == [FREE, OCCUPIED, FREE]
    empty = occupancy_from_tsdf(TsdfGrid.create([0, 0, 0], (6, 2, 40), VS), grid)
    assert np.all(empty.states == UNKNOWN)


# ---------------------------------------------------------------- frontiers

def brute_frontiers(states, min_size=5):
    nx, ny = states.shape
    front = set()
    for x in range(nx):
        for y in range(ny):
            if states[x, y] != FREE:
                continue
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                if 0 <= x + dx < nx and 0 <= y + dy < ny and states[x + dx, y + dy] == UNKNOWN:
                    front.add((x, y))
    seen, clusters = set(), []
    for c in sorted(front):
        if c in seen:
            continue
        comp, q = [], deque([c])
        seen.add(c)
        while q:
            x, y = q.popleft()
            comp.append((x, y))
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    n = (x + dx, y + dy)
                    if n in front and n not in seen:
                        seen.add(n)
                        q.append(n)
        if len(comp) >= min_size:
            clusters.append(frozenset(comp))
    return set(clusters)


def _occ(states):
    return OccupancyGrid(GridSpec(np.zeros(2), 0.1, *states.shape), states)


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 0.7))
def test_frontiers_match_brute_force_scan(seed, p_free):
    rng = np.random.default_rng(seed)
    states = rng.choice([FREE, UNKNOWN, OCCUPIED], p=[p_free, (1 - p_free) * 0.7, (1 - p_free) * 0.3],
                        size=(64, 64)).astype(np.uint8)
    got = {frozenset(map(tuple, c.cells.tolist())) for c in extract_frontiers(_occ(states))}
    assert got == brute_frontiers(states)


def test_frontier_trivial_grids():
    assert extract_frontiers(_occ(np.full((20, 20), UNKNOWN, np.uint8))) == []
    assert extract_frontiers(_occ(np.full((20, 20), FREE, np.uint8))) == []


def test_free_disk_gives_one_ring():
    states = np.full((41, 41), UNKNOWN, np.uint8)
    xx, yy = np.mgrid[0:41, 0:41]
    states[(xx - 20) ** 2 + (yy - 20) ** 2 <= 100] = FREE
    occ = _occ(states)
    cl = extract_frontiers(occ)
    assert len(cl) == 1
    centre = occ.grid.center(20, 20)
    assert np.linalg.norm(cl[0].centroid - centre) <= 0.1 + 1e-9


def test_frontier_normal_points_to_unknown():
    states = np.full((20, 20), FREE, np.uint8)
    states[15:, :] = UNKNOWN
    cl = extract_frontiers(_occ(states))
    assert len(cl) == 1
    np.testing.assert_allclose(cl[0].normal, [1.0, 0.0])


# ---------------------------------------------------------------- planning

def brute_cost(passable, start, goal):
    """Dijkstra over an explicit 8-connected graph without corner cutting."""
    nx, ny = passable.shape
    idx = lambda x, y: x * ny + y  # noqa: E731
    rows, cols, w = [], [], []
    for x in range(nx):
        for y in range(ny):
            if not passable[x, y]:
                continue
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    if dx == dy == 0:
                        continue
                    jx, jy = x + dx, y + dy
                    if not (0 <= jx < nx and 0 <= jy < ny) or not passable[jx, jy]:
                        continue
                    if dx and dy and not (passable[x + dx, y] and passable[x, y + dy]):
                        continue
                    rows.append(idx(x, y))
                    cols.append(idx(jx, jy))
                    w.append(np.sqrt(2) if dx and dy else 1.0)
    g = sp.csr_matrix((w, (rows, cols)), shape=(nx * ny, nx * ny))
    return dijkstra(g, indices=idx(*start))[idx(*goal)]


@given(st.integers(0, 2**31 - 1), st.integers(4, 32), st.integers(4, 32))
def test_plan_cost_matches_brute_force(seed, nx, ny):
    rng = np.random.default_rng(seed)
    passable = rng.random((nx, ny)) > 0.3
    free = np.argwhere(passable)
    if len(free) < 2:
        return
    a, b = (tuple(int(v) for v in free[k]) for k in rng.choice(len(free), 2, replace=False))
    ref = brute_cost(passable, a, b)
    path = plan_path(passable, a, b)
    if not np.isfinite(ref):
        assert path is None
        return
    assert path[0] == a and path[-1] == b
    for (x0, y0), (x1, y1) in zip(path, path[1:]):
        assert max(abs(x1 - x0), abs(y1 - y0)) == 1 and passable[x1, y1]
        if x1 != x0 and y1 != y0:
            assert passable[x1, y0] and passable[x0, y1]
    assert path_length(path, 1.0) == pytest.approx(ref, abs=1e-9)


def test_plan_trivial_cases():
    passable = np.ones((5, 8), dtype=bool)
    assert plan_path(passable, (2, 2), (2, 2)) == [(2, 2)]
    corridor = np.zeros((5, 8), dtype=bool)
    corridor[2, :] = True
    path = plan_path(corridor, (2, 0), (2, 7))
    assert path == [(2, y) for y in range(8)]
    walled = np.ones((5, 8), dtype=bool)
    walled[:, 4] = False
    assert plan_path(walled, (0, 0), (0, 7)) is None


def test_plan_lexicographic_tie_break():
    passable = np.ones((3, 3), dtype=bool)
    assert plan_path(passable, (0, 0), (1, 2)) == [(0, 0), (0, 1), (1, 2)]


def test_plan_accepts_occupancy_grid():
    states = np.full((4, 4), FREE, np.uint8)
    states[1, :3] = UNKNOWN
    path = plan_path(_occ(states), (0, 0), (3, 0))
    assert path == plan_path(states == FREE, (0, 0), (3, 0))
    assert path_length(path, 1.0) == pytest.approx(brute_cost(states == FREE, (0, 0), (3, 0)))


def test_inflate_disk():
    occ = np.zeros((9, 9), dtype=bool)
    occ[4, 4] = True
    out = inflate(occ, 2)
    xx, yy = np.mgrid[0:9, 0:9]
    np.testing.assert_array_equal(out, (xx - 4) ** 2 + (yy - 4) ** 2 <= 4)
    np.testing.assert_array_equal(inflate(occ, 0), occ)
