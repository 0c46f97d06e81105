"""Agent kinematics on the cell grid and sensor capture."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import Camera, intrinsics_from_fov, yaw_pitch_camera
from ..frames import Keyframe
from ..maps import SQRT2, GridSpec
from .render import render_ground_truth, scene_primitives
from .scene import SceneSpec
from .sensors import detect


@dataclass
class WorldConfig:
    cell: float = 0.1
    agent_radius: float = 0.2
    camera_height: float = 1.0
    camera_pitch_deg: float = 0.0  # negative looks down
    obs_width: int = 96
    obs_height: int = 96
    hfov_deg: float = 90.0
    view_yaws_deg: tuple[float, ...] = (-60.0, 0.0, 60.0)
    miss_rate: float | dict = 0.0
    corruption_rate: float | dict = 0.0


def _box_distance(px, py, lo, hi):
    dx = np.maximum(np.maximum(lo[0] - px, px - hi[0]), 0.0)
    dy = np.maximum(np.maximum(lo[1] - py, py - hi[1]), 0.0)
    return np.hypot(dx, dy)


def passable_cells(scene: SceneSpec, grid: GridSpec, radius: float) -> np.ndarray:
    """Cells whose center lies inside a room and at least ``radius`` from any footprint."""
    c = grid.centers(np.argwhere(np.ones((grid.nx, grid.ny), dtype=bool)))
    px, py = c[:, 0], c[:, 1]
    ok = np.zeros(len(c), dtype=bool)
    for r in scene.rooms:
        ok |= (px >= r.min[0]) & (px <= r.max[0]) & (py >= r.min[1]) & (py <= r.max[1])
    for w in scene.walls:
        ok &= _box_distance(px, py, w.min, w.max) > radius
    for o in scene.objects:
        lo, hi = o.bbox
        if o.primitive == "sphere":
            ok &= np.hypot(px - o.center[0], py - o.center[1]) > o.radius + radius
        else:
            ok &= _box_distance(px, py, lo[:2], hi[:2]) > radius
    return ok.reshape(grid.nx, grid.ny)


class World:
    """Single-owner simulator state: the scene plus the agent's cell, heading and odometry."""

    def __init__(self, scene: SceneSpec, config: WorldConfig | None = None, seed: int = 0):
        self.scene = scene
        self.config = config or WorldConfig()
        self.seed = seed
        self.prims = scene_primitives(scene)
        lo, hi = scene.bounds()
        self.grid = GridSpec.covering(lo, hi, self.config.cell)
        self.passable = passable_cells(scene, self.grid, self.config.agent_radius)
        self.intrinsics = intrinsics_from_fov(self.config.obs_width, self.config.obs_height, self.config.hfov_deg)
        self.cell = self.grid.cell_of(scene.agent_start)
        if not self.passable[self.cell]:
            raise ValueError("agent start is not a free cell")
        self.yaw = float(scene.agent_yaw)
        self.trajectory_length = 0.0
        self.frames_captured = 0

    @property
    def position(self) -> np.ndarray:
        xy = self.grid.center(*self.cell)
        return np.array([xy[0], xy[1], self.config.camera_height])

    def camera(self, yaw: float | None = None, intrinsics: Camera | None = None) -> Camera:
        return yaw_pitch_camera(intrinsics or self.intrinsics, self.position, self.yaw if yaw is None else yaw,
                                np.radians(self.config.camera_pitch_deg))

    def render(self, cam: Camera) -> Keyframe:
        return render_ground_truth(self.prims, cam)

    def observe(self) -> list[Keyframe]:
        """Capture the RGB-D views at the configured yaw offsets around the heading."""
        frames = []
        for off in self.config.view_yaws_deg:
            frames.append(self.render(self.camera(self.yaw + np.radians(off))))
            self.frames_captured += 1
        return frames

    def detect(self, frame: Keyframe, frame_index: int):
        return detect(self.scene, frame.camera, [self.seed, frame_index], self.config.miss_rate,
                      self.config.corruption_rate, frame=frame)

    def step_agent(self, waypoint) -> bool:
        """Move to an 8-adjacent cell. Returns False (and stays put) on collision or a non-adjacent target."""
        wx, wy = int(waypoint[0]), int(waypoint[1])
        dx, dy = wx - self.cell[0], wy - self.cell[1]
        if max(abs(dx), abs(dy)) != 1:
            return (dx, dy) == (0, 0)
        if not self.grid.inside(wx, wy) or not self.passable[wx, wy]:
            return False
        if dx and dy and not (self.passable[self.cell[0] + dx, self.cell[1]] and self.passable[self.cell[0], self.cell[1] + dy]):
            return False
        self.cell = (wx, wy)
        self.yaw = float(np.arctan2(dy, dx))
        self.trajectory_length += self.config.cell * (SQRT2 if dx and dy else 1.0)
        return True

    def face(self, direction_xy) -> None:
        self.yaw = float(np.arctan2(direction_xy[1], direction_xy[0]))


def step_agent(world: World, waypoint) -> np.ndarray:
    world.step_agent(waypoint)
    return world.position
