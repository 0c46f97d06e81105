"""The agent's persistent spatial memory: Gaussian map, language field, scene graph and volumetric maps."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import DEFAULT_FEATURE_DIM, GaussianField
from .frames import Keyframe
from .language import aggregate_features
from .mapper import Mapper, MapperConfig
from .maps import FREE, GridSpec, OccupancyGrid, TsdfGrid, integrate_depth, occupancy_from_tsdf
from .scene_graph import SceneGraph


@dataclass
class MemoryConfig:
    mapper: MapperConfig = dc_field(default_factory=MapperConfig)
    feature_dim: int = DEFAULT_FEATURE_DIM
    map_iters: int = 3  # optimizer steps per agent step
    voxel_size: float = 0.05
    tsdf_height: float = 2.6
    occ_z_min: float = 0.1
    occ_z_max: float = 1.5


class SpatialMemory:
    """Single-writer container for every map the agent keeps."""

    def __init__(self, grid: GridSpec, cfg: MemoryConfig | None = None, seed: int = 0):
        self.cfg = cfg or MemoryConfig()
        self.grid = grid
        self.field = GaussianField.empty(self.cfg.feature_dim)
        self.mapper = Mapper(self.field, self.cfg.mapper)
        self.graph = SceneGraph()
        self.tsdf = TsdfGrid.for_grid(grid, self.cfg.tsdf_height, self.cfg.voxel_size)
        self.visited = np.zeros((grid.nx, grid.ny), dtype=bool)
        self.rng = np.random.default_rng(seed)
        self.frames_seen = 0

    @property
    def keyframes(self) -> dict[int, Keyframe]:
        return self.mapper.state.keyframes

    def mark_visited(self, cell) -> None:
        self.visited[int(cell[0]), int(cell[1])] = True

    def update(self, frames: list[Keyframe], detections=(), embedder=None) -> dict:
        """Fuse new views: TSDF, keyframes and seeding, optimizer steps, language field, scene graph."""
        inserted = []
        for f in frames:
            integrate_depth(self.tsdf, f)
            if self.mapper.insert(f):
                inserted.append(f.id)
            self.frames_seen += 1
        self.graph.ingest(detections)
        losses = []
        for _ in range(self.cfg.map_iters if self.keyframes else 0):
            losses.append(self.mapper.optimize_step(self.rng))
        if embedder is not None and self.keyframes:
            # the last optimizer frame set plus anything inserted this step
            ids = sorted(set(self.mapper.last_set) | set(inserted))
            aggregate_features(self.field, [self.keyframes[i] for i in ids], embedder, self.mapper.settings)
        return {"inserted": inserted, "losses": losses, "n_gaussians": len(self.field)}

    def occupancy(self) -> OccupancyGrid:
        occ = occupancy_from_tsdf(self.tsdf, self.grid, self.cfg.occ_z_min, self.cfg.occ_z_max)
        occ.states[self.visited] = FREE
        return occ
