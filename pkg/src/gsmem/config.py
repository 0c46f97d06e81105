"""Flat run configuration with JSON I/O.

Precedence when resolving a value: command-line flag, then the ``GSMEM_SEED``
environment variable (seed only), then the config file, then the defaults below.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .explorer import ExplorerConfig
from .mapper import MapperConfig
from .memory import MemoryConfig
from .retrieval import RetrievalConfig
from .simworld.world import WorldConfig

SEED_ENV = "GSMEM_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    seed: int = 0
    # exploration
    tau_s: float = 0.4
    max_steps: int = 60
    policy: str = "hybrid"
    frontier_view: str = "live"
    fim_size: int = 64
    max_move: float = 2.0
    answer_confidence_threshold: float = 0.0
    # retrieval
    k_obj: int = 10
    k_cluster: int = 3
    tau_clip: float = 0.25
    tau_d: float = 0.15
    min_cluster_size: int = 20
    area_target: float = 0.4
    sigma_a: float = 0.15
    orbit_radius_factor: float = 1.5
    azimuth_step: float = 10.0
    elevations: tuple = (-10.0, 0.0, 15.0)
    top_phase2: int = 10
    # mapping
    flow_threshold: float = 8.0
    window_size: int = 10
    lambda_depth: float = 0.5
    map_iters: int = 3
    feature_dim: int = 32
    # sensing
    obs_size: int = 96
    camera_pitch: float = 0.0  # degrees, negative looks down
    miss_rate: float = 0.0
    corruption_rate: float = 0.0

    def __post_init__(self):
        self.elevations = tuple(float(e) for e in self.elevations)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["elevations"] = list(self.elevations)
        return d

    def explorer(self) -> ExplorerConfig:
        return ExplorerConfig(
            tau_s=self.tau_s, max_steps=self.max_steps, policy=self.policy, frontier_view=self.frontier_view,
            fim_size=self.fim_size, max_move=self.max_move, seed=self.seed,
            answer_confidence_threshold=self.answer_confidence_threshold,
            retrieval=self.retrieval(), memory=self.memory(),
        )

    def retrieval(self) -> RetrievalConfig:
        return RetrievalConfig(
            k_obj=self.k_obj, k_cluster=self.k_cluster, tau_clip=self.tau_clip, tau_d=self.tau_d,
            min_cluster_size=self.min_cluster_size, area_target=self.area_target, sigma_a=self.sigma_a,
            orbit_radius_factor=self.orbit_radius_factor, azimuth_step=self.azimuth_step,
            elevations=self.elevations, top_phase2=self.top_phase2,
        )

    def memory(self) -> MemoryConfig:
        mapper = MapperConfig(flow_threshold=self.flow_threshold, window_size=self.window_size, lambda_depth=self.lambda_depth)
        return MemoryConfig(mapper=mapper, feature_dim=self.feature_dim, map_iters=self.map_iters)

    def world(self) -> WorldConfig:
        return WorldConfig(obs_width=self.obs_size, obs_height=self.obs_size, camera_pitch_deg=self.camera_pitch,
                           miss_rate=self.miss_rate, corruption_rate=self.corruption_rate)


_FIELDS = {f.name for f in fields(Config)}


def config_from_dict(d: dict) -> Config:
    unknown = set(d) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = Config(**d)
        cfg.explorer()
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return cfg


def load_config(path=None, overrides: dict | None = None, env=None) -> Config:
    """Defaults < file < environment seed < explicit overrides (``None`` values ignored)."""
    d: dict = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            d["seed"] = int(env[SEED_ENV])
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV} must be an integer") from e
    for k, v in (overrides or {}).items():
        if v is not None:
            d[k] = v
    return config_from_dict(d)


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
