from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera


@dataclass
class Keyframe:
    """One RGB-D observation. ``depth`` is camera z in meters, 0 where nothing was hit.

    ``labels`` is an optional per-pixel primitive index from the simulator
    (-1 for no hit); the synthetic embedding provider and oracle read it.
    """

    color: np.ndarray
    depth: np.ndarray
    camera: Camera
    id: int = -1
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.depth.shape != (self.camera.height, self.camera.width):
            raise ValueError("depth image does not match camera size")
        if self.color.shape != (self.camera.height, self.camera.width, 3):
            raise ValueError("color image does not match camera size")


@dataclass
class View:
    """A rendered or observed image handed to the oracle."""

    color: np.ndarray
    alpha: np.ndarray
    camera: Camera
    depth: np.ndarray | None = None
    labels: np.ndarray | None = None
    source: str = "memory"

    @classmethod
    def from_keyframe(cls, kf: Keyframe) -> "View":
        return cls(kf.color, (kf.depth > 0).astype(np.float64), kf.camera, kf.depth, kf.labels, "live")
