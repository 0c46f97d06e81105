"""The Gaussian field: persistent map state shared by rendering, mapping and retrieval."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .camera import quat_to_rotmat

DEFAULT_FEATURE_DIM = 32

PARAM_GROUPS = ("positions", "log_scales", "rotations", "opacity_logits", "colors")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.clip(p, 1e-6, 1 - 1e-6)
    return np.log(p / (1 - p))


@dataclass
class GaussianField:
    """Structure-of-arrays store of N Gaussians.

    Rotations are unit quaternions (w, x, y, z); scales are log standard
    deviations in meters; colors are RGB in [0, 1]. ``features`` holds the
    language embedding per Gaussian and ``feature_weights`` the accumulated
    blending weight behind it.
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    features: np.ndarray
    feature_weights: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            a = np.ascontiguousarray(getattr(self, f.name), dtype=np.float64)
            setattr(self, f.name, a if a.flags.writeable else a.copy())
        n = len(self.positions)
        for f in fields(self):
            if len(getattr(self, f.name)) != n:
                raise ValueError(f"{f.name} has {len(getattr(self, f.name))} rows, expected {n}")

    @classmethod
    def empty(cls, feature_dim: int = DEFAULT_FEATURE_DIM) -> "GaussianField":
        return cls(
            positions=np.zeros((0, 3)),
            log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            opacity_logits=np.zeros(0),
            colors=np.zeros((0, 3)),
            features=np.zeros((0, feature_dim)),
            feature_weights=np.zeros(0),
        )

    @classmethod
    def from_params(
        cls,
        positions,
        scales,
        colors,
        opacities,
        rotations=None,
        feature_dim: int = DEFAULT_FEATURE_DIM,
    ) -> "GaussianField":
        """Build from linear-space scales and opacities (convenience for tests and seeding)."""
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        n = len(positions)
        scales = np.asarray(scales, dtype=np.float64)
        if scales.ndim < 2:
            # scalar or one isotropic scale per Gaussian
            scales = scales.reshape(-1, 1)
        scales = np.broadcast_to(scales, (n, 3))
        if rotations is None:
            rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        return cls(
            positions=positions,
            log_scales=np.log(scales),
            rotations=np.asarray(rotations, dtype=np.float64).reshape(n, 4),
            opacity_logits=logit(np.broadcast_to(np.asarray(opacities, dtype=np.float64), (n,))),
            colors=np.broadcast_to(np.asarray(colors, dtype=np.float64), (n, 3)),
            features=np.zeros((n, feature_dim)),
            feature_weights=np.zeros(n),
        )

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def covariances(self) -> np.ndarray:
        R = quat_to_rotmat(self.rotations)
        M = R * self.scales[:, None, :]
        return M @ np.swapaxes(M, 1, 2)

    def copy(self) -> "GaussianField":
        return GaussianField(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def subset(self, idx) -> "GaussianField":
        return GaussianField(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def extend(self, other: "GaussianField") -> None:
        if other.feature_dim != self.feature_dim:
            raise ValueError("feature dimension mismatch")
        for f in fields(self):
            setattr(self, f.name, np.concatenate([getattr(self, f.name), getattr(other, f.name)]))

    def normalize_rotations(self) -> None:
        self.rotations /= np.linalg.norm(self.rotations, axis=1, keepdims=True)

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_GROUPS}

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}
