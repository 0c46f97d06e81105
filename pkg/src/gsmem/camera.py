"""Pinhole cameras and rotation helpers.

Conventions: world frame is z-up. Camera frame is x right, y down, z forward
(OpenCV). Pixel (u, v) has its center at integer coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R_cw: np.ndarray = field(default_factory=lambda: np.eye(3))
    t_cw: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.R_cw = np.asarray(self.R_cw, dtype=np.float64).reshape(3, 3)
        self.t_cw = np.asarray(self.t_cw, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R_cw.T @ self.t_cw

    @property
    def forward(self) -> np.ndarray:
        return self.R_cw[2].copy()

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.R_cw.T + self.t_cw

    def project(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points; returns (pixel coords (N,2), camera z (N,))."""
        pc = self.world_to_camera(np.atleast_2d(pts))
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack([self.fx * pc[:, 0] / z + self.cx, self.fy * pc[:, 1] / z + self.cy], axis=1)
        return uv, z

    def pixel_rays(self) -> np.ndarray:
        """Unnormalized camera-frame ray directions (H, W, 3) with z = 1."""
        u, v = np.meshgrid(np.arange(self.width, dtype=np.float64), np.arange(self.height, dtype=np.float64))
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)

    def backproject(self, depth: np.ndarray) -> np.ndarray:
        """World points (H, W, 3) for a z-depth image."""
        pc = self.pixel_rays() * depth[..., None]
        return (pc - self.t_cw) @ self.R_cw

    def with_pose(self, R_cw: np.ndarray, t_cw: np.ndarray) -> "Camera":
        return replace(self, R_cw=np.array(R_cw, dtype=np.float64), t_cw=np.array(t_cw, dtype=np.float64))

    def scaled(self, width: int, height: int) -> "Camera":
        """Same pose and field of view at another resolution."""
        sx, sy = width / self.width, height / self.height
        return Camera(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=(self.cx + 0.5) * sx - 0.5,
            cy=(self.cy + 0.5) * sy - 0.5,
            width=width,
            height=height,
            R_cw=self.R_cw.copy(),
            t_cw=self.t_cw.copy(),
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "R_cw": self.R_cw.tolist(),
            "t_cw": self.t_cw.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(**d)


def intrinsics_from_fov(width: int, height: int, hfov_deg: float) -> Camera:
    fx = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
    return Camera(fx=fx, fy=fx, cx=(width - 1) / 2, cy=(height - 1) / 2, width=width, height=height)


def look_at(intr: Camera, eye, target, up=WORLD_UP) -> Camera:
    """Camera at `eye` looking at `target` with zero roll."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    n = np.linalg.norm(right)
    if n < 1e-9:
        # looking straight up or down: pick any horizontal right vector
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        n = np.linalg.norm(right)
    right /= n
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return intr.with_pose(R, -R @ eye)


def yaw_pitch_camera(intr: Camera, eye, yaw: float, pitch: float = 0.0) -> Camera:
    """Camera at `eye` heading `yaw` radians (CCW from +x) and pitched up by `pitch`."""
    d = np.array([np.cos(pitch) * np.cos(yaw), np.cos(pitch) * np.sin(yaw), np.sin(pitch)])
    return look_at(intr, eye, np.asarray(eye, dtype=np.float64) + d)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(..., 4) quaternions (w, x, y, z), normalized internally -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_grad_to_quat(q: np.ndarray, gR: np.ndarray) -> np.ndarray:
    """Pull back dL/dR (..., 3, 3) through quat_to_rotmat to the raw quaternion."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn[..., 0], qn[..., 1], qn[..., 2], qn[..., 3]
    g = gR
    gw = 2 * (-z * g[..., 0, 1] + y * g[..., 0, 2] + z * g[..., 1, 0] - x * g[..., 1, 2] - y * g[..., 2, 0] + x * g[..., 2, 1])
    gx = 2 * (
        y * g[..., 0, 1] + z * g[..., 0, 2] + y * g[..., 1, 0] - 2 * x * g[..., 1, 1] - w * g[..., 1, 2]
        + z * g[..., 2, 0] + w * g[..., 2, 1] - 2 * x * g[..., 2, 2]
    )
    gy = 2 * (
        -2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2] + x * g[..., 1, 0] + z * g[..., 1, 2]
        - w * g[..., 2, 0] + z * g[..., 2, 1] - 2 * y * g[..., 2, 2]
    )
    gz = 2 * (
        -2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2] + w * g[..., 1, 0] - 2 * z * g[..., 1, 1]
        + y * g[..., 1, 2] + x * g[..., 2, 0] + y * g[..., 2, 1]
    )
    gqn = np.stack([gw, gx, gy, gz], axis=-1)
    return (gqn - qn * np.sum(qn * gqn, axis=-1, keepdims=True)) / norm
