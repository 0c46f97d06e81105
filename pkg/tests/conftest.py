import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gsmem.camera import Camera, intrinsics_from_fov, look_at
from gsmem.field import GaussianField

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


def axis_camera(size=32, f=30.0) -> Camera:
    """Identity pose: world frame = camera frame, looking down +z."""
    c = (size - 1) / 2
    return Camera(fx=f, fy=f, cx=c, cy=c, width=size, height=size)


def random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_field(rng, n, cam: Camera, depth=(1.5, 4.0), scale=(0.05, 0.3), opacity=(0.2, 0.95),
                 margin=0.15, feature_dim=8) -> GaussianField:
    """Gaussians whose means project inside the central part of ``cam``'s image."""
    z = rng.uniform(*depth, n)
    u = rng.uniform(margin * cam.width, (1 - margin) * cam.width, n)
    v = rng.uniform(margin * cam.height, (1 - margin) * cam.height, n)
    pc = np.stack([(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z], axis=1)
    world = (pc - cam.t_cw) @ cam.R_cw
    f = GaussianField.from_params(world, rng.uniform(*scale, (n, 3)), rng.uniform(0, 1, (n, 3)),
                                  rng.uniform(*opacity, n), random_quats(rng, n), feature_dim=feature_dim)
    return f


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def orbit_camera(size, target, radius, azimuth, elevation=0.2, hfov=60.0) -> Camera:
    target = np.asarray(target, dtype=float)
    eye = target + radius * np.array([np.cos(elevation) * np.cos(azimuth), np.cos(elevation) * np.sin(azimuth),
                                      np.sin(elevation)])
    return look_at(intrinsics_from_fov(size, size, hfov), eye, target)


def cube_memory():
    """A 0.5 m cube on the floor of an open room, mapped from 8 surrounding views.

    Returns (roi, field, tsdf) with the ROI equal to the cube's box.
    """
    from gsmem.maps import TsdfGrid, integrate_depth
    from gsmem.mapper import Mapper, seed_gaussians
    from gsmem.retrieval import RegionOfInterest
    from gsmem.simworld.render import render_ground_truth
    from gsmem.simworld.scene import Room, SceneObject, SceneSpec

    scene = SceneSpec("cube", 0, [Room("r", (-3.0, -3.0), (3.0, 3.0), [])],
                      [SceneObject("box", (0.0, 0.0, 0.25), (0.5, 0.5, 0.5), (0.8, 0.2, 0.2), "chair")], (2.0, 2.0))
    tsdf = TsdfGrid.create([-3, -3, -0.1], (120, 120, 50), 0.05)
    m = Mapper()
    intr = intrinsics_from_fov(96, 96, 90)
    for k in range(8):
        a = 2 * np.pi * k / 8
        f = render_ground_truth(scene, look_at(intr, [1.5 * np.cos(a), 1.5 * np.sin(a), 1.0], [0, 0, 0.25]))
        integrate_depth(tsdf, f)
        seed_gaussians(m.field, f, m.cfg)
    roi = RegionOfInterest([-0.25, -0.25, 0.0], [0.25, 0.25, 0.5], "semantic", 0, 1.0)
    return roi, m.field, tsdf


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
