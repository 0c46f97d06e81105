"""Analytic ray casting of scenes: exact depth for planes, boxes and spheres."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import Camera
from ..frames import Keyframe
from .scene import SceneSpec

MAX_DEPTH = 10.0


@dataclass
class Primitives:
    """Flattened scene geometry. Index order: objects, then walls, then the floor."""

    box_min: np.ndarray
    box_max: np.ndarray
    box_index: np.ndarray
    sph_center: np.ndarray
    sph_radius: np.ndarray
    sph_index: np.ndarray
    floor_min: np.ndarray
    floor_max: np.ndarray
    floor_index: int
    colors: np.ndarray
    labels: list[str]


def scene_primitives(scene: SceneSpec) -> Primitives:
    bmin, bmax, bidx, sc, sr, sidx, colors, labels = [], [], [], [], [], [], [], []
    for i, o in enumerate(scene.objects):
        colors.append(o.color)
        labels.append(o.label)
        if o.primitive == "sphere":
            sc.append(o.center)
            sr.append(o.radius)
            sidx.append(i)
        else:
            lo, hi = o.bbox
            bmin.append(lo)
            bmax.append(hi)
            bidx.append(i)
    n = len(scene.objects)
    for k, w in enumerate(scene.walls):
        bmin.append([w.min[0], w.min[1], 0.0])
        bmax.append([w.max[0], w.max[1], scene.wall_height])
        bidx.append(n + k)
        colors.append(w.color)
        labels.append("wall")
    lo, hi = scene.bounds()
    colors.append(scene.floor_color)
    labels.append("floor")
    return Primitives(
        box_min=np.array(bmin, float).reshape(-1, 3),
        box_max=np.array(bmax, float).reshape(-1, 3),
        box_index=np.array(bidx, int),
        sph_center=np.array(sc, float).reshape(-1, 3),
        sph_radius=np.array(sr, float),
        sph_index=np.array(sidx, int),
        floor_min=lo,
        floor_max=hi,
        floor_index=len(colors) - 1,
        colors=np.array(colors, float),
        labels=labels,
    )


def cast_rays(prims: Primitives, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit parameter t (inf on miss) and primitive index (-1) for rays o + t d."""
    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_i = np.full(n, -1, dtype=int)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        for lo, hi, idx in zip(prims.box_min, prims.box_max, prims.box_index):
            t1 = (lo - origin) * inv
            t2 = (hi - origin) * inv
            tn = np.nanmax(np.minimum(t1, t2), axis=1)
            tf = np.nanmin(np.maximum(t1, t2), axis=1)
            # origin inside a box: that box is not hit (the agent never stands inside geometry)
            hit = (tf >= tn) & (tn > 1e-9) & (tn < best_t)
            best_t[hit] = tn[hit]
            best_i[hit] = idx
        for c, r, idx in zip(prims.sph_center, prims.sph_radius, prims.sph_index):
            oc = origin - c
            a = np.sum(dirs * dirs, axis=1)
            b = dirs @ oc
            cc = oc @ oc - r * r
            disc = b * b - a * cc
            t = (-b - np.sqrt(np.maximum(disc, 0.0))) / a
            hit = (disc >= 0) & (t > 1e-9) & (t < best_t)
            best_t[hit] = t[hit]
            best_i[hit] = idx
        t = -origin[2] / dirs[:, 2]
        p = origin + t[:, None] * dirs
        inside = np.all((p[:, :2] >= prims.floor_min) & (p[:, :2] <= prims.floor_max), axis=1)
        hit = (t > 1e-9) & inside & (t < best_t)
        best_t[hit] = t[hit]
        best_i[hit] = prims.floor_index
    return best_t, best_i


def render_ground_truth(scene: SceneSpec | Primitives, cam: Camera) -> Keyframe:
    """Flat-shaded color, camera-z depth (0 beyond 10 m or on miss) and primitive labels."""
    prims = scene if isinstance(scene, Primitives) else scene_primitives(scene)
    rays_c = cam.pixel_rays().reshape(-1, 3)
    dirs = rays_c @ cam.R_cw  # world directions with unit camera-z component
    t, idx = cast_rays(prims, cam.position, dirs)
    # camera ray z-component is 1, so t is the z-depth
    far = ~np.isfinite(t) | (t > MAX_DEPTH)
    idx[far] = -1
    depth = np.where(far, 0.0, t).reshape(cam.height, cam.width)
    color = np.zeros((len(idx), 3))
    color[idx >= 0] = prims.colors[idx[idx >= 0]]
    return Keyframe(
        color=color.reshape(cam.height, cam.width, 3),
        depth=depth,
        camera=cam,
        labels=idx.reshape(cam.height, cam.width),
    )
