"""Photometric reconstruction of a one-room scene from ground-truth views.

Seeds Gaussians from 20 training views on a small circle around the room
centre, runs the sliding-window optimizer and reports PSNR on 5 held-out views.

    python scripts/reconstruction.py --steps 2000 --out recon.json
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import numpy as np

from gsmem.camera import intrinsics_from_fov, yaw_pitch_camera
from gsmem.mapper import Mapper, seed_gaussians
from gsmem.raster import rasterize
from gsmem.simworld import generate_scene, render_ground_truth


def orbit_views(scene, intr, n, offset, radius=0.6, height=1.0):
    room = scene.rooms[0]
    cx, cy = (room.min[0] + room.max[0]) / 2, (room.min[1] + room.max[1]) / 2
    views = []
    for k in range(n):
        a = 2 * np.pi * (k + offset) / n
        eye = [cx + radius * np.cos(a), cy + radius * np.sin(a), height]
        views.append(render_ground_truth(scene, yaw_pitch_camera(intr, eye, a + np.pi / 2 + 0.3)))
    return views


def psnr(field, frames) -> float:
    return float(np.mean([-10 * np.log10(np.mean((rasterize(field, f.camera, ("color",)).color - f.color) ** 2))
                          for f in frames]))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scene-seed", type=int, default=1)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--every", type=int, default=250, help="evaluate held-out PSNR every N steps")
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    scene = generate_scene(args.scene_seed, n_rooms=1)
    intr = intrinsics_from_fov(args.size, args.size, 90)
    train, test = orbit_views(scene, intr, 20, 0.0), orbit_views(scene, intr, 5, 0.37)
    mapper = Mapper()
    for kid, f in enumerate(train, start=1):
        f.id = kid
        mapper.state.keyframes[kid] = f
        mapper.state.window.append(kid)
        while len(mapper.state.window) > mapper.state.window_size:
            mapper.state.window.popleft()
        seed_gaussians(mapper.field, f, mapper.cfg)
    rng = np.random.default_rng(0)
    curve = [(0, psnr(mapper.field, test))]
    print(f"step     0  psnr {curve[-1][1]:.2f} dB  gaussians {len(mapper.field)}", flush=True)
    t0 = time.perf_counter()
    for step in range(1, args.steps + 1):
        mapper.optimize_step(rng)
        if step % args.every == 0 or step == args.steps:
            curve.append((step, psnr(mapper.field, test)))
            print(f"step {step:5d}  psnr {curve[-1][1]:.2f} dB  ({time.perf_counter() - t0:.0f}s)", flush=True)
    if args.out:
        Path(args.out).write_text(json.dumps({"gaussians": len(mapper.field), "curve": curve}, indent=1) + "\n")


if __name__ == "__main__":
    main()
