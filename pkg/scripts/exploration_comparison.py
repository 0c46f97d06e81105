"""Coverage of frontier policies with no semantic signal.

Runs each policy on the same seeded 3-room scenes with a null oracle and
reports the steps needed to reach a coverage level.

    python scripts/exploration_comparison.py --seeds 10 --policies hybrid random
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from gsmem.explorer import ExplorerConfig, run_episode
from gsmem.simworld import NullOracle, SyntheticEmbedder, World, generate_scene


def steps_to(cov, level):
    hit = np.flatnonzero(np.asarray(cov) >= level)
    return int(hit[0]) + 1 if len(hit) else None


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--policies", nargs="+", default=["hybrid", "random"],
                    choices=["hybrid", "geometric", "random"])
    ap.add_argument("--max-steps", type=int, default=60)
    ap.add_argument("--level", type=float, default=0.9)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    rows = []
    for seed in range(args.seeds):
        scene = generate_scene(seed)
        for policy in args.policies:
            world = World(scene, seed=seed)
            res = run_episode(world, None, ExplorerConfig(policy=policy, max_steps=args.max_steps, seed=seed),
                              oracle=NullOracle(), embedder=SyntheticEmbedder(scene), task="explore")
            k = steps_to(res.coverage, args.level)
            rows.append({"seed": seed, "policy": policy, "steps_to_level": k, "final_coverage": res.coverage[-1],
                         "path_length": round(res.trajectory_length, 3)})
            print(f"seed {seed:2d} {policy:<9} steps-to-{args.level:.0%} {k}  final {res.coverage[-1]:.3f}  "
                  f"path {res.trajectory_length:.1f} m", flush=True)
    for policy in args.policies:
        ks = [r["steps_to_level"] for r in rows if r["policy"] == policy]
        # runs that never reach the level count as one step past the budget
        mean = np.mean([args.max_steps + 1 if k is None else k for k in ks])
        print(f"{policy:<9} mean steps {mean:.2f}  reached {sum(k is not None for k in ks)}/{len(ks)}")
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=1) + "\n")


if __name__ == "__main__":
    main()
