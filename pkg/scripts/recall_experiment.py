"""Semantic retrieval and lifelong recall over seeded scenes.

For each seed: explore a 3-room scene with no question, save and reload the
memory, then (a) retrieve language-field clusters for the planted target and
measure the nearest cluster centroid, (b) answer a colour question about the
target from the reloaded memory without moving. Odd seeds blind the detector
to the target label so only the language field can find it.

    python scripts/recall_experiment.py --seeds 25 --out recall.json
"""
from __future__ import annotations

import argparse
import json
import tempfile
import time
from pathlib import Path

import numpy as np

from gsmem.config import Config
from gsmem.explorer import run_episode
from gsmem.retrieval import retrieve_semantic_rois
from gsmem.simworld import NullOracle, ScriptedOracle, SyntheticEmbedder, World, generate_scene, qa_question
from gsmem.snapshot import load_snapshot, save_snapshot
from gsmem.cli import query_memory


def run_seed(seed: int, blind: bool, cfg: Config, workdir: Path) -> dict:
    scene = generate_scene(seed)
    target = scene.objects[scene.targets[0]]
    wcfg = cfg.world()
    if blind:
        wcfg.miss_rate = {target.label: 1.0}
    world = World(scene, wcfg, seed=seed)
    res = run_episode(world, None, cfg.explorer(), oracle=NullOracle(), embedder=SyntheticEmbedder(scene), task="explore")
    path = workdir / f"mem_{seed}.gsm"
    save_snapshot(res.memory, path, config=cfg.to_dict())
    mem, _ = load_snapshot(path)

    question = qa_question(target.label)
    oracle = ScriptedOracle(scene, seed=seed)
    emb = SyntheticEmbedder(scene, mem.field.feature_dim)
    queries = np.array([emb.embed_text(t) for t in oracle.target_descriptions(question)])
    rois = retrieve_semantic_rois(mem.field, queries, cfg.retrieval())
    dists = [float(np.linalg.norm(r.centroid - target.center)) for r in rois]

    before = world.trajectory_length
    answer, conf, roi, _, _ = query_memory(mem, scene, question, cfg)
    return {
        "seed": seed, "target": target.label, "blind": blind, "coverage": round(res.coverage[-1], 4),
        "in_graph": any(n.label == target.label for n in mem.graph.nodes),
        "n_semantic_rois": len(rois), "nearest_roi_distance": round(min(dists), 4) if dists else None,
        "answer": answer, "truth": oracle.ground_truth_answer(question), "confidence": round(conf, 4),
        "answered_by": None if roi is None else roi.provenance,
        "moved": world.trajectory_length - before,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=25)
    ap.add_argument("--first", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)
    cfg = Config()
    rows = []
    with tempfile.TemporaryDirectory() as tmp:
        for seed in range(args.first, args.first + args.seeds):
            t0 = time.perf_counter()
            row = run_seed(seed, blind=seed % 2 == 1, cfg=cfg, workdir=Path(tmp))
            rows.append(row)
            print(f"seed {seed:2d} {row['target']:<12} blind={int(row['blind'])} cov={row['coverage']:.3f} "
                  f"d={row['nearest_roi_distance']} answer={row['answer']}/{row['truth']} via={row['answered_by']} "
                  f"({time.perf_counter() - t0:.1f}s)", flush=True)
    near = sum(r["nearest_roi_distance"] is not None and r["nearest_roi_distance"] <= 0.5 for r in rows)
    correct = sum(r["answer"] == r["truth"] for r in rows)
    print(f"semantic ROI within 0.5 m: {near}/{len(rows)}; recall correct: {correct}/{len(rows)}")
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=1) + "\n")


if __name__ == "__main__":
    main()
