"""Command-line entry points: explore, query, navigate, render and bench.

Exit codes: 0 success, 2 usage or bad configuration, 3 missing file,
4 corrupt file, 5 unsupported snapshot version.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import yaw_pitch_camera
from .config import Config, ConfigError, load_config
from .explorer import answer_from_memory, run_episode
from .language import query_similarity
from .metrics import aggregate
from .raster import rasterize
from .retrieval import render_roi_views, retrieve_object_rois, select_optimal_view
from .simworld import NullOracle, ScriptedOracle, SyntheticEmbedder, World, goal_question, qa_question
from .simworld.scene import SceneFormatError, SceneSpec, load_scene
from .snapshot import SnapshotError, load_snapshot, save_snapshot

EXIT_USAGE, EXIT_MISSING, EXIT_CORRUPT, EXIT_VERSION = 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def bundled_scenes() -> list[Path]:
    root = resources.files("gsmem") / "scenes"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def _resolve_scene(ref: str) -> SceneSpec:
    path = Path(ref)
    if not path.exists():
        matches = [p for p in bundled_scenes() if p.stem == ref]
        if not matches:
            raise CliError(f"scene not found: {ref}", EXIT_MISSING)
        path = matches[0]
    try:
        return load_scene(path)
    except SceneFormatError as e:
        raise CliError(str(e), EXIT_CORRUPT) from e


def _config(args) -> Config:
    if args.config is not None and not Path(args.config).exists():
        raise CliError(f"config not found: {args.config}", EXIT_MISSING)
    overrides = {"seed": getattr(args, "seed", None), "max_steps": getattr(args, "steps", None)}
    try:
        return load_config(args.config, overrides)
    except ConfigError as e:
        raise CliError(f"bad configuration: {e}", EXIT_USAGE) from e


def _load_memory(path: str):
    if not Path(path).exists():
        raise CliError(f"snapshot not found: {path}", EXIT_MISSING)
    try:
        return load_snapshot(path)
    except SnapshotError as e:
        raise CliError(str(e), EXIT_VERSION if e.kind == "version" else EXIT_CORRUPT) from e


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def save_png(path, img: np.ndarray) -> None:
    a = np.asarray(img, dtype=np.float64)
    Image.fromarray((np.clip(a, 0.0, 1.0) * 255 + 0.5).astype(np.uint8)).save(path)


def _normalized(a: np.ndarray) -> np.ndarray:
    hi = float(a.max()) if a.size else 0.0
    return a / hi if hi > 0 else a


def _question(cfg: Config, scene: SceneSpec, text: str | None, target: str | None, goal: bool) -> str:
    if text:
        return text
    label = target or scene.objects[scene.targets[0]].label
    return goal_question(label) if goal else qa_question(label)


def cmd_explore(args) -> int:
    cfg = _config(args)
    scene = _resolve_scene(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = World(scene, cfg.world(), seed=cfg.seed)
    t0 = time.perf_counter()
    res = run_episode(world, None, cfg.explorer(), oracle=NullOracle(), embedder=SyntheticEmbedder(scene), task="explore")
    mem = res.memory
    save_snapshot(mem, out / "memory.gsm", config=cfg.to_dict(), include_images=args.images,
                  extra={"scene": scene.to_dict()})
    _write_json(out / "coverage.json", {"scene": scene.name, "coverage": [round(c, 6) for c in res.coverage]})
    report = {"scene": scene.name, "seed": cfg.seed, "episode": res.to_dict(), "n_gaussians": len(mem.field),
              "n_objects": len(mem.graph)}
    if args.timing:
        report["wall_time"] = time.perf_counter() - t0
    _write_json(out / "report.json", report)
    print(f"explored {scene.name}: {res.steps} steps, coverage {res.coverage[-1] if res.coverage else 0:.3f}, "
          f"{len(mem.field)} Gaussians, {len(mem.graph)} objects -> {out / 'memory.gsm'}")
    return 0


def query_memory(mem, scene: SceneSpec, question: str, cfg: Config):
    """Answer ``question`` from a stored memory without moving; returns (answer, confidence, roi, record)."""
    oracle = ScriptedOracle(scene, seed=cfg.seed)
    record: dict = {}
    answer, conf, roi = answer_from_memory(mem, question, oracle, SyntheticEmbedder(scene, mem.field.feature_dim),
                                           cfg.explorer(), record)
    return answer, conf, roi, record, oracle


def cmd_query(args) -> int:
    cfg = _config(args)
    mem, manifest = _load_memory(args.snapshot)
    scene = _resolve_scene(args.scene) if args.scene else _scene_from_manifest(manifest)
    question = _question(cfg, scene, args.question, args.target, goal=False)
    answer, conf, roi, record, oracle = query_memory(mem, scene, question, cfg)
    result = {
        "question": question, "answer": answer, "confidence": round(conf, 6),
        "correct": answer == oracle.ground_truth_answer(question),
        "roi": None if roi is None else {"provenance": roi.provenance, "centroid": [round(float(v), 4) for v in roi.centroid]},
        "rois": record.get("rois", []), "agent_moved": 0.0,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "answer.json", result)
        if roi is not None:
            view = select_optimal_view(roi, mem.field, mem.tsdf, cfg.retrieval())
            for k, v in enumerate(render_roi_views(roi, mem.field, view, cfg.retrieval())):
                save_png(out / f"roi_view_{k}_{v.source}.png", v.color)
    print(json.dumps({k: result[k] for k in ("question", "answer", "confidence", "correct")}))
    return 0


def _scene_from_manifest(manifest: dict) -> SceneSpec:
    d = manifest.get("extra", {}).get("scene")
    if d is None:
        raise CliError("snapshot carries no scene; pass --scene", EXIT_USAGE)
    try:
        return SceneSpec.from_dict(d)
    except SceneFormatError as e:
        raise CliError(str(e), EXIT_CORRUPT) from e


def cmd_navigate(args) -> int:
    cfg = _config(args)
    scene = _resolve_scene(args.scene)
    mem = None
    if args.snapshot:
        mem, _ = _load_memory(args.snapshot)
    question = _question(cfg, scene, None, args.goal, goal=True)
    world = World(scene, cfg.world(), seed=cfg.seed)
    oracle = ScriptedOracle(scene, seed=cfg.seed)
    res = run_episode(world, question, cfg.explorer(), oracle=oracle, memory=mem,
                      embedder=SyntheticEmbedder(scene), task="goal")
    report = {"scene": scene.name, "seed": cfg.seed, "warm_start": bool(args.snapshot), "episode": res.to_dict()}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "report.json", report)
        if args.save_snapshot:
            save_snapshot(res.memory, out / "memory.gsm", config=cfg.to_dict(), extra={"scene": scene.to_dict()})
    print(json.dumps({"goal": question, "status": res.status, "success": res.success, "spl": round(res.spl, 6),
                      "steps": res.steps, "trajectory_length": round(res.trajectory_length, 4)}))
    return 0


def cmd_render(args) -> int:
    cfg = _config(args)
    mem, manifest = _load_memory(args.snapshot)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    size = args.size
    if args.roi_id is not None:
        node = [n for n in mem.graph.nodes if n.id == args.roi_id]
        if not node:
            raise CliError(f"no scene-graph node with id {args.roi_id}", EXIT_USAGE)
        rois = [r for r in retrieve_object_rois(mem.graph, "", _IdentityRanker(), cfg.retrieval()) if r.source_id == args.roi_id]
        view = select_optimal_view(rois[0], mem.field, mem.tsdf, cfg.retrieval())
        if view is None:
            raise CliError("no feasible viewpoint for that object", EXIT_USAGE)
        cam = view.pose.scaled(size, size)
    else:
        try:
            x, y, z, yaw = (float(v) for v in args.pose.split(","))
        except (AttributeError, ValueError) as e:
            raise CliError("--pose expects x,y,z,yaw_degrees", EXIT_USAGE) from e
        from .camera import intrinsics_from_fov
        cam = yaw_pitch_camera(intrinsics_from_fov(size, size, args.hfov), [x, y, z], np.radians(yaw))
    r = rasterize(mem.field, cam, ("color", "depth", "alpha", "feature"))
    save_png(out / "color.png", r.color)
    save_png(out / "depth.png", _normalized(r.depth))
    save_png(out / "alpha.png", r.alpha)
    digest = {"color_sha256": hashlib.sha256(r.color.tobytes()).hexdigest()}
    if args.text:
        scene = _scene_from_manifest(manifest) if manifest.get("extra", {}).get("scene") else None
        q = SyntheticEmbedder(scene, mem.field.feature_dim).embed_text(args.text)
        sim = query_similarity(mem.field, q)
        pix = np.einsum("hwf,f->hw", r.feature, q / max(np.linalg.norm(q), 1e-12))
        save_png(out / "similarity.png", np.clip(pix, 0.0, 1.0))
        digest["max_gaussian_similarity"] = round(float(sim.max()) if len(sim) else -1.0, 6)
    _write_json(out / "render.json", {"camera": cam.to_dict(), **digest})
    print(json.dumps(digest))
    return 0


class _IdentityRanker:
    def rank_objects(self, question, objects):
        return [o[0] for o in objects]


def bench_rows(scenes: list[SceneSpec], cfg: Config, task: str) -> list[dict]:
    rows = []
    for scene in scenes:
        for t in scene.targets:
            label = scene.objects[t].label
            question = goal_question(label) if task == "goal" else qa_question(label)
            world = World(scene, cfg.world(), seed=cfg.seed)
            oracle = ScriptedOracle(scene, seed=cfg.seed)
            res = run_episode(world, question, cfg.explorer(), oracle=oracle, embedder=SyntheticEmbedder(scene), task=task)
            rows.append({
                "scene": scene.name, "target": label, "task": task, "status": res.status,
                "answer": res.answer, "success": bool(res.success), "spl": round(float(res.spl), 6),
                "steps": res.steps, "trajectory_length": round(float(res.trajectory_length), 6),
            })
    return rows


def cmd_bench(args) -> int:
    cfg = _config(args)
    if args.scenes:
        paths = []
        for ref in args.scenes:
            p = Path(ref)
            paths += sorted(p.glob("*.json")) if p.is_dir() else [p]
        scenes = [_resolve_scene(str(p)) for p in paths]
    else:
        scenes = [load_scene(p) for p in bundled_scenes()]
    if args.limit:
        scenes = scenes[: args.limit]
    t0 = time.perf_counter()
    rows = bench_rows(scenes, cfg, args.task)
    report = {"config": cfg.to_dict(), "task": args.task, "rows": rows, "aggregate": aggregate(rows)}
    if args.timing:
        report["wall_time"] = time.perf_counter() - t0
    text = json.dumps(report, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(f"{'scene':<14} {'target':<14} {'status':<10} {'success':>7} {'spl':>7} {'steps':>5}")
    for r in rows:
        print(f"{r['scene']:<14} {r['target']:<14} {r['status']:<10} {int(r['success']):>7} {r['spl']:>7.3f} {r['steps']:>5}")
    agg = report["aggregate"]
    print(f"aggregate: episodes={agg['episodes']} SR={agg['sr']:.3f} SPL={agg['spl']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsmem", description="Gaussian-splat spatial memory for embodied agents.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="overrides config and GSMEM_SEED")

    e = sub.add_parser("explore", help="mapping-only episode; saves a memory snapshot")
    common(e)
    e.add_argument("--scene", required=True, help="scene file or bundled scene name")
    e.add_argument("--out", required=True)
    e.add_argument("--steps", type=int)
    e.add_argument("--images", action="store_true", help="store keyframe images in the snapshot")
    e.add_argument("--timing", action="store_true", help="add wall time to the report")
    e.set_defaults(func=cmd_explore)

    q = sub.add_parser("query", help="answer a question from a saved memory without moving")
    common(q)
    q.add_argument("--snapshot", required=True)
    q.add_argument("--question")
    q.add_argument("--target", help="object label; asks for its color")
    q.add_argument("--scene", help="scene file (defaults to the one stored in the snapshot)")
    q.add_argument("--out")
    q.set_defaults(func=cmd_query)

    n = sub.add_parser("navigate", help="goal navigation, optionally warm-started from a snapshot")
    common(n)
    n.add_argument("--scene", required=True)
    n.add_argument("--goal", help="target label (defaults to the scene's first target)")
    n.add_argument("--snapshot")
    n.add_argument("--steps", type=int)
    n.add_argument("--out")
    n.add_argument("--save-snapshot", action="store_true")
    n.set_defaults(func=cmd_navigate)

    r = sub.add_parser("render", help="dump color/depth/alpha/similarity images from a snapshot")
    common(r)
    r.add_argument("--snapshot", required=True)
    g = r.add_mutually_exclusive_group(required=True)
    g.add_argument("--pose", help="x,y,z,yaw_degrees")
    g.add_argument("--roi-id", type=int, help="scene-graph node id; rendered from its optimal viewpoint")
    r.add_argument("--text", help="query text for the similarity image")
    r.add_argument("--size", type=int, default=128)
    r.add_argument("--hfov", type=float, default=90.0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    b = sub.add_parser("bench", help="batch episodes over a scene corpus; SR/SPL report")
    common(b)
    b.add_argument("--scenes", nargs="*", help="scene files or directories (default: bundled corpus)")
    b.add_argument("--task", choices=("goal", "qa"), default="goal")
    b.add_argument("--steps", type=int)
    b.add_argument("--limit", type=int)
    b.add_argument("--out")
    b.add_argument("--timing", action="store_true")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
