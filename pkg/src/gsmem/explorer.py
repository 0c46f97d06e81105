"""Hybrid frontier selection and the explore / retrieve / answer episode loop.

Each frontier carries a semantic relevance score from the oracle and a
geometric score: the trace of the Fisher information of the rendered memory at
the frontier's approach pose. The semantic choice wins when some frontier is
relevant enough, otherwise the most informative frontier is taken.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from scipy import ndimage

from .camera import Camera, yaw_pitch_camera
from .field import GaussianField
from .frames import View
from .maps import FREE, OCCUPIED, FrontierCluster, extract_frontiers, inflate, plan_path
from .memory import MemoryConfig, SpatialMemory
from .metrics import coverage, shortest_to_region, spl
from .raster import DEFAULT_SETTINGS, fisher_trace_map, rasterize
from .retrieval import RetrievalConfig, render_roi_views, retrieve_object_rois, retrieve_semantic_rois, select_optimal_view

UNKNOWN_ANSWER = "unknown"


@dataclass
class ExplorerConfig:
    tau_s: float = 0.4
    max_steps: int = 60
    answer_confidence_threshold: float = 0.0
    policy: str = "hybrid"  # hybrid | geometric | semantic | random
    frontier_view: str = "live"  # live | memory
    fim_size: int = 64
    max_move: float = 2.0  # meters travelled per step
    min_frontier: int = 5
    clearance_cells: int = 3
    success_radius: float = 1.0
    seed: int = 0
    retrieval: RetrievalConfig = dc_field(default_factory=RetrievalConfig)
    memory: MemoryConfig = dc_field(default_factory=MemoryConfig)

    def __post_init__(self):
        if not 0.0 < self.tau_s < 1.0:
            raise ValueError("tau_s must lie in (0, 1)")
        if self.policy not in ("hybrid", "geometric", "semantic", "random"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.frontier_view not in ("live", "memory"):
            raise ValueError(f"unknown frontier view source {self.frontier_view!r}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")


@dataclass
class FrontierCandidate:
    cluster: FrontierCluster
    target_cell: tuple[int, int]
    approach_pose: Camera
    s_sem: float = 0.0
    s_geo: float = 0.0

    @property
    def centroid(self) -> np.ndarray:
        return self.cluster.centroid


def semantic_frontier_score(candidate: FrontierCandidate, question: str, oracle,
                            render: Callable[[Camera], View]) -> float:
    """Oracle relevance of the view at the approach pose, clamped to [0, 1]."""
    try:
        s = float(oracle.score_frontier(question, render(candidate.approach_pose)))
    except Exception:
        return 0.0
    if not np.isfinite(s):
        return 0.0
    return float(min(max(s, 0.0), 1.0))


def geometric_frontier_score(field: GaussianField, pose: Camera, size: int = 64, settings=DEFAULT_SETTINGS) -> float:
    """Trace of the color-render Fisher information at ``pose`` (rendered at size x size)."""
    if len(field) == 0:
        return 0.0
    cam = pose.scaled(size, size) if (pose.width, pose.height) != (size, size) else pose
    return float(fisher_trace_map(field, cam, settings).sum())


def selection_branch(candidates: list[FrontierCandidate], cfg: ExplorerConfig) -> str:
    sem = [c.s_sem for c in candidates]
    return "semantic" if candidates and max(sem) > cfg.tau_s else "geometric"


def choose_frontier(candidates: list[FrontierCandidate], cfg: ExplorerConfig) -> int:
    """argmax s_sem if it strictly exceeds tau_s, else argmax s_geo; ties go to the lowest index."""
    if not candidates:
        raise ValueError("no frontier candidates")
    if selection_branch(candidates, cfg) == "semantic":
        return int(np.argmax([c.s_sem for c in candidates]))
    return int(np.argmax([c.s_geo for c in candidates]))


def navigation_mask(memory: SpatialMemory, clearance_cells: int) -> np.ndarray:
    """Free cells clear of mapped obstacles, plus every cell the agent has stood on."""
    states = memory.occupancy().states
    return ((states == FREE) & ~inflate(states == OCCUPIED, clearance_cells)) | memory.visited


def plan_relaxed(memory: SpatialMemory, start, goal, clearance_cells: int, blocked: np.ndarray | None = None):
    """Plan on the navigation mask, shrinking the clearance one cell at a time until a path exists.

    ``blocked`` cells (where the agent has collided) are never planned through.
    """
    for c in range(clearance_cells, -1, -1):
        mask = navigation_mask(memory, c)
        if blocked is not None:
            mask &= ~blocked
        path = plan_path(mask, start, goal)
        if path is not None:
            return path
    return None


def frontier_candidates(memory: SpatialMemory, passable: np.ndarray, intrinsics: Camera, height: float,
                        min_size: int = 5, pitch: float = 0.0) -> list[FrontierCandidate]:
    """One candidate per frontier cluster, targeting its reachable-looking member nearest the centroid."""
    out = []
    grid = memory.grid
    for cl in extract_frontiers(memory.occupancy(), min_size):
        # member cells ordered by distance to the centroid, lexicographic on ties
        d = np.linalg.norm(grid.centers(cl.cells) - cl.centroid, axis=1)
        order = np.lexsort((cl.cells[:, 1], cl.cells[:, 0], d))
        ok = [tuple(int(v) for v in cl.cells[k]) for k in order if passable[tuple(cl.cells[k])]]
        if not ok:
            continue
        cell = ok[0]
        xy = grid.center(*cell)
        yaw = float(np.arctan2(cl.normal[1], cl.normal[0]))
        pose = yaw_pitch_camera(intrinsics, [xy[0], xy[1], height], yaw, pitch)
        out.append(FrontierCandidate(cl, cell, pose))
    return out


@dataclass
class EpisodeResult:
    task: str  # "qa", "goal" or "explore"
    question: str | None
    status: str  # "answered" | "exhausted"
    answer: str | None = None
    confidence: float = 0.0
    success: bool = False
    spl: float = 0.0
    steps: int = 0
    trajectory: list = dc_field(default_factory=list)
    trajectory_length: float = 0.0
    final_position: list = dc_field(default_factory=list)
    coverage: list = dc_field(default_factory=list)
    log: list = dc_field(default_factory=list)
    target_label: str | None = None
    memory: SpatialMemory | None = dc_field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "question": self.question,
            "status": self.status,
            "answer": self.answer,
            "confidence": round(float(self.confidence), 6),
            "success": bool(self.success),
            "spl": round(float(self.spl), 6),
            "steps": self.steps,
            "trajectory_length": round(float(self.trajectory_length), 6),
            "final_position": [round(float(v), 6) for v in self.final_position],
            "coverage": [round(float(c), 6) for c in self.coverage],
            "target_label": self.target_label,
            "log": self.log,
        }


def answer_from_memory(memory: SpatialMemory, question: str, oracle, embedder, cfg: ExplorerConfig,
                       record: dict | None = None):
    """Retrieve ROIs, render them from their optimal views and let the oracle answer.

    ROIs are tried in order (object ROIs by oracle rank, then semantic clusters);
    returns (answer, confidence, roi) for the first confident answer, or
    (UNKNOWN_ANSWER, best confidence, None).
    """
    rcfg = cfg.retrieval
    rois = retrieve_object_rois(memory.graph, question, oracle, rcfg)
    texts = oracle.target_descriptions(question) if hasattr(oracle, "target_descriptions") else []
    queries = [embedder.embed_text(t) for t in texts] if embedder is not None else []
    if queries:
        rois += retrieve_semantic_rois(memory.field, np.array(queries), rcfg)
    best_conf = 0.0
    tried = []
    for roi in rois:
        view = select_optimal_view(roi, memory.field, memory.tsdf, rcfg)
        images = render_roi_views(roi, memory.field, view, rcfg)
        answer, conf = oracle.answer_question(question, images)
        tried.append({
            "provenance": roi.provenance, "source_id": int(roi.source_id), "label": roi.label,
            "centroid": [round(float(v), 4) for v in roi.centroid], "score": round(float(roi.score), 6),
            "s_vis": None if view is None else round(view.s_vis, 6),
            "s_area": None if view is None else round(view.s_area, 6),
            "s_opa": None if view is None else round(view.s_opa, 6),
            "answer": answer, "confidence": round(float(conf), 6),
        })
        best_conf = max(best_conf, float(conf))
        if answer != UNKNOWN_ANSWER and conf > cfg.answer_confidence_threshold:
            if record is not None:
                record["rois"] = tried
            return answer, float(conf), roi
    if record is not None:
        record["rois"] = tried
    return UNKNOWN_ANSWER, best_conf, None


def _move_along(world, memory: SpatialMemory, path, max_move: float, blocked: np.ndarray | None = None) -> float:
    """Advance along ``path`` (first cell = current) for at most ``max_move`` meters; returns meters moved.

    A refused step marks its cell in ``blocked`` and ends the move.
    """
    start = world.trajectory_length
    for cell in path[1:]:
        if world.trajectory_length - start >= max_move - 1e-9:
            break
        if not world.step_agent(cell):
            if blocked is not None:
                blocked[cell] = True
            break
        memory.mark_visited(world.cell)
    return world.trajectory_length - start


def run_episode(world, question: str | None, cfg: ExplorerConfig | None = None, oracle=None,
                memory: SpatialMemory | None = None, embedder=None, task: str | None = None) -> EpisodeResult:
    """Explore until the oracle answers confidently, frontiers run out, or ``max_steps`` is reached.

    ``task`` is "qa" (answer the question), "goal" (reach the target named in the
    question) or "explore" (mapping only, no question). An existing ``memory`` is
    reused, which is how knowledge carries over between episodes.
    """
    cfg = cfg or ExplorerConfig()
    if task is None:
        task = "explore" if question is None else ("goal" if question.lower().startswith("go to") else "qa")
    memory = memory if memory is not None else SpatialMemory(world.grid, cfg.memory, seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 7])
    free_truth = world.passable
    result = EpisodeResult(task=task, question=question, status="exhausted", memory=memory)
    if oracle is not None and question is not None and hasattr(oracle, "ground_truth_answer"):
        tgt = oracle.target_index(question) if hasattr(oracle, "target_index") else None
        result.target_label = None if tgt is None else world.scene.objects[tgt].label
    start_cell = world.cell
    memory.mark_visited(world.cell)
    result.trajectory.append(list(world.cell))
    prev_choice = None
    prev_free = -1
    blocked = np.zeros((memory.grid.nx, memory.grid.ny), dtype=bool)
    answered_roi = None

    def live_view(cam: Camera) -> View:
        return View.from_keyframe(world.render(cam))

    def memory_view(cam: Camera) -> View:
        out = rasterize(memory.field, cam, ("color", "depth", "alpha"))
        return View(color=out.color, alpha=out.alpha, camera=cam, depth=out.depth, source="memory")

    frontier_render = live_view if cfg.frontier_view == "live" else memory_view

    for step in range(cfg.max_steps):
        record: dict = {"step": step, "cell": list(world.cell)}
        frames = world.observe()
        dets = []
        for k, f in enumerate(frames):
            dets += world.detect(f, world.frames_captured - len(frames) + k)
        upd = memory.update(frames, dets, embedder)
        record["keyframes_inserted"] = upd["inserted"]
        record["n_gaussians"] = upd["n_gaussians"]
        record["detections"] = sorted(d.label for d in dets)
        occ = memory.occupancy()
        result.coverage.append(coverage(occ.states, free_truth))
        result.steps = step + 1

        if question is not None and oracle is not None and task != "explore":
            answer, conf, roi = answer_from_memory(memory, question, oracle, embedder, cfg, record)
            record["answer"] = answer
            record["confidence"] = round(conf, 6)
            result.confidence = max(result.confidence, conf)
            if roi is not None:
                result.answer = answer
                result.confidence = conf
                result.status = "answered"
                answered_roi = roi
                result.log.append(record)
                break

        passable = navigation_mask(memory, cfg.clearance_cells)
        cands = frontier_candidates(memory, passable, world.intrinsics, world.config.camera_height, cfg.min_frontier,
                                    np.radians(world.config.camera_pitch_deg))
        ask = question is not None and oracle is not None and task != "explore"
        for c in cands:
            c.s_sem = semantic_frontier_score(c, question, oracle, frontier_render) if ask else 0.0
            c.s_geo = geometric_frontier_score(memory.field, c.approach_pose, cfg.fim_size)
        n_free = int(np.count_nonzero(occ.states == FREE))
        record["frontiers"] = [
            {"centroid": [round(float(v), 4) for v in c.centroid], "cells": int(len(c.cluster.cells)),
             "s_sem": round(c.s_sem, 6), "s_geo": round(c.s_geo, 6)}
            for c in cands
        ]
        chosen = None
        pool = list(range(len(cands)))
        while pool:
            sub = [cands[i] for i in pool]
            if cfg.policy == "random":
                k, branch = int(rng.integers(len(sub))), "random"
            elif cfg.policy == "geometric":
                k, branch = int(np.argmax([c.s_geo for c in sub])), "geometric"
            elif cfg.policy == "semantic":
                k, branch = int(np.argmax([c.s_sem for c in sub])), "semantic"
            else:
                k, branch = choose_frontier(sub, cfg), selection_branch(sub, cfg)
            idx = pool[k]
            c = cands[idx]
            key = tuple(np.round(c.centroid, 6))
            # progress guard: never pick the same frontier twice running without the map changing
            if key == prev_choice and n_free == prev_free:
                pool.pop(k)
                continue
            path = plan_relaxed(memory, world.cell, c.target_cell, cfg.clearance_cells, blocked)
            if path is None:
                pool.pop(k)
                continue
            chosen = (idx, branch, path)
            break
        if chosen is None:
            record["decision"] = "exhausted"
            result.log.append(record)
            break
        idx, branch, path = chosen
        prev_choice, prev_free = tuple(np.round(cands[idx].centroid, 6)), n_free
        moved = _move_along(world, memory, path, cfg.max_move, blocked)
        if world.cell == cands[idx].target_cell:
            world.face(cands[idx].cluster.normal)
        record.update({"decision": branch, "chosen": idx, "moved": round(moved, 6)})
        result.trajectory.append(list(world.cell))
        result.log.append(record)

    if answered_roi is not None and task == "goal":
        _go_to(world, memory, answered_roi.centroid, cfg, blocked)
        result.trajectory.append(list(world.cell))

    result.trajectory_length = world.trajectory_length
    result.final_position = [float(v) for v in world.position[:2]]
    _score(result, world, oracle, question, start_cell, cfg)
    return result


def _go_to(world, memory: SpatialMemory, target_xy, cfg: ExplorerConfig, blocked: np.ndarray | None = None) -> None:
    """Walk to the reachable cell nearest ``target_xy`` on the agent's own map.

    Every clearance from ``cfg.clearance_cells`` down to 0 is tried; the widest
    one whose nearest reachable cell is closest wins. A collision replans.
    """
    blocked = np.zeros((memory.grid.nx, memory.grid.ny), dtype=bool) if blocked is None else blocked
    for _ in range(memory.grid.nx * memory.grid.ny):
        best = None
        for c in range(cfg.clearance_cells, -1, -1):
            mask = navigation_mask(memory, c) & ~blocked
            labels, _ = ndimage.label(mask)
            if labels[world.cell] == 0:
                continue
            cells = np.argwhere(labels == labels[world.cell])
            d = np.linalg.norm(memory.grid.centers(cells) - np.asarray(target_xy)[:2], axis=1)
            k = np.lexsort((cells[:, 1], cells[:, 0], d))[0]
            if best is None or d[k] < best[0] - 1e-9:
                best = (d[k], mask, tuple(int(v) for v in cells[k]))
        if best is None:
            return
        path = plan_path(best[1], world.cell, best[2])
        if path is None:
            return
        n_bumps = int(blocked.sum())
        _move_along(world, memory, path, np.inf, blocked)
        if int(blocked.sum()) == n_bumps:
            return


def _score(result: EpisodeResult, world, oracle, question, start_cell, cfg: ExplorerConfig) -> None:
    if question is None or oracle is None or not hasattr(oracle, "target_index"):
        return
    tgt = oracle.target_index(question)
    if tgt is None:
        return
    if result.task == "goal":
        centre = np.asarray(world.scene.objects[tgt].center[:2])
        ok = result.status == "answered" and np.linalg.norm(world.position[:2] - centre) <= cfg.success_radius
        shortest = shortest_to_region(world.passable, world.grid, start_cell, centre, cfg.success_radius)
        result.success = bool(ok)
        result.spl = spl(result.success, shortest, result.trajectory_length)
    else:
        result.success = result.answer is not None and result.answer == oracle.ground_truth_answer(question)
        result.spl = float(result.success)
