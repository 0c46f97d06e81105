"""Binary memory snapshots.

Layout (all integers little-endian)::

    8 bytes   magic  b"GSMEMSNP"
    u32       format version
    u32       manifest length in bytes
    manifest  UTF-8 JSON: metadata, scene graph, cameras, config and a blob table
    blobs     raw little-endian arrays back to back, located by the blob table
              entries {"name", "dtype", "shape", "offset", "nbytes"}

Arrays are stored at full precision, so a loaded memory renders bit-identically.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .camera import Camera
from .field import GaussianField
from .frames import Keyframe
from .maps import GridSpec, TsdfGrid
from .memory import MemoryConfig, SpatialMemory
from .scene_graph import SceneGraph, SceneGraphNode

MAGIC = b"GSMEMSNP"
VERSION = 1
_FIELD_ARRAYS = ("positions", "log_scales", "rotations", "opacity_logits", "colors", "features", "feature_weights")


class SnapshotError(Exception):
    """Unreadable snapshot; ``kind`` is "corrupt" or "version"."""

    def __init__(self, message: str, kind: str = "corrupt"):
        super().__init__(message)
        self.kind = kind


def _le(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def save_snapshot(memory: SpatialMemory, path, config: dict | None = None, include_images: bool = False,
                  extra: dict | None = None) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    for name in _FIELD_ARRAYS:
        arrays.append((f"field.{name}", getattr(memory.field, name)))
    arrays += [
        ("tsdf.values", memory.tsdf.values),
        ("tsdf.weights", memory.tsdf.weights),
        ("occupancy.states", memory.occupancy().states),
        ("visited", memory.visited.astype(np.uint8)),
    ]
    keyframes = []
    for kid in sorted(memory.keyframes):
        kf = memory.keyframes[kid]
        keyframes.append({"id": kid, "camera": kf.camera.to_dict(), "has_images": include_images})
        if include_images:
            arrays.append((f"keyframe.{kid}.color", kf.color))
            arrays.append((f"keyframe.{kid}.depth", kf.depth))
            if kf.labels is not None:
                arrays.append((f"keyframe.{kid}.labels", kf.labels.astype(np.int64)))
    table, offset, blobs = [], 0, []
    for name, a in arrays:
        b = _le(a).tobytes()
        table.append({"name": name, "dtype": _le(a).dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(b)})
        offset += len(b)
        blobs.append(b)
    g = memory.grid
    manifest = {
        "format": "gsmem-snapshot",
        "version": VERSION,
        "grid": {"origin": list(map(float, g.origin)), "cell": g.cell, "nx": g.nx, "ny": g.ny},
        "tsdf": {"origin": list(map(float, memory.tsdf.origin)), "voxel_size": memory.tsdf.voxel_size},
        "feature_dim": memory.field.feature_dim,
        "graph": {
            "next_id": memory.graph.next_id,
            "nodes": [
                {"id": n.id, "label": n.label, "bbox_min": n.bbox_min.tolist(), "bbox_max": n.bbox_max.tolist(),
                 "best_confidence": n.best_confidence, "best_pose": n.best_pose.to_dict(),
                 "observation_count": n.observation_count}
                for n in memory.graph.nodes
            ],
        },
        "keyframes": keyframes,
        "window": list(memory.mapper.state.window),
        "config": config or {},
        "extra": extra or {},
        "blobs": table,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def read_snapshot(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Manifest and arrays of a snapshot file."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MAGIC:
        raise SnapshotError(f"{path}: not a memory snapshot")
    version, mlen = struct.unpack("<II", data[8:16])
    if version > VERSION:
        raise SnapshotError(f"{path}: snapshot version {version} is newer than supported version {VERSION}", "version")
    if 16 + mlen > len(data):
        raise SnapshotError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[16 : 16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SnapshotError(f"{path}: unreadable manifest ({e})") from e
    base = 16 + mlen
    arrays = {}
    try:
        for entry in manifest["blobs"]:
            start = base + entry["offset"]
            end = start + entry["nbytes"]
            if end > len(data):
                raise SnapshotError(f"{path}: truncated array {entry['name']}")
            a = np.frombuffer(data[start:end], dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
            arrays[entry["name"]] = a.astype(a.dtype.newbyteorder("="))
    except (KeyError, TypeError, ValueError) as e:
        raise SnapshotError(f"{path}: malformed blob table ({e})") from e
    return manifest, arrays


def load_snapshot(path, cfg: MemoryConfig | None = None) -> tuple[SpatialMemory, dict]:
    """Rebuild a :class:`SpatialMemory`; returns it with the manifest."""
    manifest, arrays = read_snapshot(path)
    try:
        g = manifest["grid"]
        grid = GridSpec(np.array(g["origin"]), float(g["cell"]), int(g["nx"]), int(g["ny"]))
        cfg = cfg or MemoryConfig(feature_dim=int(manifest["feature_dim"]))
        mem = SpatialMemory(grid, cfg)
        mem.field = GaussianField(**{k: arrays[f"field.{k}"].copy() for k in _FIELD_ARRAYS})
        mem.mapper.field = mem.field
        t = manifest["tsdf"]
        mem.tsdf = TsdfGrid(np.array(t["origin"]), float(t["voxel_size"]), arrays["tsdf.values"].copy(),
                            arrays["tsdf.weights"].copy())
        mem.visited = arrays["visited"].astype(bool)
        graph = SceneGraph(next_id=int(manifest["graph"]["next_id"]))
        for n in manifest["graph"]["nodes"]:
            graph.nodes.append(SceneGraphNode(
                id=int(n["id"]), label=n["label"], bbox_min=np.array(n["bbox_min"]), bbox_max=np.array(n["bbox_max"]),
                best_confidence=float(n["best_confidence"]), best_pose=Camera.from_dict(n["best_pose"]),
                observation_count=int(n["observation_count"]),
            ))
        mem.graph = graph
        state = mem.mapper.state
        for k in manifest["keyframes"]:
            kid = int(k["id"])
            if f"keyframe.{kid}.color" not in arrays:
                continue
            labels = arrays.get(f"keyframe.{kid}.labels")
            state.keyframes[kid] = Keyframe(arrays[f"keyframe.{kid}.color"].copy(), arrays[f"keyframe.{kid}.depth"].copy(),
                                            Camera.from_dict(k["camera"]), kid, None if labels is None else labels.copy())
        if manifest["keyframes"]:
            state.last_keyframe_id = max(int(k["id"]) for k in manifest["keyframes"])
        state.window.extend(i for i in manifest["window"] if i in state.keyframes)
    except SnapshotError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise SnapshotError(f"{path}: malformed snapshot ({e})") from e
    return mem, manifest
