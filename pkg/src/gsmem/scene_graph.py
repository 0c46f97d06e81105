"""Object-level memory: noisy detections consolidated into persistent nodes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Camera


@dataclass
class Detection:
    label: str
    confidence: float
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    observing_pose: Camera

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64)
        if np.any(self.bbox_min > self.bbox_max):
            raise ValueError("bbox min must not exceed max")

    @property
    def centroid(self) -> np.ndarray:
        return 0.5 * (self.bbox_min + self.bbox_max)


@dataclass
class SceneGraphNode:
    id: int
    label: str
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    best_confidence: float
    best_pose: Camera
    observation_count: int = 1

    @property
    def centroid(self) -> np.ndarray:
        return 0.5 * (self.bbox_min + self.bbox_max)


def iou3d(amin, amax, bmin, bmax) -> float:
    inter = np.prod(np.clip(np.minimum(amax, bmax) - np.maximum(amin, bmin), 0.0, None))
    union = np.prod(amax - amin) + np.prod(bmax - bmin) - inter
    return float(inter / union) if union > 0 else 0.0


@dataclass
class SceneGraph:
    nodes: list[SceneGraphNode] = field(default_factory=list)
    match_distance: float = 0.5
    match_iou: float = 0.1
    next_id: int = 0

    def _match(self, det: Detection) -> SceneGraphNode | None:
        best, best_d = None, np.inf
        for node in self.nodes:
            if node.label != det.label:
                continue
            d = float(np.linalg.norm(node.centroid - det.centroid))
            if d < self.match_distance and iou3d(node.bbox_min, node.bbox_max, det.bbox_min, det.bbox_max) > self.match_iou:
                if d < best_d:
                    best, best_d = node, d
        return best

    def ingest(self, detections) -> "SceneGraph":
        """Merge detections in place (and return self)."""
        for det in detections:
            node = self._match(det)
            if node is None:
                self.nodes.append(
                    SceneGraphNode(self.next_id, det.label, det.bbox_min.copy(), det.bbox_max.copy(),
                                   float(det.confidence), det.observing_pose)
                )
                self.next_id += 1
                continue
            node.bbox_min = np.minimum(node.bbox_min, det.bbox_min)
            node.bbox_max = np.maximum(node.bbox_max, det.bbox_max)
            node.observation_count += 1
            if det.confidence > node.best_confidence:
                node.best_confidence = float(det.confidence)
                node.best_pose = det.observing_pose
        return self

    def list_objects(self) -> list[tuple[int, str, np.ndarray, float]]:
        return [(n.id, n.label, n.centroid, n.best_confidence) for n in sorted(self.nodes, key=lambda n: n.id)]

    def node(self, node_id: int) -> SceneGraphNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def __len__(self) -> int:
        return len(self.nodes)


def ingest(graph: SceneGraph, detections) -> SceneGraph:
    return graph.ingest(detections)


def list_objects(graph: SceneGraph):
    return graph.list_objects()
