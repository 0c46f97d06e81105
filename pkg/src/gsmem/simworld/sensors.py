"""Simulated detector and the deterministic embedding provider."""
from __future__ import annotations

import numpy as np

from ..camera import Camera
from ..frames import Keyframe
from ..scene_graph import Detection
from .render import Primitives, render_ground_truth, scene_primitives
from .scene import SceneSpec
from .vocab import VOCABULARY, EmbeddingTable


def _rate_for(rate, label: str) -> float:
    if isinstance(rate, dict):
        return float(rate.get(label, rate.get("*", 0.0)))
    return float(rate)


def detect(
    scene: SceneSpec,
    cam: Camera,
    seed,
    miss_rate=0.0,
    corruption_rate=0.0,
    min_pixels: int = 10,
    frame: Keyframe | None = None,
) -> list[Detection]:
    """Ground-truth detections of objects with at least ``min_pixels`` visible pixels.

    ``miss_rate`` and ``corruption_rate`` may be floats or {label: rate} dicts
    (key ``"*"`` is the fallback). Every visible object consumes the same four
    random draws whether or not it is dropped, so outputs for one seed are stable.
    """
    if frame is None:
        frame = render_ground_truth(scene, cam)
    counts = np.bincount(frame.labels[frame.labels >= 0].ravel(), minlength=len(scene.objects))
    rng = np.random.default_rng(seed)
    out = []
    others = [l for l in VOCABULARY if l not in ("wall", "floor")]
    for i, obj in enumerate(scene.objects):
        if counts[i] < min_pixels:
            continue
        conf = rng.uniform(0.5, 1.0)
        u_miss, u_corrupt = rng.random(), rng.random()
        alt = others[int(rng.integers(len(others)))]
        if u_miss < _rate_for(miss_rate, obj.label):
            continue
        label = obj.label
        if u_corrupt < _rate_for(corruption_rate, obj.label):
            label = alt if alt != obj.label else others[(others.index(alt) + 1) % len(others)]
        lo, hi = obj.bbox
        out.append(Detection(label, float(conf), lo, hi, cam))
    return out


class SyntheticEmbedder:
    """Embedding provider backed by simulator labels: pixel feature = embedding of the surface label."""

    def __init__(self, scene: SceneSpec | Primitives | None = None, dim: int = 32):
        self.dim = dim
        self.table = EmbeddingTable(dim)
        self._labels: list[str] = []
        if scene is not None:
            self.bind(scene)

    def bind(self, scene: SceneSpec | Primitives) -> None:
        prims = scene if isinstance(scene, Primitives) else scene_primitives(scene)
        self._labels = list(prims.labels)
        self._rows = np.array([self.table(l) for l in self._labels]).reshape(-1, self.dim)

    def embed_text(self, text: str) -> np.ndarray:
        return self.table(text)

    def embed_image(self, frame: Keyframe) -> np.ndarray:
        if frame.labels is None:
            raise ValueError("synthetic embedder needs per-pixel simulator labels")
        out = np.zeros(frame.labels.shape + (self.dim,))
        hit = frame.labels >= 0
        out[hit] = self._rows[frame.labels[hit]]
        return out


def embed(label_or_frame, embedder: SyntheticEmbedder | None = None):
    embedder = embedder or SyntheticEmbedder()
    if isinstance(label_or_frame, str):
        return embedder.embed_text(label_or_frame)
    return embedder.embed_image(label_or_frame)
