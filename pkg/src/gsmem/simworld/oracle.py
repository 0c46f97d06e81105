"""Scripted stand-in for the vision-language model, backed by ground truth."""
from __future__ import annotations

import re

import numpy as np

from ..frames import View
from .render import render_ground_truth, scene_primitives
from .scene import SceneSpec
from .vocab import ALIASES, VOCABULARY, canonical, tags_of

UNKNOWN_ANSWER = "unknown"
REFERENCE_PIXELS = 256 * 256


def qa_question(label: str) -> str:
    return f"What color is the {label}?"


def goal_question(label: str) -> str:
    return f"Go to the {label}."


_TERMS = sorted(set(VOCABULARY) | set(ALIASES), key=len, reverse=True)


def parse_target(question: str) -> str | None:
    text = " " + re.sub(r"[^a-z ]", " ", question.lower()) + " "
    for term in _TERMS:
        if term in ("wall", "floor"):
            continue
        if f" {term} " in text:
            return canonical(term)
    return None


class NullOracle:
    """Oracle with no semantic signal: every frontier scores 0 and nothing is answered."""

    def target_descriptions(self, question):
        return []

    def rank_objects(self, question, objects):
        return [o[0] for o in objects]

    def score_frontier(self, question, view):
        return 0.0

    def answer_question(self, question, images):
        return UNKNOWN_ANSWER, 0.0


class ScriptedOracle:
    """Deterministic VLM substitute.

    * ``rank_objects``: exact (alias-resolved) label matches first, then objects
      sharing semantic tags with the target, then the rest; ties by confidence then id.
    * ``score_frontier``: 0.8 + 0.2 * min(1, target_fraction / 0.05) when the target
      shows in at least ``min_target_fraction`` of the view, else the pixel fraction of
      objects sharing a semantic tag with the target.
    * ``answer_question``: correct iff some image shows at least ``answer_pixels``
      (scaled to 256x256) pixels of the target that the image actually reproduces
      (alpha >= 0.5 and color within ``color_tol``); confidence is that pixel fraction.
    """

    def __init__(
        self,
        scene: SceneSpec,
        seed: int = 0,
        answer_pixels: float = 100.0,
        miss_rate: float = 0.0,
        corruption_rate: float = 0.0,
        color_tol: float = 0.2,
        min_target_fraction: float = 0.002,
    ):
        self.scene = scene
        self.prims = scene_primitives(scene)
        self.seed = seed
        self.answer_pixels = answer_pixels
        self.miss_rate = miss_rate
        self.corruption_rate = corruption_rate
        self.color_tol = color_tol
        self.min_target_fraction = min_target_fraction
        self._calls = 0

    def _rng(self):
        self._calls += 1
        return np.random.default_rng([self.seed, self._calls])

    def target_index(self, question: str) -> int | None:
        label = parse_target(question)
        if label is None:
            return None
        hits = self.scene.find(label)
        return hits[0] if hits else None

    def ground_truth_answer(self, question: str) -> str | None:
        i = self.target_index(question)
        if i is None:
            return None
        obj = self.scene.objects[i]
        return obj.label if question.lower().startswith("go to") else obj.color_name

    def target_descriptions(self, question: str) -> list[str]:
        label = parse_target(question)
        return [label] if label else []

    def rank_objects(self, question: str, objects) -> list[int]:
        target = parse_target(question)
        ttags = set(tags_of(target)) if target else set()

        def key(o):
            oid, label, _, conf = o
            exact = target is not None and canonical(label) == target
            shared = len(ttags & set(tags_of(label)))
            return (0 if exact else 1, -shared, -conf, oid)

        return [o[0] for o in sorted(objects, key=key)]

    def _gt_labels(self, view: View) -> np.ndarray:
        if view.labels is not None:
            return view.labels
        return render_ground_truth(self.prims, view.camera).labels

    def _reproduced(self, view: View, labels: np.ndarray) -> np.ndarray:
        """Pixels whose rendered color matches the true surface color."""
        gt_color = np.zeros(view.color.shape)
        hit = labels >= 0
        gt_color[hit] = self.prims.colors[labels[hit]]
        close = np.max(np.abs(view.color - gt_color), axis=-1) <= self.color_tol
        return hit & close & (view.alpha >= 0.5)

    def score_frontier(self, question: str, view: View) -> float:
        target = self.target_index(question)
        if target is None:
            return 0.0
        labels = self._gt_labels(view)
        seen = self._reproduced(view, labels)
        n = labels.size
        frac_target = np.count_nonzero(seen & (labels == target)) / n
        if frac_target >= self.min_target_fraction:
            return float(min(1.0, 0.8 + 0.2 * min(1.0, frac_target / 0.05)))
        ttags = set(self.scene.objects[target].semantic_tags)
        related = [i for i, o in enumerate(self.scene.objects) if ttags & set(o.semantic_tags)]
        frac = np.count_nonzero(seen & np.isin(labels, related)) / n
        return float(np.clip(frac, 0.0, 1.0))

    def target_pixels(self, question: str, view: View) -> int:
        target = self.target_index(question)
        if target is None:
            return 0
        labels = self._gt_labels(view)
        return int(np.count_nonzero(self._reproduced(view, labels) & (labels == target)))

    def answer_question(self, question: str, images) -> tuple[str, float]:
        rng = self._rng()
        u_miss, u_corrupt = rng.random(), rng.random()
        truth = self.ground_truth_answer(question)
        best_frac, ok = 0.0, False
        for view in images:
            n = view.color.shape[0] * view.color.shape[1]
            px = self.target_pixels(question, view)
            best_frac = max(best_frac, px / n)
            if px * REFERENCE_PIXELS / n >= self.answer_pixels:
                ok = True
        if not ok or truth is None or u_miss < self.miss_rate:
            return UNKNOWN_ANSWER, best_frac
        if u_corrupt < self.corruption_rate:
            return "wrong-" + truth, best_frac
        return truth, best_frac
