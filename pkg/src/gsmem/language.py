"""Optimization-free language field: per-pixel embeddings pushed onto Gaussians by their blending weights."""
from __future__ import annotations

from typing import Iterable, Protocol

import numpy as np
import scipy.sparse as sp

from .field import GaussianField
from .frames import Keyframe
from .raster import DEFAULT_SETTINGS, Contributions, RenderSettings, rasterize


class EmbeddingProvider(Protocol):
    dim: int

    def embed_image(self, frame: Keyframe) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


def weighted_feature_sums(contrib: Contributions, pixel_features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(sum_p w_ip f_p, sum_p w_ip) per Gaussian for one frame."""
    n = contrib.n_gaussians
    flat = pixel_features.reshape(-1, pixel_features.shape[-1])
    m = sp.csr_matrix((contrib.weights, (contrib.gaussian_ids, contrib.pixel_index())), shape=(n, len(flat)))
    return np.asarray(m @ flat), contrib.totals()


def aggregate_features(
    field: GaussianField,
    frames: Iterable[Keyframe],
    provider: EmbeddingProvider,
    settings: RenderSettings = DEFAULT_SETTINGS,
    normalize: bool = True,
    contributions: dict | None = None,
) -> GaussianField:
    """Fold every frame's pixel embeddings into the field in place (and return it).

    All frames are rendered against the field state on entry, so the update is one
    weighted average over the whole frame set. ``contributions`` may map frame ids to
    precomputed :class:`Contributions` to reuse an earlier render.
    """
    frames = list(frames)
    n, dim = len(field), field.feature_dim
    if getattr(provider, "dim", dim) != dim:
        raise ValueError(f"provider dimension {provider.dim} does not match field dimension {dim}")
    s_add = np.zeros((n, dim))
    w_add = np.zeros(n)
    for frame in frames:
        feats = np.asarray(provider.embed_image(frame), dtype=np.float64)
        if feats.shape != (frame.camera.height, frame.camera.width, dim):
            raise ValueError(f"embedding map shape {feats.shape} does not match frame and field dimension {dim}")
        contrib = None if contributions is None else contributions.get(frame.id)
        if contrib is None:
            contrib = rasterize(field, frame.camera, ("contributions",), settings).contributions
        s, w = weighted_feature_sums(contrib, feats)
        s_add += s
        w_add += w
    touched = w_add > 0
    if not np.any(touched):
        return field
    w_old = field.feature_weights[touched]
    w_new = w_old + w_add[touched]
    f = (w_old[:, None] * field.features[touched] + s_add[touched]) / w_new[:, None]
    if normalize:
        norm = np.linalg.norm(f, axis=1, keepdims=True)
        f = np.where(norm > 0, f / np.where(norm > 0, norm, 1.0), 0.0)
    field.features[touched] = f
    field.feature_weights[touched] = w_new
    return field


def query_similarity(field: GaussianField, text_embedding: np.ndarray) -> np.ndarray:
    """Cosine similarity per Gaussian; Gaussians without a feature score -1."""
    q = np.asarray(text_embedding, dtype=np.float64)
    if q.shape != (field.feature_dim,):
        raise ValueError(f"query dimension {q.shape} does not match field dimension {field.feature_dim}")
    qn = np.linalg.norm(q)
    if qn == 0:
        return np.full(len(field), -1.0)
    norms = np.linalg.norm(field.features, axis=1)
    has = norms > 0
    sim = np.full(len(field), -1.0)
    sim[has] = field.features[has] @ (q / qn) / norms[has]
    return sim
