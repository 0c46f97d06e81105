"""Incremental mapping: keyframe selection, Gaussian seeding and sliding-window optimization."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .field import PARAM_GROUPS, GaussianField, logit
from .frames import Keyframe
from .raster import DEFAULT_SETTINGS, RenderSettings, rasterize, render_backward


@dataclass
class MapperConfig:
    flow_threshold: float = 8.0
    window_size: int = 10
    extra_frames: int = 2
    lambda_depth: float = 0.5
    scene_extent: float = 5.0
    lr_position: float = 1.6e-4  # multiplied by scene_extent
    lr_color: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 5e-3
    seed_alpha: float = 0.5
    seed_block: int = 4
    # also seed where the observed surface sits in front of the mapped one: d_obs < ratio * d_map; None disables
    seed_depth_ratio: float | None = None
    seed_opacity: float = 0.9
    flow_grid: int = 32

    def learning_rates(self) -> dict[str, float]:
        return {
            "positions": self.lr_position * self.scene_extent,
            "log_scales": self.lr_scale,
            "rotations": self.lr_rotation,
            "opacity_logits": self.lr_opacity,
            "colors": self.lr_color,
        }


@dataclass
class WindowState:
    window: deque = field(default_factory=deque)
    keyframes: dict[int, Keyframe] = field(default_factory=dict)
    last_keyframe_id: int = 0  # ids start at 1
    window_size: int = 10

    def last_keyframe(self) -> Keyframe | None:
        return self.keyframes.get(self.last_keyframe_id)


def average_flow(frame: Keyframe, last_kf: Keyframe, grid: int = 32) -> float:
    """Mean reprojection displacement (px) of a grid of ``last_kf`` pixels into ``frame``.

    Pixels with no depth, or that land behind the camera or off-image, are skipped;
    returns inf when nothing survives.
    """
    src = last_kf.camera
    us = np.floor((np.arange(grid) + 0.5) * src.width / grid).astype(int)
    vs = np.floor((np.arange(grid) + 0.5) * src.height / grid).astype(int)
    uu, vv = np.meshgrid(us, vs)
    d = last_kf.depth[vv, uu]
    ok = d > 0
    if not np.any(ok):
        return float("inf")
    u, v, d = uu[ok].astype(float), vv[ok].astype(float), d[ok]
    pc = np.stack([(u - src.cx) / src.fx * d, (v - src.cy) / src.fy * d, d], axis=1)
    world = (pc - src.t_cw) @ src.R_cw
    uv, z = frame.camera.project(world)
    dst = frame.camera
    keep = (z > 0) & (uv[:, 0] >= -0.5) & (uv[:, 0] <= dst.width - 0.5) & (uv[:, 1] >= -0.5) & (uv[:, 1] <= dst.height - 0.5)
    if not np.any(keep):
        return float("inf")
    disp = uv[keep] - np.stack([u, v], axis=1)[keep]
    return float(np.mean(np.linalg.norm(disp, axis=1)))


def seed_gaussians(field: GaussianField, frame: Keyframe, cfg: MapperConfig, settings=DEFAULT_SETTINGS) -> int:
    """Add one Gaussian per block of pixels the current map leaves uncovered or places too far away.

    A pixel needs a new Gaussian when the render alpha is below ``seed_alpha``, or when
    ``seed_depth_ratio`` is set and the observed depth is less than that fraction of the
    alpha-normalized rendered depth.
    """
    cam = frame.camera
    if len(field):
        out = rasterize(field, cam, ("alpha", "depth"), settings)
        alpha = out.alpha
        need = alpha < cfg.seed_alpha
        if cfg.seed_depth_ratio is not None:
            covered = ~need
            mapped = np.zeros_like(alpha)
            mapped[covered] = out.depth[covered] / alpha[covered]
            need |= covered & (frame.depth < cfg.seed_depth_ratio * mapped)
    else:
        need = np.ones((cam.height, cam.width), dtype=bool)
    b = cfg.seed_block
    centre = (b - 1) / 2
    pts, cols, sig = [], [], []
    for by in range(0, cam.height, b):
        for bx in range(0, cam.width, b):
            dep = frame.depth[by : by + b, bx : bx + b]
            ok = need[by : by + b, bx : bx + b] & (dep > 0)
            if not ok.any():
                continue
            cand = np.argwhere(ok)
            # pixel closest to the block centre, first in row-major order on ties
            k = np.argmin(np.sum((cand - centre) ** 2, axis=1))
            v, u = by + cand[k, 0], bx + cand[k, 1]
            z = frame.depth[v, u]
            pts.append([(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z])
            cols.append(frame.color[v, u])
            sig.append(0.5 * b * z / cam.fx)
    if not pts:
        return 0
    world = (np.array(pts) - cam.t_cw) @ cam.R_cw
    n = len(world)
    new = GaussianField(
        positions=world,
        log_scales=np.repeat(np.log(np.array(sig))[:, None], 3, axis=1),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        opacity_logits=np.full(n, logit(cfg.seed_opacity)),
        colors=np.clip(np.array(cols), 0.0, 1.0),
        features=np.zeros((n, field.feature_dim)),
        feature_weights=np.zeros(n),
    )
    field.extend(new)
    return n


def maybe_insert_keyframe(frame: Keyframe, state: WindowState, field: GaussianField | None = None,
                          flow_threshold: float = 8.0, cfg: MapperConfig | None = None) -> bool:
    """Insert ``frame`` when the store is empty or its flow to the last keyframe exceeds the threshold."""
    last = state.last_keyframe()
    if last is not None and not average_flow(frame, last, cfg.flow_grid if cfg else 32) > flow_threshold:
        return False
    kid = state.last_keyframe_id + 1
    frame.id = kid
    state.keyframes[kid] = frame
    state.last_keyframe_id = kid
    state.window.append(kid)
    while len(state.window) > state.window_size:
        state.window.popleft()
    if field is not None:
        seed_gaussians(field, frame, cfg or MapperConfig())
    return True


class Adam:
    """Per-group Adam; moments grow with the field when Gaussians are appended."""

    def __init__(self, lrs: dict[str, float], betas=(0.9, 0.999), eps=1e-15):
        self.lrs = lrs
        self.b1, self.b2 = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: np.ndarray = np.zeros(0)

    def _resize(self, field: GaussianField):
        n = len(field)
        for k in PARAM_GROUPS:
            ref = getattr(field, k)
            old = self.m.get(k)
            if old is None or len(old) != n:
                pad = np.zeros((n - (0 if old is None else len(old)),) + ref.shape[1:])
                self.m[k] = pad if old is None else np.concatenate([old, pad])
                self.v[k] = pad.copy() if old is None else np.concatenate([self.v[k], pad])
        if len(self.steps) != n:
            self.steps = np.concatenate([self.steps, np.zeros(n - len(self.steps))])

    def step(self, field: GaussianField, grads) -> None:
        self._resize(field)
        touched = np.zeros(len(field), dtype=bool)
        for k, g in grads.items():
            touched |= np.any(g.reshape(len(g), -1) != 0, axis=1)
        if not touched.any():
            return
        # Gaussians without gradient keep their moments and step counts
        self.steps[touched] += 1
        t = self.steps[touched]
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            gt = g[touched]
            m[touched] = self.b1 * m[touched] + (1 - self.b1) * gt
            v[touched] = self.b2 * v[touched] + (1 - self.b2) * gt * gt
            shape = (-1,) + (1,) * (g.ndim - 1)
            mhat = m[touched] / (1 - self.b1 ** t).reshape(shape)
            vhat = v[touched] / (1 - self.b2 ** t).reshape(shape)
            param = getattr(field, k)
            param[touched] -= self.lrs[k] * mhat / (np.sqrt(vhat) + self.eps)


def optimization_set(state: WindowState, rng: np.random.Generator, extra: int = 2) -> list[int]:
    """Window ids plus up to ``extra`` ids drawn uniformly without replacement from the rest."""
    window = list(state.window)
    rest = sorted(set(state.keyframes) - set(window))
    k = min(extra, len(rest))
    sampled = sorted(int(i) for i in rng.choice(rest, size=k, replace=False)) if k else []
    return window + sampled


def frame_losses(field: GaussianField, frame: Keyframe, lambda_depth: float, settings: RenderSettings):
    """L1 color and masked L1 depth losses (per-pixel means) with their gradients."""
    out = rasterize(field, frame.camera, ("color", "depth"), settings)
    h, w = frame.depth.shape
    r = out.color - frame.color
    l_rgb = float(np.abs(r).sum() / (3 * h * w))
    g_color = np.sign(r) / (3 * h * w)
    mask = frame.depth > 0
    nd = max(int(mask.sum()), 1)
    rd = np.where(mask, out.depth - frame.depth, 0.0)
    l_depth = float(np.abs(rd).sum() / nd)
    g_depth = lambda_depth * np.sign(rd) / nd
    return l_rgb, l_depth, g_color, g_depth, out


class Mapper:
    """Owns the field's optimizer state and the keyframe window."""

    def __init__(self, field: GaussianField | None = None, cfg: MapperConfig | None = None,
                 settings: RenderSettings = DEFAULT_SETTINGS):
        self.cfg = cfg or MapperConfig()
        self.field = field if field is not None else GaussianField.empty()
        self.state = WindowState(window_size=self.cfg.window_size)
        self.settings = settings
        self.optimizer = Adam(self.cfg.learning_rates())
        self.last_set: list[int] = []

    def insert(self, frame: Keyframe) -> bool:
        return maybe_insert_keyframe(frame, self.state, self.field, self.cfg.flow_threshold, self.cfg)

    def optimize_step(self, rng: np.random.Generator) -> tuple[float, float]:
        return optimize_step(self.field, self.state, rng, self)


def optimize_step(field: GaussianField, state: WindowState, rng: np.random.Generator, mapper: Mapper | None = None):
    """One Adam step on L_rgb + lambda_d * L_depth over window + sampled frames; returns losses before the step."""
    if mapper is None:
        mapper = Mapper(field)
        mapper.state = state
    if not state.keyframes:
        raise ValueError("optimize_step needs at least one keyframe")
    cfg = mapper.cfg
    ids = optimization_set(state, rng, cfg.extra_frames)
    mapper.last_set = ids
    total = {k: np.zeros_like(getattr(field, k)) for k in PARAM_GROUPS}
    l_rgb = l_depth = 0.0
    for kid in ids:
        frame = state.keyframes[kid]
        lr, ld, gc, gd, out = frame_losses(field, frame, cfg.lambda_depth, mapper.settings)
        l_rgb += lr
        l_depth += ld
        if lr == 0.0 and ld == 0.0:
            continue
        g = render_backward(field, frame.camera, gc, gd, forward=out, settings=mapper.settings)
        for k, v in g.items():
            total[k] += v
    if len(field):
        mapper.optimizer.step(field, total)
        field.normalize_rotations()
        np.clip(field.colors, 0.0, 1.0, out=field.colors)
        np.clip(field.log_scales, np.log(1e-3), np.log(2.0), out=field.log_scales)
        np.clip(field.opacity_logits, -12.0, 12.0, out=field.opacity_logits)
    return l_rgb, l_depth
