"""Software rasterizer for the Gaussian field with analytic gradients.

Forward compositing is front-to-back over depth-sorted splats:

    alpha_i(p) = min(0.99, opacity_i * exp(-0.5 d^T conic_i d)),  d = p - mean2d_i
    w_i(p)     = alpha_i(p) * prod_{j<i} (1 - alpha_j(p))
    C(p) = sum_i w_i c_i,   D(p) = sum_i w_i z_i

Per-pixel loops run in numba over 16x16 tiles. The per-Gaussian chain rule
from screen space back to 3D parameters is vectorized numpy.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numba
import numpy as np

from .camera import Camera, quat_to_rotmat, rotmat_grad_to_quat
from .field import GaussianField, sigmoid

TILE = 16
ALPHA_CLAMP = 0.99
T_MIN = 1e-4
CHANNELS = frozenset({"color", "depth", "alpha", "feature", "contributions"})


@dataclass(frozen=True)
class RenderSettings:
    near: float = 0.05
    cull_sigma: float = 3.0
    # added to the 2D covariance diagonal before inversion (px^2)
    blur: float = 0.3
    # splat-pixel pairs with alpha below this are skipped; also sets the footprint radius
    alpha_min: float = 1.0 / 255.0


DEFAULT_SETTINGS = RenderSettings()
EXACT_SETTINGS = RenderSettings(alpha_min=1e-10)


@dataclass
class Projected2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    jacobian: np.ndarray


@dataclass
class Projection:
    """Batched projection of a whole field; rows align with the field."""

    t_cam: np.ndarray  # (N,3) camera-frame means
    mean2d: np.ndarray  # (N,2)
    cov2d: np.ndarray  # (N,2,2) without blur
    conic: np.ndarray  # (N,3) inverse of blurred cov: a, b, c
    J: np.ndarray  # (N,2,3)
    V: np.ndarray  # (N,3,3) camera-frame covariance
    R: np.ndarray  # (N,3,3) rotation from quaternion
    scales: np.ndarray  # (N,3)
    opacity: np.ndarray  # (N,)
    radius: np.ndarray  # (N,) footprint radius px
    visible: np.ndarray  # (N,) bool
    ratio: np.ndarray  # (N,2) clamped x/z, y/z used in J
    unclamped: np.ndarray  # (N,2) bool


@numba.njit(cache=True)
def _project(pos, quat, scales, W, tcw, fx, fy, cx, cy, width, height, near, blur, cull_sigma, reach):
    n = pos.shape[0]
    t = np.empty((n, 3))
    mean2d = np.empty((n, 2))
    cov2d = np.empty((n, 2, 2))
    conic = np.zeros((n, 3))
    J = np.zeros((n, 2, 3))
    V = np.empty((n, 3, 3))
    R = np.empty((n, 3, 3))
    radius = np.empty(n)
    visible = np.zeros(n, dtype=np.bool_)
    ratio = np.empty((n, 2))
    unclamped = np.empty((n, 2), dtype=np.bool_)
    limx = 1.3 * 0.5 * width / fx
    limy = 1.3 * 0.5 * height / fy
    M = np.empty((3, 3))
    S = np.empty((3, 3))
    WS = np.empty((3, 3))
    JV = np.empty((2, 3))
    for i in range(n):
        for r in range(3):
            t[i, r] = W[r, 0] * pos[i, 0] + W[r, 1] * pos[i, 1] + W[r, 2] * pos[i, 2] + tcw[r]
        z = t[i, 2]
        front = z > near
        zs = z if front else 1.0
        mean2d[i, 0] = fx * t[i, 0] / zs + cx
        mean2d[i, 1] = fy * t[i, 1] / zs + cy
        # x/z and y/z are clamped to 1.3x the frustum inside J so splats grazing the
        # near plane far off-axis cannot blow up to cover the whole image
        rx = t[i, 0] / zs
        ry = t[i, 1] / zs
        unclamped[i, 0] = abs(rx) <= limx
        unclamped[i, 1] = abs(ry) <= limy
        rx = min(max(rx, -limx), limx)
        ry = min(max(ry, -limy), limy)
        ratio[i, 0] = rx
        ratio[i, 1] = ry
        J[i, 0, 0] = fx / zs
        J[i, 0, 2] = -fx * rx / zs
        J[i, 1, 1] = fy / zs
        J[i, 1, 2] = -fy * ry / zs
        qn = np.sqrt(quat[i, 0] ** 2 + quat[i, 1] ** 2 + quat[i, 2] ** 2 + quat[i, 3] ** 2)
        w, x, y, zq = quat[i, 0] / qn, quat[i, 1] / qn, quat[i, 2] / qn, quat[i, 3] / qn
        R[i, 0, 0] = 1 - 2 * (y * y + zq * zq)
        R[i, 0, 1] = 2 * (x * y - w * zq)
        R[i, 0, 2] = 2 * (x * zq + w * y)
        R[i, 1, 0] = 2 * (x * y + w * zq)
        R[i, 1, 1] = 1 - 2 * (x * x + zq * zq)
        R[i, 1, 2] = 2 * (y * zq - w * x)
        R[i, 2, 0] = 2 * (x * zq - w * y)
        R[i, 2, 1] = 2 * (y * zq + w * x)
        R[i, 2, 2] = 1 - 2 * (x * x + y * y)
        for r in range(3):
            for c in range(3):
                M[r, c] = R[i, r, c] * scales[i, c]
        for r in range(3):
            for c in range(3):
                S[r, c] = M[r, 0] * M[c, 0] + M[r, 1] * M[c, 1] + M[r, 2] * M[c, 2]
        for r in range(3):
            for c in range(3):
                WS[r, c] = W[r, 0] * S[0, c] + W[r, 1] * S[1, c] + W[r, 2] * S[2, c]
        for r in range(3):
            for c in range(3):
                V[i, r, c] = WS[r, 0] * W[c, 0] + WS[r, 1] * W[c, 1] + WS[r, 2] * W[c, 2]
        for r in range(2):
            for c in range(3):
                JV[r, c] = J[i, r, 0] * V[i, 0, c] + J[i, r, 1] * V[i, 1, c] + J[i, r, 2] * V[i, 2, c]
        for r in range(2):
            for c in range(2):
                cov2d[i, r, c] = JV[r, 0] * J[i, c, 0] + JV[r, 1] * J[i, c, 1] + JV[r, 2] * J[i, c, 2]
        a = cov2d[i, 0, 0] + blur
        b = cov2d[i, 0, 1]
        c = cov2d[i, 1, 1] + blur
        det = a * c - b * b
        ok = front and det > 1e-12 and np.isfinite(det)
        dets = det if ok else 1.0
        conic[i, 0] = c / dets
        conic[i, 1] = -b / dets
        conic[i, 2] = a / dets
        sx = np.sqrt(max(a, 0.0))
        sy = np.sqrt(max(c, 0.0))
        inside = (mean2d[i, 0] >= -0.5 - cull_sigma * sx and mean2d[i, 0] <= width - 0.5 + cull_sigma * sx
                  and mean2d[i, 1] >= -0.5 - cull_sigma * sy and mean2d[i, 1] <= height - 0.5 + cull_sigma * sy)
        lam = 0.5 * (a + c) + np.sqrt(max(0.25 * (a - c) ** 2 + b * b, 0.0))
        radius[i] = np.ceil(np.sqrt(max(reach[i], 0.0) * max(lam, 0.0)))
        visible[i] = ok and inside and reach[i] > 0
    return t, mean2d, cov2d, conic, J, V, R, radius, visible, ratio, unclamped


def project_field(field: GaussianField, cam: Camera, settings: RenderSettings = DEFAULT_SETTINGS) -> Projection:
    scales = field.scales
    opacity = field.opacities
    reach = 2.0 * np.log(np.maximum(opacity, 1e-300) / max(settings.alpha_min, 1e-12))
    t, mean2d, cov2d, conic, J, V, R, radius, visible, ratio, unclamped = _project(
        np.ascontiguousarray(field.positions, dtype=np.float64), np.ascontiguousarray(field.rotations, dtype=np.float64),
        np.ascontiguousarray(scales), np.ascontiguousarray(cam.R_cw, dtype=np.float64),
        np.ascontiguousarray(cam.t_cw, dtype=np.float64), float(cam.fx), float(cam.fy), float(cam.cx), float(cam.cy),
        cam.width, cam.height, settings.near, settings.blur, settings.cull_sigma, reach)
    return Projection(t, mean2d, cov2d, conic, J, V, R, scales, opacity, radius, visible, ratio, unclamped)


def project_gaussian(field: GaussianField, index: int, cam: Camera, settings: RenderSettings = DEFAULT_SETTINGS):
    """Project one Gaussian; returns ``None`` when culled."""
    p = project_field(field.subset([index]), cam, settings)
    if not p.visible[0]:
        return None
    return Projected2D(mean2d=p.mean2d[0], cov2d=p.cov2d[0], depth=float(p.t_cam[0, 2]), jacobian=p.J[0])


@dataclass
class Contributions:
    """Per-pixel blending weights in CSR layout over flattened pixels (row-major)."""

    pixel_ptr: np.ndarray
    gaussian_ids: np.ndarray
    weights: np.ndarray
    n_gaussians: int

    def pixel(self, v: int, u: int, width: int) -> tuple[np.ndarray, np.ndarray]:
        p = v * width + u
        s, e = self.pixel_ptr[p], self.pixel_ptr[p + 1]
        return self.gaussian_ids[s:e], self.weights[s:e]

    def pixel_index(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.pixel_ptr) - 1), np.diff(self.pixel_ptr))

    def totals(self) -> np.ndarray:
        """Sum of blending weights per Gaussian over all pixels."""
        return np.bincount(self.gaussian_ids, weights=self.weights, minlength=self.n_gaussians)


@dataclass
class _Raster:
    order: np.ndarray  # sorted visible -> field index
    mean: np.ndarray
    conic: np.ndarray
    opac: np.ndarray
    colors: np.ndarray
    depths: np.ndarray
    tile_ptr: np.ndarray
    tile_ids: np.ndarray
    thr: np.ndarray  # per-splat log-space cutoff: skip where power < thr
    proj: Projection


@dataclass
class RenderOutput:
    color: np.ndarray | None = None
    depth: np.ndarray | None = None
    alpha: np.ndarray | None = None
    feature: np.ndarray | None = None
    contributions: Contributions | None = None
    camera: Camera | None = None
    _raster: _Raster | None = dc_field(default=None, repr=False)
    _T: np.ndarray | None = dc_field(default=None, repr=False)
    _n: np.ndarray | None = dc_field(default=None, repr=False)


@numba.njit(cache=True)
def _bin_tiles(rect, n_tx, n_ty):
    m = rect.shape[0]
    counts = np.zeros(n_tx * n_ty + 1, dtype=np.int64)
    for i in range(m):
        for ty in range(rect[i, 2], rect[i, 3]):
            for tx in range(rect[i, 0], rect[i, 1]):
                counts[ty * n_tx + tx + 1] += 1
    ptr = np.cumsum(counts)
    fill = ptr[:-1].copy()
    ids = np.empty(ptr[-1], dtype=np.int64)
    for i in range(m):
        for ty in range(rect[i, 2], rect[i, 3]):
            for tx in range(rect[i, 0], rect[i, 1]):
                t = ty * n_tx + tx
                ids[fill[t]] = i
                fill[t] += 1
    return ptr, ids


@numba.njit(cache=True, fastmath=True)
def _forward(width, height, mean, conic, opac, colors, depths, feats, want_feat, tile_ptr, tile_ids, thr):
    n_tx = (width + TILE - 1) // TILE
    n_ty = (height + TILE - 1) // TILE
    nf = feats.shape[1]
    color = np.zeros((height, width, 3))
    depth = np.zeros((height, width))
    T_out = np.ones((height, width))
    n_out = np.zeros((height, width), dtype=np.int64)
    feat = np.zeros((height if want_feat else 1, width if want_feat else 1, nf))
    for ty in range(n_ty):
        for tx in range(n_tx):
            t = ty * n_tx + tx
            s, e = tile_ptr[t], tile_ptr[t + 1]
            if s == e:
                continue
            for y in range(ty * TILE, min((ty + 1) * TILE, height)):
                for x in range(tx * TILE, min((tx + 1) * TILE, width)):
                    T = 1.0
                    last = 0
                    r = 0.0
                    g = 0.0
                    bl = 0.0
                    d = 0.0
                    for k in range(s, e):
                        i = tile_ids[k]
                        dx = x - mean[i, 0]
                        dy = y - mean[i, 1]
                        power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
                        if power < thr[i]:
                            continue
                        a = opac[i] * np.exp(power)
                        if a > ALPHA_CLAMP:
                            a = ALPHA_CLAMP
                        w = a * T
                        r += w * colors[i, 0]
                        g += w * colors[i, 1]
                        bl += w * colors[i, 2]
                        d += w * depths[i]
                        if want_feat:
                            for f in range(nf):
                                feat[y, x, f] += w * feats[i, f]
                        T *= 1.0 - a
                        last = k - s + 1
                        if T < T_MIN:
                            break
                    color[y, x, 0] = r
                    color[y, x, 1] = g
                    color[y, x, 2] = bl
                    depth[y, x] = d
                    T_out[y, x] = T
                    n_out[y, x] = last
    return color, depth, T_out, n_out, feat


@numba.njit(cache=True, fastmath=True)
def _contrib_pass(width, height, mean, conic, opac, order, tile_ptr, tile_ids, n_out, thr, ptr, ids, ws, fill):
    n_tx = (width + TILE - 1) // TILE
    counts = np.zeros(width * height + 1, dtype=np.int64)
    for y in range(height):
        for x in range(width):
            t = (y // TILE) * n_tx + x // TILE
            s = tile_ptr[t]
            p = y * width + x
            T = 1.0
            c = 0
            for k in range(s, s + n_out[y, x]):
                i = tile_ids[k]
                dx = x - mean[i, 0]
                dy = y - mean[i, 1]
                power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
                if power < thr[i]:
                    continue
                a = opac[i] * np.exp(power)
                if a > ALPHA_CLAMP:
                    a = ALPHA_CLAMP
                if fill:
                    ids[ptr[p] + c] = order[i]
                    ws[ptr[p] + c] = a * T
                c += 1
                T *= 1.0 - a
            counts[p + 1] = c
    return counts


def _contributions(width, height, mean, conic, opac, order, tile_ptr, tile_ids, n_out, thr):
    dummy_i = np.zeros(0, dtype=np.int64)
    dummy_f = np.zeros(0)
    counts = _contrib_pass(width, height, mean, conic, opac, order, tile_ptr, tile_ids, n_out, thr,
                           dummy_i, dummy_i, dummy_f, False)
    ptr = np.cumsum(counts)
    ids = np.empty(ptr[-1], dtype=np.int64)
    ws = np.empty(ptr[-1])
    _contrib_pass(width, height, mean, conic, opac, order.astype(np.int64), tile_ptr, tile_ids, n_out, thr,
                  ptr, ids, ws, True)
    return ptr, ids, ws


@numba.njit(cache=True, fastmath=True)
def _backward(width, height, mean, conic, opac, colors, depths, tile_ptr, tile_ids, T_out, n_out, gC, gD, thr):
    m = mean.shape[0]
    g_mean = np.zeros((m, 2))
    g_conic = np.zeros((m, 3))
    g_opac = np.zeros(m)
    g_color = np.zeros((m, 3))
    g_depth = np.zeros(m)
    n_tx = (width + TILE - 1) // TILE
    for y in range(height):
        for x in range(width):
            n = n_out[y, x]
            if n == 0:
                continue
            t = (y // TILE) * n_tx + x // TILE
            s = tile_ptr[t]
            T = T_out[y, x]
            R0 = 0.0
            R1 = 0.0
            R2 = 0.0
            Rd = 0.0
            g0 = gC[y, x, 0]
            g1 = gC[y, x, 1]
            g2 = gC[y, x, 2]
            gd = gD[y, x]
            for k in range(s + n - 1, s - 1, -1):
                i = tile_ids[k]
                dx = x - mean[i, 0]
                dy = y - mean[i, 1]
                power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
                if power < thr[i]:
                    continue
                G = np.exp(power)
                a = opac[i] * G
                clamped = a > ALPHA_CLAMP
                if clamped:
                    a = ALPHA_CLAMP
                Ti = T / (1.0 - a)
                w = a * Ti
                g_color[i, 0] += w * g0
                g_color[i, 1] += w * g1
                g_color[i, 2] += w * g2
                g_depth[i] += w * gd
                v = g0 * colors[i, 0] + g1 * colors[i, 1] + g2 * colors[i, 2] + gd * depths[i]
                rv = g0 * R0 + g1 * R1 + g2 * R2 + gd * Rd
                galpha = Ti * (v - rv)
                R0 = a * colors[i, 0] + (1.0 - a) * R0
                R1 = a * colors[i, 1] + (1.0 - a) * R1
                R2 = a * colors[i, 2] + (1.0 - a) * R2
                Rd = a * depths[i] + (1.0 - a) * Rd
                T = Ti
                if not clamped:
                    g_opac[i] += galpha * G
                    gp = galpha * opac[i] * G
                    g_mean[i, 0] += gp * (conic[i, 0] * dx + conic[i, 1] * dy)
                    g_mean[i, 1] += gp * (conic[i, 1] * dx + conic[i, 2] * dy)
                    g_conic[i, 0] += gp * (-0.5 * dx * dx)
                    g_conic[i, 1] += gp * (-dx * dy)
                    g_conic[i, 2] += gp * (-0.5 * dy * dy)
    return g_mean, g_conic, g_opac, g_color, g_depth


@numba.njit(cache=True)
def _fisher(width, height, mean, conic, opac, colors, tile_ptr, tile_ids, T_out, n_out, B, dsig, thr):
    out = np.zeros((height, width))
    n_tx = (width + TILE - 1) // TILE
    u = np.zeros(5)
    for y in range(height):
        for x in range(width):
            n = n_out[y, x]
            if n == 0:
                continue
            t = (y // TILE) * n_tx + x // TILE
            s = tile_ptr[t]
            T = T_out[y, x]
            R0 = 0.0
            R1 = 0.0
            R2 = 0.0
            acc = 0.0
            for k in range(s + n - 1, s - 1, -1):
                i = tile_ids[k]
                dx = x - mean[i, 0]
                dy = y - mean[i, 1]
                power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
                if power < thr[i]:
                    continue
                G = np.exp(power)
                a = opac[i] * G
                clamped = a > ALPHA_CLAMP
                if clamped:
                    a = ALPHA_CLAMP
                Ti = T / (1.0 - a)
                w = a * Ti
                # color parameters: dC_c/dc_{i,c} = w for each of 3 channels
                acc += 3.0 * w * w
                if not clamped:
                    d0 = Ti * (colors[i, 0] - R0)
                    d1 = Ti * (colors[i, 1] - R1)
                    d2 = Ti * (colors[i, 2] - R2)
                    dd = d0 * d0 + d1 * d1 + d2 * d2
                    sg = opac[i] * G
                    u[0] = sg * (conic[i, 0] * dx + conic[i, 1] * dy)
                    u[1] = sg * (conic[i, 1] * dx + conic[i, 2] * dy)
                    u[2] = sg * (-0.5 * dx * dx)
                    u[3] = sg * (-dx * dy)
                    u[4] = sg * (-0.5 * dy * dy)
                    q = 0.0
                    for r in range(5):
                        for c in range(5):
                            q += u[r] * B[i, r, c] * u[c]
                    uo = G * dsig[i]
                    acc += dd * (q + uo * uo)
                R0 = a * colors[i, 0] + (1.0 - a) * R0
                R1 = a * colors[i, 1] + (1.0 - a) * R1
                R2 = a * colors[i, 2] + (1.0 - a) * R2
                T = Ti
            out[y, x] = acc
    return out


def _prepare(field: GaussianField, cam: Camera, settings: RenderSettings) -> _Raster:
    proj = project_field(field, cam, settings)
    vis = np.flatnonzero(proj.visible)
    # stable sort keeps insertion order among equal depths deterministic
    order = vis[np.argsort(proj.t_cam[vis, 2], kind="stable")]
    mean = np.ascontiguousarray(proj.mean2d[order])
    # bounding box of the ellipse where alpha reaches alpha_min; never wider than the radius
    reach = 2.0 * np.log(proj.opacity[order] / max(settings.alpha_min, 1e-12))
    rad = proj.radius[order]
    radx = np.minimum(np.ceil(np.sqrt(reach * (proj.cov2d[order, 0, 0] + settings.blur))), rad)
    rady = np.minimum(np.ceil(np.sqrt(reach * (proj.cov2d[order, 1, 1] + settings.blur))), rad)
    n_tx = (cam.width + TILE - 1) // TILE
    n_ty = (cam.height + TILE - 1) // TILE
    rect = np.empty((len(order), 4), dtype=np.int64)
    with np.errstate(invalid="ignore"):
        rect[:, 0] = np.clip(np.floor((mean[:, 0] - radx) / TILE), 0, n_tx)
        rect[:, 1] = np.clip(np.floor((mean[:, 0] + radx) / TILE) + 1, 0, n_tx)
        rect[:, 2] = np.clip(np.floor((mean[:, 1] - rady) / TILE), 0, n_ty)
        rect[:, 3] = np.clip(np.floor((mean[:, 1] + rady) / TILE) + 1, 0, n_ty)
    tile_ptr, tile_ids = _bin_tiles(rect, n_tx, n_ty)
    return _Raster(
        order=order,
        mean=mean,
        conic=np.ascontiguousarray(proj.conic[order]),
        opac=np.ascontiguousarray(proj.opacity[order]),
        colors=np.ascontiguousarray(field.colors[order]),
        depths=np.ascontiguousarray(proj.t_cam[order, 2]),
        tile_ptr=tile_ptr,
        tile_ids=tile_ids,
        thr=np.log(max(settings.alpha_min, 1e-300) / proj.opacity[order]),
        proj=proj,
    )


def rasterize(
    field: GaussianField,
    cam: Camera,
    channels=("color", "depth", "alpha"),
    settings: RenderSettings = DEFAULT_SETTINGS,
) -> RenderOutput:
    """Render the requested channels; unrequested channels are left as ``None``."""
    channels = set(channels)
    unknown = channels - CHANNELS
    if unknown:
        raise ValueError(f"unknown channels {sorted(unknown)}")
    ras = _prepare(field, cam, settings)
    want_feat = "feature" in channels
    feats = np.ascontiguousarray(field.features[ras.order]) if want_feat else np.zeros((len(ras.order), 1))
    color, depth, T, n, feat = _forward(
        cam.width, cam.height, ras.mean, ras.conic, ras.opac, ras.colors, ras.depths,
        feats, want_feat, ras.tile_ptr, ras.tile_ids, ras.thr,
    )
    out = RenderOutput(camera=cam, _raster=ras, _T=T, _n=n)
    if "color" in channels:
        out.color = color
    if "depth" in channels:
        out.depth = depth
    if "alpha" in channels:
        out.alpha = 1.0 - T
    if want_feat:
        out.feature = feat
    if "contributions" in channels:
        ptr, ids, ws = _contributions(
            cam.width, cam.height, ras.mean, ras.conic, ras.opac, ras.order,
            ras.tile_ptr, ras.tile_ids, n, ras.thr,
        )
        out.contributions = Contributions(ptr, ids, ws, len(field))
    return out


@dataclass
class FieldGradients:
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray

    def items(self):
        return self.__dict__.items()

    def flat(self) -> np.ndarray:
        return np.concatenate([v.reshape(len(v), -1) for v in self.__dict__.values()], axis=1)


def _chain(proj: Projection, cam: Camera, idx, g_mean, g_conic, g_depth):
    """Screen-space gradients of the Gaussians ``idx`` -> (position, log_scale, rotation)."""
    conic = proj.conic[idx]
    Q = np.empty((len(idx), 2, 2))
    Q[:, 0, 0] = conic[:, 0]
    Q[:, 0, 1] = Q[:, 1, 0] = conic[:, 1]
    Q[:, 1, 1] = conic[:, 2]
    gQ = np.empty_like(Q)
    gQ[:, 0, 0] = g_conic[:, 0]
    gQ[:, 0, 1] = gQ[:, 1, 0] = 0.5 * g_conic[:, 1]
    gQ[:, 1, 1] = g_conic[:, 2]
    g_cov2d = -Q @ gQ @ Q
    J, V = proj.J[idx], proj.V[idx]
    gV = np.swapaxes(J, 1, 2) @ g_cov2d @ J
    gJ = 2.0 * g_cov2d @ J @ V
    W = cam.R_cw
    g_sigma = W.T @ gV @ W
    t = proj.t_cam[idx]
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    rx, ry = proj.ratio[idx, 0], proj.ratio[idx, 1]
    mx, my = proj.unclamped[idx, 0], proj.unclamped[idx, 1]
    fx, fy = cam.fx, cam.fy
    gt = np.empty((len(idx), 3))
    gt[:, 0] = g_mean[:, 0] * fx / z - gJ[:, 0, 2] * mx * fx / z**2
    gt[:, 1] = g_mean[:, 1] * fy / z - gJ[:, 1, 2] * my * fy / z**2
    gt[:, 2] = (
        -gJ[:, 0, 0] * fx / z**2
        + gJ[:, 0, 2] * fx * (rx + mx * x / z) / z**2
        - gJ[:, 1, 1] * fy / z**2
        + gJ[:, 1, 2] * fy * (ry + my * y / z) / z**2
        - g_mean[:, 0] * fx * x / z**2
        - g_mean[:, 1] * fy * y / z**2
        + g_depth
    )
    g_pos = gt @ W
    R, s = proj.R[idx], proj.scales[idx]
    M = R * s[:, None, :]
    gM = 2.0 * g_sigma @ M
    g_s = np.sum(R * gM, axis=1)
    g_logscale = g_s * s
    gR = gM * s[:, None, :]
    return g_pos, g_logscale, gR


def render_backward(
    field: GaussianField,
    cam: Camera,
    grad_color: np.ndarray,
    grad_depth: np.ndarray | None = None,
    forward: RenderOutput | None = None,
    settings: RenderSettings = DEFAULT_SETTINGS,
) -> FieldGradients:
    """Vector-Jacobian product of the color/depth render for the given output cotangents."""
    if forward is None or forward._raster is None:
        forward = rasterize(field, cam, ("color",), settings)
    ras = forward._raster
    n = len(field)
    grads = FieldGradients(
        positions=np.zeros((n, 3)),
        log_scales=np.zeros((n, 3)),
        rotations=np.zeros((n, 4)),
        opacity_logits=np.zeros(n),
        colors=np.zeros((n, 3)),
    )
    if len(ras.order) == 0:
        return grads
    gC = np.ascontiguousarray(grad_color, dtype=np.float64)
    gD = np.zeros((cam.height, cam.width)) if grad_depth is None else np.ascontiguousarray(grad_depth, dtype=np.float64)
    g_mean, g_conic, g_opac, g_color, g_depth = _backward(
        cam.width, cam.height, ras.mean, ras.conic, ras.opac, ras.colors, ras.depths,
        ras.tile_ptr, ras.tile_ids, forward._T, forward._n, gC, gD, ras.thr,
    )
    idx = ras.order
    g_pos, g_ls, gR = _chain(ras.proj, cam, idx, g_mean, g_conic, g_depth)
    grads.positions[idx] = g_pos
    grads.log_scales[idx] = g_ls
    grads.rotations[idx] = rotmat_grad_to_quat(field.rotations[idx], gR)
    op = ras.opac
    grads.opacity_logits[idx] = g_opac * op * (1.0 - op)
    grads.colors[idx] = g_color
    return grads


def fisher_trace_map(
    field: GaussianField,
    cam: Camera,
    settings: RenderSettings = DEFAULT_SETTINGS,
) -> np.ndarray:
    """Per-pixel sum over RGB channels and all Gaussian parameters of squared render Jacobians.

    Summing the map gives the trace of J^T J for this view. Parameters are
    position, log-scale, raw quaternion, opacity logit and color.
    """
    out = rasterize(field, cam, ("color",), settings)
    ras = out._raster
    m = len(ras.order)
    if m == 0:
        return np.zeros((cam.height, cam.width))
    idx = ras.order
    # rows of A: d(mean_x, mean_y, conic_a, conic_b, conic_c) / d(pos, log_scale, quat)
    A = np.zeros((m, 5, 10))
    zero2, zero3, zero1 = np.zeros((m, 2)), np.zeros((m, 3)), np.zeros(m)
    for r in range(5):
        gm, gc = zero2.copy(), zero3.copy()
        if r < 2:
            gm[:, r] = 1.0
        else:
            gc[:, r - 2] = 1.0
        g_pos, g_ls, gR = _chain(ras.proj, cam, idx, gm, gc, zero1)
        A[:, r, 0:3] = g_pos
        A[:, r, 3:6] = g_ls
        A[:, r, 6:10] = rotmat_grad_to_quat(field.rotations[idx], gR)
    B = np.ascontiguousarray(A @ np.swapaxes(A, 1, 2))
    op = ras.opac
    dsig = np.ascontiguousarray(op * (1.0 - op))
    return _fisher(
        cam.width, cam.height, ras.mean, ras.conic, ras.opac, ras.colors,
        ras.tile_ptr, ras.tile_ids, out._T, out._n, B, dsig, ras.thr,
    )
