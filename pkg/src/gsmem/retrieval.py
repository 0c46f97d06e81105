"""Region-of-interest retrieval and optimal-viewpoint re-rendering from the Gaussian memory.

Two retrieval paths produce 3D boxes: the object path asks the oracle to rank
scene-graph nodes, and the semantic path clusters Gaussians whose language
feature matches the query. Each box is then re-observed from the best of an
orbit of candidate cameras, chosen by a cheap geometric pass followed by an
opacity pass over the rendered memory.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .camera import Camera, intrinsics_from_fov, look_at
from .field import GaussianField
from .frames import View
from .language import query_similarity
from .maps import TsdfGrid, rays_visible
from .raster import DEFAULT_SETTINGS, rasterize
from .scene_graph import SceneGraph


@dataclass
class RetrievalConfig:
    k_obj: int = 10
    k_cluster: int = 3
    tau_clip: float = 0.25
    tau_d: float = 0.15
    min_cluster_size: int = 20
    area_target: float = 0.4  # A*, fraction of image area
    sigma_a: float = 0.15
    orbit_radius_factor: float = 1.5
    orbit_min_radius: float = 0.8
    azimuth_step: float = 10.0
    elevations: tuple[float, ...] = (-10.0, 0.0, 15.0)
    top_phase2: int = 10
    bbox_pad: float = 0.05
    min_side: float = 0.05
    hfov_deg: float = 40.0
    phase1_size: int = 128
    phase2_size: int = 64
    render_size: int = 128

    def __post_init__(self):
        if self.k_obj < 1 or self.k_cluster < 1:
            raise ValueError("k_obj and k_cluster must be at least 1")
        for name in ("tau_d", "min_cluster_size", "area_target", "sigma_a", "orbit_radius_factor", "azimuth_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def n_azimuths(self) -> int:
        return int(round(360.0 / self.azimuth_step))


@dataclass
class RegionOfInterest:
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    provenance: str  # "object" or "semantic"
    source_id: int  # scene-graph node id or cluster rank
    score: float
    label: str = ""
    member_gaussians: np.ndarray | None = None
    best_pose: Camera | None = None

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64)
        if self.provenance not in ("object", "semantic"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not np.isfinite(self.score):
            raise ValueError("ROI score must be finite")

    @property
    def centroid(self) -> np.ndarray:
        return 0.5 * (self.bbox_min + self.bbox_max)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bbox_max - self.bbox_min))

    def corners(self) -> np.ndarray:
        lo, hi = self.bbox_min, self.bbox_max
        return np.array([[(lo, hi)[a][0], (lo, hi)[b][1], (lo, hi)[c][2]] for a in (0, 1) for b in (0, 1) for c in (0, 1)])

    def key_points(self) -> np.ndarray:
        """The 8 corners followed by the 6 face centers."""
        c = self.centroid
        faces = []
        for axis in range(3):
            for end in (self.bbox_min, self.bbox_max):
                p = c.copy()
                p[axis] = end[axis]
                faces.append(p)
        return np.vstack([self.corners(), np.array(faces)])


def _nondegenerate(lo, hi, pad: float, min_side: float):
    lo = np.asarray(lo, dtype=np.float64) - pad
    hi = np.asarray(hi, dtype=np.float64) + pad
    c = 0.5 * (lo + hi)
    half = np.maximum(0.5 * (hi - lo), 0.5 * min_side)
    return c - half, c + half


def retrieve_object_rois(graph: SceneGraph, question: str, oracle, cfg: RetrievalConfig | None = None) -> list[RegionOfInterest]:
    """Top ``k_obj`` scene-graph nodes in the oracle's ranking; an oracle failure yields []."""
    cfg = cfg or RetrievalConfig()
    objects = graph.list_objects()
    if not objects:
        return []
    try:
        ranking = list(oracle.rank_objects(question, objects))
    except Exception:
        return []
    known = {o[0] for o in objects}
    rois = []
    for rank, oid in enumerate(r for r in ranking if r in known):
        if rank >= cfg.k_obj:
            break
        node = graph.node(oid)
        lo, hi = _nondegenerate(node.bbox_min, node.bbox_max, 0.0, cfg.min_side)
        rois.append(RegionOfInterest(lo, hi, "object", node.id, 1.0 / (rank + 1), label=node.label, best_pose=node.best_pose))
    return rois


def cluster_points(points: np.ndarray, radius: float) -> np.ndarray:
    """Connected-component labels of the graph linking points at distance <= radius."""
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    return labels.astype(np.int64)


def retrieve_semantic_rois(field: GaussianField, query_embeddings, cfg: RetrievalConfig | None = None) -> list[RegionOfInterest]:
    """Cluster Gaussians whose similarity to any query exceeds ``tau_clip``; keep the best ``k_cluster``."""
    cfg = cfg or RetrievalConfig()
    queries = np.atleast_2d(np.asarray(query_embeddings, dtype=np.float64))
    if len(field) == 0 or queries.size == 0:
        return []
    sim = np.max(np.stack([query_similarity(field, q) for q in queries]), axis=0)
    cand = np.flatnonzero(sim > cfg.tau_clip)
    if len(cand) == 0:
        return []
    labels = cluster_points(field.positions[cand], cfg.tau_d)
    clusters = []
    for lab in np.unique(labels):
        members = cand[labels == lab]
        if len(members) < cfg.min_cluster_size:
            continue
        clusters.append((float(np.mean(sim[members])), int(members.min()), members))
    clusters.sort(key=lambda c: (-c[0], c[1]))
    rois = []
    for rank, (score, _, members) in enumerate(clusters[: cfg.k_cluster]):
        pts = field.positions[members]
        lo, hi = _nondegenerate(pts.min(axis=0), pts.max(axis=0), cfg.bbox_pad, cfg.min_side)
        rois.append(RegionOfInterest(lo, hi, "semantic", rank, score, member_gaussians=members))
    return rois


@dataclass
class CandidatePose:
    camera: Camera
    azimuth_index: int
    elevation_index: int


@dataclass
class ViewpointScore:
    pose: Camera
    s_vis: float
    s_area: float
    s_opa: float = 0.0
    azimuth_index: int = 0
    elevation_index: int = 0
    n_candidates: int = 0
    phase1_ranked: list = dc_field(default_factory=list, repr=False)

    @property
    def s_final(self) -> float:
        return self.s_vis + self.s_area + self.s_opa


def orbit_radius(roi: RegionOfInterest, cfg: RetrievalConfig) -> float:
    return max(cfg.orbit_radius_factor * roi.diagonal, cfg.orbit_min_radius)


def roi_intrinsics(cfg: RetrievalConfig, size: int | None = None) -> Camera:
    s = size or cfg.render_size
    return intrinsics_from_fov(s, s, cfg.hfov_deg)


def sample_candidate_poses(roi: RegionOfInterest, tsdf: TsdfGrid | None, cfg: RetrievalConfig | None = None,
                           intrinsics: Camera | None = None) -> list[CandidatePose]:
    """Orbit cameras looking at the ROI centroid, minus those inside observed obstacles."""
    cfg = cfg or RetrievalConfig()
    intr = intrinsics or roi_intrinsics(cfg, cfg.phase1_size)
    c = roi.centroid
    rho = orbit_radius(roi, cfg)
    out = []
    for ai in range(cfg.n_azimuths):
        az = np.radians(ai * cfg.azimuth_step)
        for ei, el_deg in enumerate(cfg.elevations):
            el = np.radians(el_deg)
            eye = c + rho * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
            if tsdf is not None and tsdf.is_blocked_at(eye):
                continue
            out.append(CandidatePose(look_at(intr, eye, c), ai, ei))
    return out


def area_score(area: float, cfg: RetrievalConfig) -> float:
    return float(np.exp(-((area - cfg.area_target) ** 2) / (2.0 * cfg.sigma_a**2)))


def _clip_polygon(poly: np.ndarray, xmin, xmax, ymin, ymax) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon to an axis-aligned rectangle."""
    planes = [(0, xmin, 1.0), (0, xmax, -1.0), (1, ymin, 1.0), (1, ymax, -1.0)]
    pts = list(poly)
    for axis, bound, sign in planes:
        if not pts:
            break
        out = []
        for k in range(len(pts)):
            p, q = pts[k], pts[(k + 1) % len(pts)]
            pin, qin = sign * (p[axis] - bound) >= 0, sign * (q[axis] - bound) >= 0
            if pin:
                out.append(p)
            if pin != qin:
                s = (bound - p[axis]) / (q[axis] - p[axis])
                out.append(p + s * (q - p))
        pts = out
    return np.array(pts).reshape(-1, 2)


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def projected_area_fraction(roi: RegionOfInterest, cam: Camera) -> float:
    """Area of the image-clipped convex hull of the projected box corners, as a fraction of the image."""
    uv, z = cam.project(roi.corners())
    if np.any(z <= 0):
        # a corner behind the camera: keep the visible ones only
        uv = uv[z > 0]
    if len(uv) < 3:
        return 0.0
    try:
        hull = uv[ConvexHull(uv).vertices]
    except QhullError:
        return 0.0
    clipped = _clip_polygon(hull, -0.5, cam.width - 0.5, -0.5, cam.height - 0.5)
    return _polygon_area(clipped) / (cam.width * cam.height)


def _box_entry(eye: np.ndarray, target: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """First point where the segment eye->target enters the box (target itself when it never does)."""
    d = target - eye
    t0, t1 = 0.0, 1.0
    for a in range(3):
        if abs(d[a]) < 1e-15:
            if eye[a] < lo[a] or eye[a] > hi[a]:
                return target
            continue
        ta, tb = (lo[a] - eye[a]) / d[a], (hi[a] - eye[a]) / d[a]
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
    if t0 > t1:
        return target
    return eye + t0 * d


def score_phase1(pose: Camera, roi: RegionOfInterest, tsdf: TsdfGrid | None, cfg: RetrievalConfig | None = None) -> tuple[float, float]:
    """(s_vis, s_area): fraction of the 14 box key points with a clear line of sight, and the area penalty.

    Sight lines stop where they enter the box, so the region never occludes itself.
    """
    cfg = cfg or RetrievalConfig()
    pts = roi.key_points()
    eye = pose.position
    if tsdf is None:
        s_vis = 1.0
    else:
        lo, hi = roi.bbox_min, roi.bbox_max
        ends = np.array([_box_entry(eye, p, lo, hi) for p in pts])
        s_vis = int(np.count_nonzero(rays_visible(tsdf, np.repeat(eye[None], len(ends), axis=0), ends))) / 14.0
    return s_vis, area_score(projected_area_fraction(roi, pose), cfg)


def roi_pixel_box(roi: RegionOfInterest, cam: Camera):
    """Integer pixel bounds (u0, u1, v0, v1), inclusive, of the projected box; None when empty."""
    uv, z = cam.project(roi.corners())
    uv = uv[z > 0]
    if len(uv) == 0:
        return None
    u0 = max(int(np.ceil(uv[:, 0].min())), 0)
    u1 = min(int(np.floor(uv[:, 0].max())), cam.width - 1)
    v0 = max(int(np.ceil(uv[:, 1].min())), 0)
    v1 = min(int(np.floor(uv[:, 1].max())), cam.height - 1)
    if u0 > u1 or v0 > v1:
        return None
    return u0, u1, v0, v1


def score_phase2(pose: Camera, roi: RegionOfInterest, field: GaussianField, cfg: RetrievalConfig | None = None,
                 settings=DEFAULT_SETTINGS) -> float:
    """Mean rendered alpha over the ROI's projected 2D box (0 when it is off-screen)."""
    cfg = cfg or RetrievalConfig()
    cam = pose.scaled(cfg.phase2_size, cfg.phase2_size) if pose.width != cfg.phase2_size else pose
    box = roi_pixel_box(roi, cam)
    if box is None or len(field) == 0:
        return 0.0
    u0, u1, v0, v1 = box
    alpha = rasterize(field, cam, ("alpha",), settings).alpha
    return float(alpha[v0 : v1 + 1, u0 : u1 + 1].mean())


def select_optimal_view(roi: RegionOfInterest, field: GaussianField, tsdf: TsdfGrid | None,
                        cfg: RetrievalConfig | None = None, candidates: list[CandidatePose] | None = None) -> ViewpointScore | None:
    """Sample-then-score: rank by s_vis + s_area, re-score the best ``top_phase2`` by opacity, pick max s_final.

    Ties fall to the lowest azimuth index, then the lowest elevation index. Returns
    None when every candidate is infeasible.
    """
    cfg = cfg or RetrievalConfig()
    if candidates is None:
        candidates = sample_candidate_poses(roi, tsdf, cfg)
    if not candidates:
        return None
    scored = []
    for c in candidates:
        s_vis, s_area = score_phase1(c.camera, roi, tsdf, cfg)
        scored.append(ViewpointScore(c.camera, s_vis, s_area, 0.0, c.azimuth_index, c.elevation_index))
    scored.sort(key=lambda s: (-(s.s_vis + s.s_area), s.azimuth_index, s.elevation_index))
    finalists = scored[: cfg.top_phase2]
    for s in finalists:
        s.s_opa = score_phase2(s.pose, roi, field, cfg)
    best = min(finalists, key=lambda s: (-s.s_final, s.azimuth_index, s.elevation_index))
    best.n_candidates = len(candidates)
    best.phase1_ranked = finalists
    return best


def render_roi_views(roi: RegionOfInterest, field: GaussianField, view: ViewpointScore | None,
                     cfg: RetrievalConfig | None = None, settings=DEFAULT_SETTINGS) -> list[View]:
    """Render the memory from the optimal viewpoint and, for object ROIs, from the node's best detection pose."""
    cfg = cfg or RetrievalConfig()
    cams = []
    if view is not None:
        cams.append(("optimal", view.pose.scaled(cfg.render_size, cfg.render_size)))
    if roi.provenance == "object" and roi.best_pose is not None:
        cams.append(("best_pose", roi.best_pose))
    views = []
    for source, cam in cams:
        out = rasterize(field, cam, ("color", "depth", "alpha"), settings)
        views.append(View(color=out.color, alpha=out.alpha, camera=cam, depth=out.depth, source=source))
    return views
