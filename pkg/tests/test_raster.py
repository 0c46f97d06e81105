import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import axis_camera, random_field
from gsmem.camera import Camera, intrinsics_from_fov, look_at
from gsmem.field import GaussianField
from gsmem.raster import (
    EXACT_SETTINGS, fisher_trace_map, project_field, project_gaussian, rasterize, render_backward,
)

PARAMS = ("positions", "log_scales", "rotations", "opacity_logits", "colors")


# ---------------------------------------------------------------- reference compositor

def _ref_rotmat(q):
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def reference_pixel(field: GaussianField, cam: Camera, u: float, v: float, blur=0.3, alpha_min=1e-10):
    """Sequential per-pixel evaluation: project, sort by depth, composite front to back."""
    splats = []
    for i in range(len(field)):
        p = cam.R_cw @ field.positions[i] + cam.t_cw
        if p[2] <= 0.05:
            continue
        x, y, z = p
        mean = np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])
        J = np.array([[cam.fx / z, 0, -cam.fx * x / z**2], [0, cam.fy / z, -cam.fy * y / z**2]])
        R = _ref_rotmat(field.rotations[i])
        S = np.diag(np.exp(field.log_scales[i]))
        cov3 = R @ S @ S @ R.T
        cov2 = J @ cam.R_cw @ cov3 @ cam.R_cw.T @ J.T + blur * np.eye(2)
        sig = 1 / (1 + np.exp(-field.opacity_logits[i]))
        splats.append((z, i, mean, np.linalg.inv(cov2), sig))
    splats.sort(key=lambda s: s[0])
    T, C, D = 1.0, np.zeros(3), 0.0
    for z, i, mean, inv, sig in splats:
        d = np.array([u, v]) - mean
        a = min(0.99, sig * np.exp(-0.5 * d @ inv @ d))
        if a < alpha_min:
            continue
        C += T * a * field.colors[i]
        D += T * a * z
        T *= 1 - a
        if T < 1e-4:
            break
    return C, D, 1 - T


def _two_splats():
    # both means project onto pixel (16, 16), where alpha equals the opacity
    cam = Camera(fx=40, fy=40, cx=16, cy=16, width=32, height=32)
    f = GaussianField.from_params([[0, 0, 1.0], [0, 0, 2.0]], 0.02, [[1, 0, 0], [0, 0, 1]], [0.6, 0.6])
    return f, cam


def test_two_splat_hand_composite():
    f, cam = _two_splats()
    out = rasterize(f, cam, ("color", "alpha", "depth"))
    np.testing.assert_allclose(out.color[16, 16], [0.6, 0.0, 0.24], atol=1e-6)
    assert out.alpha[16, 16] == pytest.approx(0.84, abs=1e-6)


def test_single_splat_center_weight_and_depth():
    cam = Camera(fx=50, fy=50, cx=10, cy=10, width=20, height=20)
    f = GaussianField.from_params([[0, 0, 3.0]], 0.05, [0.2, 0.4, 0.6], 0.8)
    out = rasterize(f, cam, ("color", "depth", "alpha", "contributions"))
    ids, ws = out.contributions.pixel(10, 10, 20)
    assert list(ids) == [0]
    assert ws[0] == pytest.approx(0.8, abs=1e-12)
    assert out.depth[10, 10] == pytest.approx(0.8 * 3.0, abs=1e-12)


def test_empty_field_renders_zero():
    out = rasterize(GaussianField.empty(), axis_camera(24), ("color", "depth", "alpha", "feature", "contributions"))
    assert not out.color.any() and not out.depth.any() and not out.alpha.any()
    assert len(out.contributions.weights) == 0


def test_unrequested_channels_absent():
    f, cam = _two_splats()
    out = rasterize(f, cam, ("alpha",))
    assert out.color is None and out.depth is None and out.feature is None and out.contributions is None
    with pytest.raises(ValueError):
        rasterize(f, cam, ("normals",))


def test_matches_reference_compositor_on_random_pixels():
    rng = np.random.default_rng(7)
    worst = 0.0
    checked = 0
    for scene in range(10):
        cam = look_at(intrinsics_from_fov(48, 40, 70), rng.normal(size=3) * 0.3, [0.2, 0.1, 3.0])
        f = random_field(rng, 25, cam)
        out = rasterize(f, cam, ("color", "depth", "alpha"), EXACT_SETTINGS)
        for _ in range(100):
            u, v = int(rng.integers(cam.width)), int(rng.integers(cam.height))
            C, D, A = reference_pixel(f, cam, u, v)
            worst = max(worst, np.max(np.abs(out.color[v, u] - C)), abs(out.depth[v, u] - D), abs(out.alpha[v, u] - A))
            checked += 1
    assert checked == 1000
    assert worst < 1e-5


# ---------------------------------------------------------------- projection

def test_on_axis_projection():
    cam = Camera(fx=100, fy=100, cx=64, cy=64, width=128, height=128)
    p = project_gaussian(GaussianField.from_params([[0, 0, 2.0]], 0.1, [1, 1, 1], 0.5), 0, cam)
    np.testing.assert_allclose(p.mean2d, [64, 64])
    assert p.depth == 2.0


def test_isotropic_cov2d_similar_triangles():
    cam = Camera(fx=100, fy=100, cx=64, cy=64, width=128, height=128)
    s, z = 0.05, 2.0
    p = project_gaussian(GaussianField.from_params([[0, 0, z]], s, [1, 1, 1], 0.5), 0, cam)
    np.testing.assert_allclose(p.cov2d, (100 * s / z) ** 2 * np.eye(2), rtol=1e-12)


def test_culling_near_plane_and_offscreen():
    cam = Camera(fx=100, fy=100, cx=64, cy=64, width=128, height=128)
    f = GaussianField.from_params([[0, 0, 0.04], [0, 0, -1.0], [50.0, 0, 2.0]], 0.01, [1, 1, 1], 0.5)
    assert all(project_gaussian(f, i, cam) is None for i in range(3))


def test_projection_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        cam = look_at(intrinsics_from_fov(64, 64, 70), rng.normal(size=3), rng.normal(size=3) * 0.2 + [0, 0, 4])
        f = random_field(rng, 1, cam)
        p = project_gaussian(f, 0, cam)
        t = cam.world_to_camera(f.positions)[0]

        def pi(tc):
            return np.array([cam.fx * tc[0] / tc[2] + cam.cx, cam.fy * tc[1] / tc[2] + cam.cy])

        h = 1e-6
        fd = np.stack([(pi(t + h * e) - pi(t - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
        worst = max(worst, np.max(np.abs(p.jacobian - fd)) / np.max(np.abs(fd)))
    assert worst < 1e-4


@given(st.integers(0, 2**31 - 1))
def test_cov2d_symmetric_positive(seed):
    rng = np.random.default_rng(seed)
    cam = axis_camera(32)
    f = random_field(rng, 5, cam)
    proj = project_field(f, cam)
    np.testing.assert_allclose(proj.cov2d, np.swapaxes(proj.cov2d, 1, 2), atol=1e-12)
    assert np.all(np.linalg.eigvalsh(proj.cov2d) > 0)


# ---------------------------------------------------------------- compositing properties

@given(st.integers(0, 2**31 - 1), st.integers(1, 30))
def test_weights_bounded_and_sum_to_alpha(seed, n):
    rng = np.random.default_rng(seed)
    cam = axis_camera(24)
    f = random_field(rng, n, cam, opacity=(0.05, 0.999))
    out = rasterize(f, cam, ("alpha", "contributions"))
    c = out.contributions
    per_pixel = np.bincount(c.pixel_index(), weights=c.weights, minlength=24 * 24).reshape(24, 24)
    assert np.all(per_pixel <= 1 + 1e-12)
    np.testing.assert_allclose(per_pixel, out.alpha, atol=1e-5)
    assert np.all((out.alpha >= 0) & (out.alpha <= 1))


@given(st.integers(0, 2**31 - 1))
def test_insertion_order_irrelevant(seed):
    rng = np.random.default_rng(seed)
    cam = axis_camera(24)
    f = random_field(rng, 12, cam)
    perm = rng.permutation(12)
    a = rasterize(f, cam, ("color", "depth", "alpha"))
    b = rasterize(f.subset(perm), cam, ("color", "depth", "alpha"))
    np.testing.assert_allclose(a.color, b.color, atol=1e-12)
    np.testing.assert_allclose(a.depth, b.depth, atol=1e-12)
    np.testing.assert_allclose(a.alpha, b.alpha, atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_color_linearity(seed, lam):
    rng = np.random.default_rng(seed)
    cam = axis_camera(20)
    f = random_field(rng, 10, cam)
    g = f.copy()
    g.colors *= lam
    a, b = rasterize(f, cam), rasterize(g, cam)
    np.testing.assert_allclose(b.color, lam * a.color, atol=1e-12)
    np.testing.assert_array_equal(a.depth, b.depth)


def test_opaque_occluder_suppresses_later_splats():
    cam = axis_camera(16, 20.0)
    back = GaussianField.from_params([[0, 0, 3.0]], 0.3, [0, 0, 1], 0.9)
    both = GaussianField.from_params([[0, 0, 1.0], [0, 0, 3.0]], [[20.0] * 3, [0.3] * 3], [[1, 0, 0], [0, 0, 1]],
                                     [0.999999, 0.9])
    w_alone = rasterize(back, cam, ("contributions",)).contributions
    w_both = rasterize(both, cam, ("contributions",), EXACT_SETTINGS).contributions
    for v in range(4, 12):
        for u in range(4, 12):
            _, wa = w_alone.pixel(v, u, 16)
            ids, wb = w_both.pixel(v, u, 16)
            later = wb[ids == 1].sum()
            assert later <= 0.01 * wa.sum() + 1e-12


def test_feature_channel_is_weighted_sum():
    rng = np.random.default_rng(0)
    cam = axis_camera(16)
    f = random_field(rng, 6, cam, feature_dim=4)
    f.features[:] = rng.normal(size=(6, 4))
    out = rasterize(f, cam, ("feature", "contributions"))
    c = out.contributions
    for v, u in [(3, 4), (8, 8), (12, 2)]:
        ids, ws = c.pixel(v, u, 16)
        np.testing.assert_allclose(out.feature[v, u], ws @ f.features[ids], atol=1e-12)


# ---------------------------------------------------------------- gradients

def fd_gradients(f, loss, h=1e-4, entries=None):
    """Central differences of ``loss`` for the given (group, i, j) entries."""
    out = []
    for name, i, j in entries:
        a, b = f.copy(), f.copy()
        pa, pb = getattr(a, name), getattr(b, name)
        if pa.ndim == 1:
            pa[i] += h
            pb[i] -= h
        else:
            pa[i, j] += h
            pb[i, j] -= h
        out.append((loss(a) - loss(b)) / (2 * h))
    return np.array(out)


def _all_entries(f, idx=None):
    idx = range(len(f)) if idx is None else idx
    ent = []
    for name in PARAMS:
        p = getattr(f, name)
        for i in idx:
            for j in range(p.shape[1] if p.ndim > 1 else 1):
                ent.append((name, i, j))
    return ent


def _analytic(g, entries):
    return np.array([getattr(g, n)[i, j] if getattr(g, n).ndim > 1 else getattr(g, n)[i] for n, i, j in entries])


def gradient_check(rng, n=10, size=16, n_params=None):
    cam = look_at(intrinsics_from_fov(size, size, 60), rng.normal(size=3) * 0.2, [0, 0, 3.0])
    f = random_field(rng, n, cam, depth=(2.0, 4.0), scale=(0.1, 0.35), opacity=(0.1, 0.8), margin=0.2)
    gc = rng.normal(size=(size, size, 3))
    gd = rng.normal(size=(size, size))

    def loss(ff):
        o = rasterize(ff, cam, ("color", "depth"), EXACT_SETTINGS)
        return np.sum(o.color * gc) + np.sum(o.depth * gd)

    g = render_backward(f, cam, gc, gd, settings=EXACT_SETTINGS)
    entries = _all_entries(f)
    if n_params is not None:
        pick = rng.choice(len(entries), size=min(n_params, len(entries)), replace=False)
        entries = [entries[k] for k in sorted(pick)]
    an = _analytic(g, entries)
    fd = fd_gradients(f, loss, 1e-4, entries)
    rel = np.abs(an - fd) / np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-6)
    return rel, len(entries)


def test_gradients_match_finite_differences_all_parameters():
    rel, n = gradient_check(np.random.default_rng(11), n=10, size=16)
    assert n == 10 * 14
    assert rel.max() < 1e-3


def test_zero_cotangent_gives_zero_gradients():
    rng = np.random.default_rng(2)
    cam = axis_camera(16)
    f = random_field(rng, 8, cam)
    g = render_backward(f, cam, np.zeros((16, 16, 3)), np.zeros((16, 16)))
    assert all(not v.any() for _, v in g.items())


def test_color_gradient_of_l1_is_signed_weight_sum():
    cam = axis_camera(16)
    f = GaussianField.from_params([[0, 0, 2.0]], 0.2, [0.9, 0.1, 0.5], 0.7)
    target = np.full((16, 16, 3), 0.3)
    out = rasterize(f, cam, ("color", "contributions"))
    cot = np.sign(out.color - target)
    g = render_backward(f, cam, cot, forward=out)
    w = np.zeros((16, 16))
    c = out.contributions
    w.ravel()[c.pixel_index()] = c.weights
    np.testing.assert_allclose(g.colors[0], np.einsum("hw,hwc->c", w, cot), atol=1e-12)


# ---------------------------------------------------------------- Fisher trace

def fd_fisher_trace(f, cam, h=1e-5):
    tot = 0.0
    for name, i, j in _all_entries(f):
        a, b = f.copy(), f.copy()
        pa, pb = getattr(a, name), getattr(b, name)
        if pa.ndim == 1:
            pa[i] += h
            pb[i] -= h
        else:
            pa[i, j] += h
            pb[i, j] -= h
        J = (rasterize(a, cam, ("color",), EXACT_SETTINGS).color - rasterize(b, cam, ("color",), EXACT_SETTINGS).color) / (2 * h)
        tot += np.sum(J**2)
    return tot


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_fisher_trace_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    cam = look_at(intrinsics_from_fov(8, 8, 60), [0, 0, 0], [0, 0, 1])
    f = random_field(rng, 5 + seed, cam, depth=(2.5, 3.5), scale=(0.2, 0.4), opacity=(0.1, 0.7), margin=0.2)
    m = fisher_trace_map(f, cam, EXACT_SETTINGS)
    ref = fd_fisher_trace(f, cam)
    assert m.sum() == pytest.approx(ref, rel=1e-2)


def test_fisher_empty_view_is_zero():
    cam = axis_camera(16)
    f = GaussianField.from_params([[0, 0, -2.0]], 0.2, [1, 1, 1], 0.5)
    assert fisher_trace_map(f, cam).sum() == 0.0
    assert fisher_trace_map(GaussianField.empty(), cam).sum() == 0.0


@given(st.integers(0, 2**31 - 1))
def test_fisher_nonnegative_and_additive_over_partitions(seed):
    rng = np.random.default_rng(seed)
    cam = axis_camera(16)
    f = random_field(rng, 6, cam)
    m = fisher_trace_map(f, cam)
    assert np.all(m >= 0)
    labels = rng.integers(0, 4, size=m.shape)
    parts = sum(m[labels == k].sum() for k in range(4))
    assert parts == pytest.approx(m.sum(), abs=1e-6)
