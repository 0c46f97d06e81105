import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import axis_camera, random_field
from gsmem.field import GaussianField
from gsmem.frames import Keyframe
from gsmem.language import aggregate_features, query_similarity, weighted_feature_sums
from gsmem.raster import Contributions, rasterize


class MapProvider:
    """Provider returning a fixed feature map per frame id."""

    def __init__(self, maps: dict, dim: int):
        self.maps = maps
        self.dim = dim

    def embed_image(self, frame):
        return self.maps[frame.id]

    def embed_text(self, text):
        return np.zeros(self.dim)


def blank_frame(cam, fid):
    return Keyframe(np.zeros((cam.height, cam.width, 3)), np.zeros((cam.height, cam.width)), cam, fid)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def test_constant_feature_is_exact_fixed_point():
    rng = np.random.default_rng(0)
    cam = axis_camera(20)
    field = random_field(rng, 15, cam, feature_dim=4)
    f = unit([1.0, 2.0, -1.0, 0.5])
    frames = [blank_frame(cam, 0), blank_frame(cam, 1)]
    prov = MapProvider({0: np.broadcast_to(f, (20, 20, 4)), 1: np.broadcast_to(f, (20, 20, 4))}, 4)
    aggregate_features(field, frames, prov)
    touched = field.feature_weights > 0
    assert touched.any()
    np.testing.assert_array_almost_equal(field.features[touched], np.broadcast_to(f, (touched.sum(), 4)), decimal=15)
    w1 = field.feature_weights.copy()
    feat1 = field.features.copy()
    aggregate_features(field, frames, prov)
    np.testing.assert_allclose(field.features, feat1, atol=1e-15)
    np.testing.assert_allclose(field.feature_weights, 2 * w1, rtol=1e-15)


def test_two_view_weighted_average_hand_value():
    cam = axis_camera(4)
    field = GaussianField.from_params([[0, 0, 2.0]], 0.1, [1, 1, 1], 0.5, feature_dim=3)
    u, v = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    # view A: weight 1.0 as 0.5 + 0.5 on two pixels; view B: weight 3.0 as 4 x 0.75
    ca = Contributions(np.array([0, 1, 2] + [2] * 14), np.array([0, 0]), np.array([0.5, 0.5]), 1)
    cb = Contributions(np.array([0, 1, 2, 3, 4] + [4] * 12), np.array([0, 0, 0, 0]), np.full(4, 0.75), 1)
    maps = {0: np.broadcast_to(u, (4, 4, 3)).copy(), 1: np.broadcast_to(v, (4, 4, 3)).copy()}
    aggregate_features(field, [blank_frame(cam, 0), blank_frame(cam, 1)], MapProvider(maps, 3),
                       normalize=False, contributions={0: ca, 1: cb})
    np.testing.assert_allclose(field.features[0], (u + 3 * v) / 4, atol=1e-12)
    assert field.feature_weights[0] == pytest.approx(4.0, abs=1e-12)


def test_weights_match_rasterizer_totals_bit_for_bit():
    rng = np.random.default_rng(4)
    cam = axis_camera(24)
    field = random_field(rng, 20, cam, feature_dim=4)
    frame = blank_frame(cam, 0)
    prov = MapProvider({0: np.tile(unit([1, 0, 0, 1]), (24, 24, 1))}, 4)
    aggregate_features(field, [frame], prov)
    totals = rasterize(field, cam, ("contributions",)).contributions.totals()
    np.testing.assert_array_equal(field.feature_weights, totals)


def test_untouched_gaussians_unchanged():
    cam = axis_camera(16)
    field = GaussianField.from_params([[0, 0, 2.0], [0, 0, -2.0]], 0.1, [1, 1, 1], 0.8, feature_dim=2)
    aggregate_features(field, [blank_frame(cam, 0)], MapProvider({0: np.tile([0.0, 1.0], (16, 16, 1))}, 2))
    assert field.feature_weights[1] == 0 and not field.features[1].any()
    assert field.feature_weights[0] > 0


def test_dimension_mismatch_is_an_error():
    cam = axis_camera(8)
    field = GaussianField.from_params([[0, 0, 2.0]], 0.1, [1, 1, 1], 0.8, feature_dim=4)
    with pytest.raises(ValueError):
        aggregate_features(field, [blank_frame(cam, 0)], MapProvider({0: np.zeros((8, 8, 3))}, 3))
    with pytest.raises(ValueError):
        aggregate_features(field, [blank_frame(cam, 0)], MapProvider({0: np.zeros((8, 8, 3))}, 4))


@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_convex_hull_and_monotone_weights(seed, n_frames):
    rng = np.random.default_rng(seed)
    cam = axis_camera(16)
    field = random_field(rng, 10, cam, feature_dim=5)
    # previous features: e0 with random prior weight; pixel features drawn from e1..e4
    field.features[:] = np.eye(5)[0]
    field.feature_weights[:] = rng.uniform(0.1, 3.0, 10)
    w0 = field.feature_weights.copy()
    maps = {k: np.eye(5)[rng.integers(1, 5, size=(16, 16))] for k in range(n_frames)}
    frames = [blank_frame(cam, k) for k in range(n_frames)]
    aggregate_features(field, frames, MapProvider(maps, 5), normalize=False)
    assert np.all(field.feature_weights >= w0)
    # convex combination of basis vectors: nonnegative coordinates summing to one
    assert np.all(field.features >= -1e-12)
    np.testing.assert_allclose(field.features.sum(axis=1), 1.0, atol=1e-12)


def test_weighted_feature_sums_matches_dense_loop():
    rng = np.random.default_rng(9)
    cam = axis_camera(12)
    field = random_field(rng, 8, cam, feature_dim=3)
    c = rasterize(field, cam, ("contributions",)).contributions
    feats = rng.normal(size=(12, 12, 3))
    s, w = weighted_feature_sums(c, feats)
    ref_s, ref_w = np.zeros((8, 3)), np.zeros(8)
    for p in range(144):
        ids, ws = c.pixel(p // 12, p % 12, 12)
        for i, wt in zip(ids, ws):
            ref_s[i] += wt * feats[p // 12, p % 12]
            ref_w[i] += wt
    np.testing.assert_allclose(s, ref_s, atol=1e-12)
    np.testing.assert_allclose(w, ref_w, atol=1e-12)


def test_query_similarity_cases():
    field = GaussianField.from_params(np.zeros((3, 3)), 0.1, [1, 1, 1], 0.5, feature_dim=2)
    field.features[0] = [1.0, 0.0]
    field.features[1] = [0.0, 1.0]
    field.feature_weights[:2] = 1.0
    sim = query_similarity(field, np.array([1.0, 0.0]))
    np.testing.assert_allclose(sim, [1.0, 0.0, -1.0])
    with pytest.raises(ValueError):
        query_similarity(field, np.zeros(3))
