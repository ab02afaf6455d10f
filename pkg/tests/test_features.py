import colorsys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obstacle_discovery.errors import DataError
from obstacle_discovery.features import (
    FEATURE_DIM,
    FEATURE_NAMES,
    HIST_BINS,
    FeatureContext,
    build_feature_vector,
    color_features,
    compute_features,
    edge_structure_features,
    geometry_features,
    read_features_csv,
    rgb_to_hsv,
    write_features_csv,
)
from obstacle_discovery.geometry import Box

unit = st.floats(0.0, 1.0, allow_nan=False)


class TestHsv:
    @settings(max_examples=200)
    @given(unit, unit, unit)
    def test_matches_colorsys(self, r, g, b):
        got = rgb_to_hsv(np.array([r, g, b]))
        want = colorsys.rgb_to_hsv(r, g, b)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_tie_cases_match_colorsys(self):
        for rgb in [(0, 0, 0), (1, 1, 1), (0.5, 0.5, 0.2), (0.2, 0.5, 0.5), (0.5, 0.2, 0.5)]:
            got = rgb_to_hsv(np.array(rgb))
            np.testing.assert_allclose(got, colorsys.rgb_to_hsv(*rgb), atol=1e-12)

    def test_batched_shape(self, rng):
        img = rng.random((7, 9, 3))
        out = rgb_to_hsv(img)
        assert out.shape == (7, 9, 3)
        np.testing.assert_allclose(
            out[3, 4], colorsys.rgb_to_hsv(*img[3, 4]), atol=1e-12
        )

    def test_rejects_bad_axis(self):
        with pytest.raises(DataError):
            rgb_to_hsv(np.zeros((4, 4)))


class TestEdgeBlock:
    def test_constant_half_map(self):
        edge = np.full((12, 12), 0.5)
        f = edge_structure_features(Box(2, 2, 8, 8), edge)
        assert f[0] == 0.5
        assert f[1] == pytest.approx(128 / 255)  # quantized bin of 0.5
        assert f[2] == 1.0
        assert f[3] == pytest.approx(0.5)
        assert f[4] == pytest.approx(0.5)
        assert f[5] == pytest.approx(0.5)
        assert f[6] == pytest.approx(0.5)

    def test_all_zero_map(self):
        f = edge_structure_features(Box(1, 1, 6, 6), np.zeros((10, 10)))
        # Every zero pixel sits in the zero bin, so the mode covers the box.
        assert f[2] == 1.0
        assert np.all(f[[0, 1, 3, 4, 5, 6]] == 0.0)

    def test_mode_tie_prefers_darker_level(self):
        edge = np.zeros((4, 4))
        edge[:2] = 0.2
        edge[2:] = 0.8
        f = edge_structure_features(Box(0, 0, 4, 4), edge)
        assert f[1] == pytest.approx(round(0.2 * 255) / 255)
        assert f[2] == pytest.approx(0.5)

    def test_center_pixel_lifts_inner_mean(self):
        edge = np.zeros((8, 8))
        edge[4, 4] = 1.0
        f = edge_structure_features(Box(2, 2, 5, 5), edge)
        assert f[4] >= f[3]
        assert f[0] == 1.0

    def test_matches_direct_computation(self, rng):
        edge = rng.random((30, 40))
        for _ in range(25):
            w = int(rng.integers(2, 15))
            h = int(rng.integers(2, 12))
            x = int(rng.integers(0, 40 - w))
            y = int(rng.integers(0, 30 - h))
            f = edge_structure_features(Box(x, y, w, h), edge)
            patch = edge[y : y + h, x : x + w]
            assert f[0] == patch.max()
            levels = np.floor(patch * 255 + 0.5).astype(int)
            counts = np.bincount(levels.ravel(), minlength=256)
            assert f[1] == pytest.approx(counts.argmax() / 255)
            assert f[2] == pytest.approx(counts.max() / patch.size)
            assert f[3] == pytest.approx(patch.mean())
            wi, hi = max(1, w // 2), max(1, h // 2)
            xi, yi = x + (w - wi) // 2, y + (h - hi) // 2
            assert f[4] == pytest.approx(edge[yi : yi + hi, xi : xi + wi].mean())
            d = max(1, int(np.floor(0.1 * min(w, h) + 0.5)))
            strip = patch.sum()
            strip_n = w * h
            if w > 2 * d and h > 2 * d:
                strip -= patch[d : h - d, d : w - d].sum()
                strip_n -= (w - 2 * d) * (h - 2 * d)
            assert f[5] == pytest.approx(strip / strip_n)


class TestGeometryBlock:
    def test_full_image_box(self):
        f = geometry_features(Box(0, 0, 100, 50), 100, 50)
        np.testing.assert_allclose(f, [1.0, 2.0, 0.5, 0.5, 1.0, 1.0])

    def test_hand_example(self):
        f = geometry_features(Box(0, 0, 20, 10), 100, 100)
        np.testing.assert_allclose(f, [0.02, 2.0, 0.1, 0.05, 0.2, 0.1])

    def test_uniform_rescale_invariance(self):
        a = geometry_features(Box(10, 20, 30, 40), 100, 200)
        b = geometry_features(Box(30, 60, 90, 120), 300, 600)
        np.testing.assert_allclose(a, b)

    def test_out_of_bounds(self):
        with pytest.raises(DataError):
            geometry_features(Box(90, 0, 20, 10), 100, 100)


class TestColorBlock:
    def test_constant_color_zero_variance(self):
        hsv = np.full((20, 20, 3), 0.4)
        f = color_features(Box(5, 5, 8, 8), hsv)
        np.testing.assert_allclose(f[:3], 0.0, atol=1e-12)
        np.testing.assert_allclose(f[3:], 0.0, atol=1e-12)

    def test_two_level_variance(self):
        hsv = np.zeros((10, 10, 3))
        hsv[:, 5:, 2] = 1.0
        f = color_features(Box(0, 0, 10, 10), hsv)
        assert f[2] == pytest.approx(0.25)

    def test_orthogonal_histograms_contrast_one(self):
        hsv = np.zeros((30, 30, 3))
        hsv[..., 2] = 0.99  # bin 15 everywhere
        hsv[12:18, 12:18, 2] = 0.01  # bin 0 inside the box
        f = color_features(Box(12, 12, 6, 6), hsv)
        assert f[5] == pytest.approx(1.0)
        assert f[3] == pytest.approx(0.0)  # H identical inside and out

    def test_box_filling_image_contrast_zero(self):
        rng = np.random.default_rng(0)
        hsv = rng.random((12, 12, 3))
        f = color_features(Box(0, 0, 12, 12), hsv)
        np.testing.assert_allclose(f[3:], 0.0)

    def test_matches_direct_computation(self, rng):
        hsv = rng.random((25, 35, 3))
        for _ in range(20):
            w = int(rng.integers(2, 12))
            h = int(rng.integers(2, 10))
            x = int(rng.integers(0, 35 - w))
            y = int(rng.integers(0, 25 - h))
            f = color_features(Box(x, y, w, h), hsv)
            for c in range(3):
                patch = hsv[y : y + h, x : x + w, c]
                assert f[c] == pytest.approx(patch.var(), rel=1e-9, abs=1e-12)
                dx0 = max(0, x - w // 2)
                dy0 = max(0, y - h // 2)
                dx1 = min(35, x + w + (w - w // 2))
                dy1 = min(25, y + h + (h - h // 2))
                bins = np.minimum(HIST_BINS - 1, (hsv[..., c] * HIST_BINS).astype(int))
                box_hist = np.bincount(bins[y : y + h, x : x + w].ravel(), minlength=HIST_BINS)
                around = np.bincount(bins[dy0:dy1, dx0:dx1].ravel(), minlength=HIST_BINS)
                around = around - box_hist
                norm = np.sqrt((box_hist**2).sum() * (around**2).sum())
                want = 1.0 - (box_hist * around).sum() / norm if norm > 0 else 0.0
                if around.sum() == 0:
                    want = 0.0
                assert f[3 + c] == pytest.approx(want, rel=1e-9, abs=1e-12)


class TestAssembledVector:
    def test_length_and_layout(self, rng):
        edge = rng.random((24, 32))
        hsv = rng.random((24, 32, 3))
        v = build_feature_vector(Box(4, 4, 12, 10), 0.77, edge, hsv)
        assert v.shape == (FEATURE_DIM,)
        assert len(FEATURE_NAMES) == FEATURE_DIM
        assert v[13] == 0.77
        np.testing.assert_allclose(v[:7], edge_structure_features(Box(4, 4, 12, 10), edge))
        np.testing.assert_allclose(v[7:13], geometry_features(Box(4, 4, 12, 10), 32, 24))
        np.testing.assert_allclose(v[14:], color_features(Box(4, 4, 12, 10), hsv))

    def test_zero_edge_constant_color_composition(self):
        v = build_feature_vector(
            Box(2, 2, 10, 10), 0.0, np.zeros((20, 20)), np.full((20, 20, 3), 0.3)
        )
        assert np.all(v[[0, 1, 3, 4, 5, 6]] == 0.0)
        np.testing.assert_allclose(v[14:17], 0.0, atol=1e-12)

    def test_batch_matches_single(self, rng):
        edge = rng.random((24, 32))
        hsv = rng.random((24, 32, 3))
        ctx = FeatureContext.create(edge=edge, hsv=hsv)
        boxes = np.array([[0, 0, 10, 10], [5, 3, 12, 9], [20, 10, 8, 14]])
        scores = np.array([0.1, 0.2, 0.3])
        batch = compute_features(ctx, boxes, scores)
        for i, b in enumerate(boxes):
            single = build_feature_vector(Box(*b), scores[i], edge, hsv)
            np.testing.assert_allclose(batch[i], single, rtol=1e-12)

    def test_deterministic(self, rng):
        edge = rng.random((20, 20))
        hsv = rng.random((20, 20, 3))
        a = build_feature_vector(Box(3, 3, 9, 9), 0.5, edge, hsv)
        b = build_feature_vector(Box(3, 3, 9, 9), 0.5, edge, hsv)
        np.testing.assert_array_equal(a, b)

    def test_golden_vector_layout_stability(self):
        # Fixed synthetic input; any layout or semantics drift breaks this.
        edge = np.linspace(0.0, 1.0, 16 * 16).reshape(16, 16)
        rgb = np.stack(
            [
                np.linspace(0.0, 1.0, 16 * 16).reshape(16, 16),
                np.linspace(1.0, 0.0, 16 * 16).reshape(16, 16),
                np.full((16, 16), 0.25),
            ],
            axis=-1,
        )
        v = build_feature_vector(Box(4, 4, 8, 6), 0.125, edge, rgb_to_hsv(rgb))
        golden = np.array(GOLDEN_VECTOR)
        np.testing.assert_allclose(v, golden, rtol=1e-9, atol=1e-12)

    def test_bounds_checked(self, rng):
        ctx = FeatureContext.create(edge=rng.random((10, 10)))
        with pytest.raises(DataError):
            compute_features(ctx, np.array([[5, 5, 10, 10]]), np.array([0.0]))

    def test_context_requires_some_input(self):
        with pytest.raises(DataError):
            FeatureContext.create()

    def test_context_rejects_mismatched_planes(self, rng):
        with pytest.raises(DataError):
            FeatureContext.create(edge=rng.random((10, 10)), rgb=rng.random((9, 10, 3)))


class TestCsv:
    def test_round_trip(self, tmp_path, rng):
        matrix = rng.random((13, FEATURE_DIM))
        path = tmp_path / "features.csv"
        write_features_csv(path, matrix)
        loaded = read_features_csv(path)
        assert loaded.shape == matrix.shape
        np.testing.assert_allclose(loaded, matrix, rtol=1e-8)

    def test_rejects_wrong_width(self, tmp_path, rng):
        with pytest.raises(DataError):
            write_features_csv(tmp_path / "bad.csv", rng.random((4, 7)))


GOLDEN_VECTOR = [
    0.6078431372549019,
    0.26666666666666666,
    0.020833333333333332,
    0.4372549019607843,
    0.4058823529411765,
    0.43725490196078454,
    0.40588235294117647,
    0.1875,
    1.3333333333333333,
    0.5,
    0.4375,
    0.5,
    0.375,
    0.125,
    0.007812830426509293,
    0.0020290188649288443,
    0.004564483745568337,
    0.4581075471131828,
    0.2505477697312589,
    0.37390096630005887,
]
