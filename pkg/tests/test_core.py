import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strokeless.core import (
    DEFAULT_STROKE_TAU,
    binarize_stroke_diff,
    composite,
    compute_weight_matrix,
    load_image_png,
    load_mask_png,
    load_polygons_json,
    parse_polygons,
    rasterize_polygons,
    save_image_png,
    save_mask_png,
    save_polygons_json,
    validate_image,
    validate_mask,
    validate_polygon,
)

from conftest import brute_force_point_in_polygon


class TestValidators:
    def test_image_accepts_valid(self):
        img = np.zeros((8, 8, 3), dtype=np.float32)
        validate_image(img)

    def test_image_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            validate_image(np.zeros((8, 8), dtype=np.float32))

    def test_image_rejects_out_of_range(self):
        img = np.zeros((8, 8, 3), dtype=np.float32)
        img[0, 0, 0] = 1.5
        with pytest.raises(ValueError):
            validate_image(img)

    def test_image_rejects_nonfinite(self):
        img = np.zeros((8, 8, 3), dtype=np.float32)
        img[1, 1, 1] = np.nan
        with pytest.raises(ValueError):
            validate_image(img)

    def test_image_stride_check(self):
        img = np.zeros((60, 60, 3), dtype=np.float32)
        with pytest.raises(ValueError):
            validate_image(img, stride=32)
        validate_image(np.zeros((64, 64, 3), dtype=np.float32), stride=32)

    def test_mask_binary_flag(self):
        validate_mask(np.ones((4, 4), dtype=np.float32), binary=True)
        with pytest.raises(ValueError):
            validate_mask(np.full((4, 4), 0.5, dtype=np.float32), binary=True)

    def test_polygon_bounds(self):
        validate_polygon([[0, 0], [10, 0], [10, 10]], 10, 10)
        with pytest.raises(ValueError):
            validate_polygon([[0, 0], [11, 0], [10, 10]], 10, 10)
        with pytest.raises(ValueError):
            validate_polygon([[0, 0], [1, 1]], 10, 10)


class TestWeightMatrix:
    def test_identity_where_both_zero(self):
        m = np.zeros((4, 4), dtype=np.float32)
        out = compute_weight_matrix(m, m)
        assert np.array_equal(out, np.ones((4, 4), dtype=np.float32))

    def test_full_overlap_value(self):
        m = np.ones((2, 2), dtype=np.float32)
        out = compute_weight_matrix(m, m, 5.0, 5.0)
        assert out == pytest.approx(11.0)

    def test_half_confidence_value(self):
        m = np.ones((1, 1), dtype=np.float32)
        ms = np.full((1, 1), 0.5, dtype=np.float32)
        assert compute_weight_matrix(m, ms, 5.0, 5.0)[0, 0] == pytest.approx(8.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            compute_weight_matrix(np.zeros((2, 2)), np.zeros((3, 3)))

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_monotone_in_both_masks(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.random((5, 5)).astype(np.float32)
        ms = rng.random((5, 5)).astype(np.float32)
        base = compute_weight_matrix(m, ms)
        bumped_m = m.copy()
        idx = tuple(rng.integers(0, 5, size=2))
        bumped_m[idx] = min(1.0, bumped_m[idx] + 0.25)
        assert (compute_weight_matrix(bumped_m, ms) >= base - 1e-6).all()
        bumped_ms = ms.copy()
        bumped_ms[idx] = min(1.0, bumped_ms[idx] + 0.25)
        assert (compute_weight_matrix(m, bumped_ms) >= base - 1e-6).all()


class TestRasterize:
    def test_empty_list(self):
        assert rasterize_polygons([], 8, 8).sum() == 0

    def test_full_rectangle(self):
        poly = np.array([[0, 0], [8, 0], [8, 8], [0, 8]], dtype=float)
        assert rasterize_polygons([poly], 8, 8).sum() == 64

    def test_right_triangle_half_area(self):
        poly = np.array([[0, 0], [64, 0], [0, 64]], dtype=float)
        count = rasterize_polygons([poly], 64, 64).sum()
        assert abs(count - 2048) <= 64

    def test_union_semantics(self):
        a = np.array([[0, 0], [4, 0], [4, 4], [0, 4]], dtype=float)
        b = np.array([[4, 4], [8, 4], [8, 8], [4, 8]], dtype=float)
        mask = rasterize_polygons([a, b], 8, 8)
        assert mask.sum() == 32
        assert mask[0, 0] == 1 and mask[7, 7] == 1 and mask[0, 7] == 0

    def test_degenerate_polygon_rejected(self):
        with pytest.raises(ValueError):
            rasterize_polygons([np.array([[0, 0], [1, 1]], dtype=float)], 8, 8)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_matches_brute_force_on_convex_polygons(self, seed):
        rng = np.random.default_rng(seed)
        # random convex polygon: points on an ellipse, sorted by angle
        n = rng.integers(3, 8)
        angles = np.sort(rng.uniform(0, 2 * np.pi, n))
        cx, cy = rng.uniform(6, 18, 2)
        rx, ry = rng.uniform(2, 6, 2)
        poly = np.stack([cx + rx * np.cos(angles), cy + ry * np.sin(angles)], axis=1)
        poly = np.clip(poly, 0, 24)
        mask = rasterize_polygons([poly], 24, 24)
        for y in range(24):
            for x in range(24):
                expected = brute_force_point_in_polygon(poly, x + 0.5, y + 0.5)
                assert mask[y, x] == (1.0 if expected else 0.0), (x, y)


class TestBinarize:
    def test_identical_images(self):
        img = np.random.default_rng(0).uniform(-1, 1, (8, 8, 3)).astype(np.float32)
        assert binarize_stroke_diff(img, img, 0.5).sum() == 0

    def test_single_pixel_single_channel(self):
        a = np.zeros((4, 4, 3), dtype=np.float32)
        b = a.copy()
        b[2, 1, 0] = 1.0  # 0.5 difference on the [0,1] scale
        mask = binarize_stroke_diff(a, b, DEFAULT_STROKE_TAU)
        assert mask[2, 1] == 1.0 and mask.sum() == 1

    def test_boundary_is_strict(self):
        a = np.zeros((2, 2, 3), dtype=np.float32)
        b = a.copy()
        b[0, 0, :] = 0.5  # difference exactly tau=0.25 on the [0,1] scale
        assert binarize_stroke_diff(a, b, 0.25).sum() == 0
        assert binarize_stroke_diff(a, b, 0.2499999).sum() == 1

    def test_tau_range_enforced(self):
        img = np.zeros((2, 2, 3), dtype=np.float32)
        for bad in (0.0, 1.0, -0.1):
            with pytest.raises(ValueError):
                binarize_stroke_diff(img, img, bad)

    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 0.99))
    @settings(max_examples=25, deadline=None)
    def test_identical_always_zero(self, seed, tau):
        img = np.random.default_rng(seed).uniform(-1, 1, (6, 6, 3)).astype(np.float32)
        assert binarize_stroke_diff(img, img, tau).sum() == 0


class TestComposite:
    def test_zero_mask_keeps_input(self):
        rng = np.random.default_rng(1)
        i = rng.uniform(-1, 1, (4, 4, 3)).astype(np.float32)
        out = rng.uniform(-1, 1, (4, 4, 3)).astype(np.float32)
        assert np.array_equal(composite(i, np.zeros((4, 4), np.float32), out), i)

    def test_ones_mask_takes_output(self):
        rng = np.random.default_rng(2)
        i = rng.uniform(-1, 1, (4, 4, 3)).astype(np.float32)
        out = rng.uniform(-1, 1, (4, 4, 3)).astype(np.float32)
        assert np.array_equal(composite(i, np.ones((4, 4), np.float32), out), out)

    def test_half_mask(self):
        rng = np.random.default_rng(3)
        i = rng.uniform(-1, 1, (4, 6, 3)).astype(np.float32)
        out = rng.uniform(-1, 1, (4, 6, 3)).astype(np.float32)
        m = np.zeros((4, 6), np.float32)
        m[:, :3] = 1.0
        got = composite(i, m, out)
        assert np.array_equal(got[:, :3], out[:, :3])
        assert np.array_equal(got[:, 3:], i[:, 3:])

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_idempotent_on_equal_inputs(self, seed):
        rng = np.random.default_rng(seed)
        i = rng.uniform(-1, 1, (5, 5, 3)).astype(np.float32)
        m = (rng.random((5, 5)) > 0.5).astype(np.float32)
        assert np.allclose(composite(i, m, i), i)


class TestPngIo:
    def test_image_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(4)
        # values on the representable 8-bit grid round-trip exactly
        img = (rng.integers(0, 256, (16, 16, 3)) / 127.5 - 1.0).astype(np.float32)
        path = tmp_path / "img.png"
        save_image_png(path, img)
        back = load_image_png(path)
        assert np.allclose(back, img, atol=1e-6)
        save_image_png(tmp_path / "img2.png", back)
        assert (tmp_path / "img.png").read_bytes() == (tmp_path / "img2.png").read_bytes()

    def test_mask_round_trip_binary(self, tmp_path):
        mask = (np.random.default_rng(5).random((16, 16)) > 0.5).astype(np.float32)
        path = tmp_path / "m.png"
        save_mask_png(path, mask)
        assert np.array_equal(load_mask_png(path), mask)

    def test_polygons_json_round_trip(self, tmp_path):
        polys = [[[0.0, 0.0], [4.5, 0.0], [4.5, 3.25]]]
        path = tmp_path / "p.json"
        save_polygons_json(path, polys)
        back = load_polygons_json(path)
        assert len(back) == 1
        assert np.allclose(back[0], polys[0])

    def test_parse_single_polygon_form(self):
        single = [[0, 0], [4, 0], [4, 4]]
        parsed = parse_polygons(single)
        assert len(parsed) == 1 and parsed[0].shape == (3, 2)

    def test_parse_polygon_list_form(self):
        parsed = parse_polygons([[[0, 0], [4, 0], [4, 4]], [[1, 1], [2, 1], [2, 2]]])
        assert len(parsed) == 2

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_polygons([])
        with pytest.raises(ValueError):
            parse_polygons("nope")
