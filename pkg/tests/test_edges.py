import numpy as np
import pytest

from obstacle_discovery.edges import (
    EDGE_MAP_SCALE,
    EdgeMap,
    detect_edges_baseline,
    enhance_edges,
    load_edge_map,
    save_edge_map,
)
from obstacle_discovery.errors import DataError
from obstacle_discovery.geometry import Box
from obstacle_discovery.regions import MLRegionSet


def nested_region_set(rng, width, height, k):
    x0, y0, x1, y1 = 0, 0, width, height
    regions = []
    for _ in range(k):
        nx0 = int(rng.integers(x0, x1))
        ny0 = int(rng.integers(y0, y1))
        nx1 = int(rng.integers(nx0 + 1, x1 + 1))
        ny1 = int(rng.integers(ny0 + 1, y1 + 1))
        regions.append(Box(nx0, ny0, nx1 - nx0, ny1 - ny0))
        x0, y0, x1, y1 = nx0, ny0, nx1, ny1
    return MLRegionSet(tuple(regions), width, height)


def brute_multiplicity(regions, width, height):
    count = np.zeros((height, width), dtype=np.int64)
    for py in range(height):
        for px in range(width):
            for r in regions.regions:
                if r.x <= px < r.x1 and r.y <= py < r.y1:
                    count[py, px] += 1
    return count


def test_enhancement_identity_small_brute_force(rng):
    for _ in range(10):
        w, h = int(rng.integers(6, 20)), int(rng.integers(6, 20))
        edge = EdgeMap(rng.random((h, w)))
        rs = nested_region_set(rng, w, h, int(rng.integers(1, 5)))
        enhanced = enhance_edges(edge, rs)
        mult = brute_multiplicity(rs, w, h)
        np.testing.assert_array_equal(enhanced.multiplicity, mult)
        np.testing.assert_array_equal(
            enhanced.values, np.clip(mult * edge.values, 0.0, 1.0)
        )


def test_enhancement_zero_outside_outer_region(rng):
    edge = EdgeMap(np.ones((10, 10)))
    rs = MLRegionSet((Box(2, 3, 5, 4),), 10, 10)
    enhanced = enhance_edges(edge, rs)
    assert enhanced.values[0, 0] == 0.0
    assert enhanced.multiplicity[0, 0] == 0
    assert np.all(enhanced.values[3:7, 2:7] == 1.0)


def test_enhancement_clamps_at_one():
    edge = EdgeMap(np.full((6, 6), 0.6))
    rs = MLRegionSet((Box(0, 0, 6, 6), Box(1, 1, 4, 4)), 6, 6)
    enhanced = enhance_edges(edge, rs)
    assert enhanced.values[0, 0] == pytest.approx(0.6)
    assert enhanced.values[2, 2] == 1.0  # 2 * 0.6 clamped
    assert enhanced.multiplicity[2, 2] == 2


def test_enhancement_rejects_oversized_region():
    edge = EdgeMap(np.zeros((5, 5)))
    with pytest.raises(DataError):
        enhance_edges(edge, MLRegionSet((Box(0, 0, 9, 9),), 9, 9))


def test_detector_range_and_flat_image():
    rng = np.random.default_rng(1)
    edge = detect_edges_baseline(rng.random((24, 32, 3)))
    assert edge.values.shape == (24, 32)
    assert edge.values.min() >= 0.0 and edge.values.max() <= 1.0
    flat = detect_edges_baseline(np.full((16, 16, 3), 0.5))
    assert np.all(flat.values == 0.0)


def test_detector_handles_uint8_and_grayscale():
    img = np.zeros((12, 12), dtype=np.uint8)
    img[:, 6:] = 255
    edge = detect_edges_baseline(img)
    assert edge.values[:, 5:7].max() > 0.5


def test_detector_rejects_empty():
    with pytest.raises(DataError):
        detect_edges_baseline(np.zeros((0, 4)))


def test_save_load_round_trip_quantized(tmp_path, rng):
    edge = EdgeMap(rng.random((9, 13)))
    path = tmp_path / "sub" / "edge.png"
    save_edge_map(path, edge)
    loaded = load_edge_map(path)
    assert loaded.values.shape == (9, 13)
    assert np.abs(loaded.values - edge.values).max() <= 0.5 / EDGE_MAP_SCALE + 1e-12


def test_load_rejects_wrong_depth(tmp_path):
    from PIL import Image

    p8 = tmp_path / "eight.png"
    Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(p8)
    with pytest.raises(DataError):
        load_edge_map(p8)
    prgb = tmp_path / "rgb.png"
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(prgb)
    with pytest.raises(DataError):
        load_edge_map(prgb)
    with pytest.raises(DataError):
        load_edge_map(tmp_path / "absent.png")
