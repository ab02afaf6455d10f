"""Overlay rendering: heat blending and box outlines."""

import numpy as np
import pytest

from obstacle_discovery.errors import ContractError
from obstacle_discovery.geometry import Box
from obstacle_discovery.probmap import ProbabilityMap
from obstacle_discovery.render import HEAT_ALPHA, overlay_boxes, overlay_probability


def checker_image(h=12, w=16):
    img = np.zeros((h, w, 3))
    img[::2, ::2] = [0.2, 0.5, 0.8]
    img[1::2, 1::2] = [0.9, 0.4, 0.1]
    return img


def test_zero_probability_is_identity():
    img = checker_image()
    out = overlay_probability(img, np.zeros((12, 16)))
    np.testing.assert_array_equal(out, img)


def test_full_probability_blends_to_red():
    img = checker_image()
    pmap = np.zeros((12, 16))
    pmap[3, 4] = 1.0
    out = overlay_probability(img, pmap)
    # heat colour at p=1 is (1, 0.4, 0); the blend uses HEAT_ALPHA opacity
    expect = img[3, 4] * (1 - HEAT_ALPHA) + np.array([1.0, 0.4, 0.0]) * HEAT_ALPHA
    np.testing.assert_allclose(out[3, 4], expect, rtol=1e-12)
    # everything else untouched
    mask = np.ones((12, 16), dtype=bool)
    mask[3, 4] = False
    np.testing.assert_array_equal(out[mask], img[mask])


def test_accepts_probability_map_object():
    img = checker_image()
    values = np.full((12, 16), 0.5)
    wrapped = ProbabilityMap(values=values)
    np.testing.assert_array_equal(
        overlay_probability(img, wrapped), overlay_probability(img, values)
    )


def test_probability_shape_mismatch():
    with pytest.raises(ContractError, match="does not match"):
        overlay_probability(checker_image(), np.zeros((5, 5)))


def test_box_outline_and_interior():
    img = np.full((20, 20, 3), 0.5)
    out = overlay_boxes(img, [Box(4, 5, 8, 6)], color=(1.0, 0.0, 0.0))
    red = np.array([1.0, 0.0, 0.0])
    # all four edges painted
    np.testing.assert_array_equal(out[5, 4:12], np.tile(red, (8, 1)))
    np.testing.assert_array_equal(out[10, 4:12], np.tile(red, (8, 1)))
    np.testing.assert_array_equal(out[5:11, 4], np.tile(red, (6, 1)))
    np.testing.assert_array_equal(out[5:11, 11], np.tile(red, (6, 1)))
    # interior untouched
    np.testing.assert_array_equal(out[6:10, 5:11], img[6:10, 5:11])
    # input not mutated
    assert img[5, 4, 0] == 0.5


def test_empty_boxes_returns_copy():
    img = checker_image()
    out = overlay_boxes(img, [])
    np.testing.assert_array_equal(out, img)
    assert out is not img


def test_tiny_box_thickness_clamped():
    img = np.zeros((8, 8, 3))
    out = overlay_boxes(img, [Box(2, 2, 1, 1)], thickness=5)
    assert out[2, 2, 0] == 1.0  # painted without spilling
    assert out[:2].max() == 0.0 and out[3:].max() == 0.0


def test_box_outside_image_rejected():
    with pytest.raises(ContractError, match="outside"):
        overlay_boxes(checker_image(), [Box(10, 10, 10, 10)])
