import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obstacle_discovery.errors import ConfigError, DataError
from obstacle_discovery.geometry import Box, iou_matrix
from obstacle_discovery.integral import integral_image
from obstacle_discovery.proposals import (
    Category,
    ProposalSet,
    batch_objectness,
    enumerate_windows,
    generate_proposals,
    greedy_nms,
    label_boxes,
    label_proposal,
    rank_order,
    read_proposals_csv,
    score_objectness,
    stride,
    write_proposals_csv,
)
from obstacle_discovery.regions import MLRegionSet


class TestStride:
    def test_hand_derived_layer_table(self):
        # alpha 0.65, four layers, length 100.
        assert [stride(0.65, 4, k, 100) for k in (1, 2, 3, 4)] == [21, 15, 10, 5]

    def test_multistride_off_is_layer_independent(self):
        values = {stride(0.65, 4, k, 100, multistride=False) for k in (1, 2, 3, 4)}
        assert values == {21}

    def test_floor_of_two(self):
        assert stride(0.65, 4, 4, 10) == 2
        assert stride(0.9, 2, 1, 8) == 2

    def test_rejects_bad_parameters(self):
        with pytest.raises(ConfigError):
            stride(0.0, 4, 1, 100)
        with pytest.raises(ConfigError):
            stride(1.0, 4, 1, 100)
        with pytest.raises(ConfigError):
            stride(0.65, 4, 0, 100)
        with pytest.raises(ConfigError):
            stride(0.65, 4, 5, 100)

    @given(
        st.floats(0.05, 0.95),
        st.integers(1, 6),
        st.integers(50, 400),
    )
    def test_deeper_layers_never_coarser(self, alpha, n_layers, length):
        steps = [stride(alpha, n_layers, k, length) for k in range(1, n_layers + 1)]
        assert all(a >= b for a, b in zip(steps, steps[1:]))
        assert all(s >= 2 for s in steps)


class TestWindows:
    def test_windows_stay_inside_region(self):
        region = Box(7, 11, 53, 41)
        boxes = enumerate_windows(region, layer=1, n_layers=2, alpha=0.65)
        assert boxes.shape[0] > 0
        assert boxes[:, 0].min() >= region.x
        assert boxes[:, 1].min() >= region.y
        assert (boxes[:, 0] + boxes[:, 2]).max() <= region.x1
        assert (boxes[:, 1] + boxes[:, 3]).max() <= region.y1

    def test_window_areas_and_aspects_near_grid(self):
        boxes = enumerate_windows(Box(0, 0, 80, 80), layer=1, n_layers=1, alpha=0.65)
        areas = boxes[:, 2] * boxes[:, 3]
        aspects = boxes[:, 2] / boxes[:, 3]
        assert areas.min() >= 90  # rounding can dip slightly under the 100 floor
        assert aspects.min() >= 1 / 6 and aspects.max() <= 6

    def test_small_region_yields_nothing(self):
        assert enumerate_windows(Box(0, 0, 6, 6), 1, 1, 0.65).shape[0] == 0

    def test_no_duplicate_windows_within_layer(self):
        boxes = enumerate_windows(Box(0, 0, 60, 50), layer=2, n_layers=3, alpha=0.65)
        assert np.unique(boxes, axis=0).shape[0] == boxes.shape[0]

    def test_multistride_densifies_deep_layers(self):
        region = Box(0, 0, 70, 60)
        fixed = enumerate_windows(region, layer=3, n_layers=3, alpha=0.65, multistride=False)
        multi = enumerate_windows(region, layer=3, n_layers=3, alpha=0.65, multistride=True)
        assert multi.shape[0] > fixed.shape[0]


def brute_objectness(box, edge, border_weight=2.0, size_exponent=1.5):
    x, y, w, h = box
    d = max(1, int(np.floor(0.1 * min(w, h) + 0.5)))
    total = edge[y : y + h, x : x + w].sum()
    if w - 2 * d > 0 and h - 2 * d > 0:
        inner = edge[y + d : y + h - d, x + d : x + w - d].sum()
    else:
        inner = 0.0
    border = total - inner
    return max(0.0, inner - border_weight * border) / (2.0 * (w + h)) ** size_exponent


class TestObjectness:
    def test_matches_direct_summation(self, rng):
        edge = rng.random((40, 50))
        table = integral_image(edge)
        boxes = np.column_stack(
            [
                rng.integers(0, 30, 200),
                rng.integers(0, 25, 200),
                rng.integers(1, 20, 200),
                rng.integers(1, 15, 200),
            ]
        )
        got = batch_objectness(boxes, table)
        want = np.array([brute_objectness(b, edge) for b in boxes])
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_edge_ring_on_border_scores_zero(self):
        edge = np.zeros((20, 20))
        edge[4, 4:16] = edge[15, 4:16] = edge[4:16, 4] = edge[4:16, 15] = 1.0
        assert score_objectness(Box(4, 4, 12, 12), edge) == 0.0

    def test_interior_mass_scores_positive(self):
        edge = np.zeros((20, 20))
        edge[8:12, 8:12] = 1.0
        assert score_objectness(Box(4, 4, 12, 12), edge) > 0.0

    def test_degenerate_thin_box_scores_zero(self):
        edge = np.ones((10, 10))
        assert score_objectness(Box(0, 0, 10, 2), edge) == 0.0

    def test_out_of_bounds_raises(self):
        with pytest.raises(DataError):
            score_objectness(Box(5, 5, 10, 10), np.zeros((8, 8)))


class TestRankingAndNms:
    def test_rank_order_desc_with_coordinate_ties(self):
        boxes = np.array([[5, 0, 2, 2], [1, 0, 2, 2], [1, 0, 2, 3], [9, 9, 1, 1]])
        scores = np.array([0.5, 0.5, 0.5, 0.9])
        order = rank_order(boxes, scores)
        assert order.tolist() == [3, 1, 2, 0]

    def test_nms_suppresses_duplicates_keeps_disjoint(self):
        boxes = np.array([[0, 0, 10, 10], [0, 0, 10, 10], [30, 30, 10, 10]])
        keep = greedy_nms(boxes, max_overlap=0.5)
        assert keep.tolist() == [True, False, True]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_nms_survivors_respect_threshold(self, seed):
        rng = np.random.default_rng(seed)
        n = 40
        boxes = np.column_stack(
            [
                rng.integers(0, 40, n),
                rng.integers(0, 40, n),
                rng.integers(1, 25, n),
                rng.integers(1, 25, n),
            ]
        )
        kept = boxes[greedy_nms(boxes, 0.4)]
        if kept.shape[0] > 1:
            m = iou_matrix(kept, kept)
            np.fill_diagonal(m, 0.0)
            assert m.max() <= 0.4 + 1e-12


class TestGenerateProposals:
    def test_ranked_and_deduplicated(self, rng):
        edge = rng.random((60, 80))
        rs = MLRegionSet((Box(5, 5, 70, 50), Box(20, 10, 40, 35)), 80, 60)
        pset = generate_proposals(edge, rs, alpha=0.65)
        assert len(pset) > 0
        assert np.all(np.diff(pset.objectness) <= 1e-12)
        assert np.unique(pset.boxes, axis=0).shape[0] == len(pset)
        assert set(np.unique(pset.layer)) <= {1, 2}

    def test_identical_regions_collapse_to_layer_one(self, rng):
        edge = rng.random((60, 80))
        r = Box(10, 10, 50, 40)
        rs = MLRegionSet((r, r), 80, 60)
        pset = generate_proposals(edge, rs, alpha=0.65, multistride=False)
        assert len(pset) > 0
        assert np.all(pset.layer == 1)

    def test_nms_reduces_count(self, rng):
        edge = rng.random((60, 80))
        rs = MLRegionSet((Box(0, 0, 80, 60),), 80, 60)
        full = generate_proposals(edge, rs, alpha=0.65)
        pruned = generate_proposals(edge, rs, alpha=0.65, nms_overlap=0.5)
        assert 0 < len(pruned) < len(full)

    def test_take_and_empty(self):
        empty = ProposalSet.empty()
        assert len(empty) == 0
        assert len(empty.take(np.zeros(0, dtype=np.int64))) == 0


class TestLabels:
    def build_masks(self):
        road = np.zeros((20, 20), dtype=np.uint8)
        road[10:, :] = 1
        obstacle = np.zeros((20, 20), dtype=np.int64)
        obstacle[12:16, 4:8] = 2
        return road, obstacle

    def test_majority_classes(self):
        road, obstacle = self.build_masks()
        assert label_proposal(Box(4, 12, 4, 4), road, obstacle) == Category.OBSTACLE
        assert label_proposal(Box(10, 12, 6, 6), road, obstacle) == Category.ROAD
        assert label_proposal(Box(0, 0, 6, 6), road, obstacle) == Category.BACKGROUND

    def test_obstacle_wins_exact_tie(self):
        road, obstacle = self.build_masks()
        # 4x4 obstacle pixels vs 4x4 road pixels inside an 8x4 box.
        assert label_proposal(Box(4, 12, 8, 4), road, obstacle) == Category.OBSTACLE

    def test_road_wins_tie_against_background(self):
        road, obstacle = self.build_masks()
        assert label_proposal(Box(0, 8, 4, 4), road, obstacle) == Category.ROAD

    def test_batch_matches_scalar(self, rng):
        road, obstacle = self.build_masks()
        boxes = np.column_stack(
            [
                rng.integers(0, 12, 30),
                rng.integers(0, 12, 30),
                rng.integers(1, 8, 30),
                rng.integers(1, 8, 30),
            ]
        )
        batched = label_boxes(boxes, road, obstacle)
        for i, b in enumerate(boxes):
            assert batched[i] == label_proposal(Box(*b), road, obstacle)

    def test_bounds_and_shape_errors(self):
        road, obstacle = self.build_masks()
        with pytest.raises(DataError):
            label_boxes(np.array([[18, 18, 5, 5]]), road, obstacle)
        with pytest.raises(DataError):
            label_boxes(np.array([[0, 0, 2, 2]]), road, obstacle[:10])


class TestCsv:
    def test_round_trip(self, tmp_path, rng):
        edge = rng.random((60, 80))
        rs = MLRegionSet((Box(0, 0, 80, 60), Box(10, 10, 40, 30)), 80, 60)
        sets = {
            "img_a": generate_proposals(edge, rs, alpha=0.65),
            "img_b": generate_proposals(edge[::-1], rs, alpha=0.65),
        }
        path = tmp_path / "proposals.csv"
        write_proposals_csv(path, sets.keys(), sets.values())
        loaded = read_proposals_csv(path)
        assert list(loaded.keys()) == ["img_a", "img_b"]
        for key, pset in sets.items():
            got = loaded[key]
            np.testing.assert_array_equal(got.boxes, pset.boxes)
            np.testing.assert_array_equal(got.layer, pset.layer)
            np.testing.assert_allclose(got.objectness, pset.objectness, rtol=1e-8)

    def test_read_errors(self, tmp_path):
        with pytest.raises(DataError):
            read_proposals_csv(tmp_path / "missing.csv")
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DataError):
            read_proposals_csv(bad)
