"""Multistride sliding-window proposals scored on the enhanced edge map.

Each nested region contributes windows over a geometric grid of areas and
aspect ratios.  Deeper regions hold the farther (hence smaller) obstacles, so
their windows translate with proportionally smaller strides; turning
multistride off reverts every layer to the fixed-overlap stride.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .geometry import Box
from .integral import box_sum, box_sums, integral_image
from .regions import MLRegionSet

MIN_WINDOW_AREA = 100.0
ASPECT_MIN = 1.0 / 3.0
ASPECT_MAX = 3.0
ASPECT_STEP = 1.5
MIN_STRIDE = 2

OBJECTNESS_BORDER_WEIGHT = 2.0  # penalty on edge mass crossing the border strip
OBJECTNESS_SIZE_EXPONENT = 1.5  # perimeter exponent removing the large-box bias

PROPOSAL_CSV_HEADER = ["image_id", "x", "y", "w", "h", "layer", "objectness"]


class Category(IntEnum):
    ROAD = 0
    OBSTACLE = 1
    BACKGROUND = 2


@dataclass
class ProposalSet:
    """Column-wise store of candidate boxes for one image."""

    boxes: np.ndarray  # (N, 4) int64 (x, y, w, h)
    objectness: np.ndarray  # (N,) float64
    layer: np.ndarray  # (N,) int64, 1-based region index
    category: np.ndarray | None = None  # (N,) Category codes, training only

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def box(self, i: int) -> Box:
        x, y, w, h = (int(v) for v in self.boxes[i])
        return Box(x, y, w, h)

    def take(self, idx) -> "ProposalSet":
        return ProposalSet(
            boxes=self.boxes[idx],
            objectness=self.objectness[idx],
            layer=self.layer[idx],
            category=None if self.category is None else self.category[idx],
        )

    @staticmethod
    def empty() -> "ProposalSet":
        return ProposalSet(
            boxes=np.zeros((0, 4), dtype=np.int64),
            objectness=np.zeros(0),
            layer=np.zeros(0, dtype=np.int64),
        )


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stride(alpha: float, n_layers: int, layer: int, length: int, multistride: bool = True) -> int:
    """Translation step for a window of the given side length in region `layer`.

    The base step keeps neighboring windows at overlap `alpha`; with
    multistride on, layer k of K additionally shrinks it by (K - k + 1) / K.
    Never smaller than 2 pixels.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"stride overlap must be in (0, 1), got {alpha}")
    if not 1 <= layer <= n_layers:
        raise ConfigError(f"layer must be in 1..{n_layers}, got {layer}")
    factor = (n_layers - layer + 1) / n_layers if multistride else 1.0
    raw = (1.0 - alpha) / (1.0 + alpha) * factor * length
    return max(MIN_STRIDE, int(np.floor(raw)))


def _window_shapes(region: Box, alpha: float, min_area: float):
    """Deduplicated (w, h) pairs over geometric area and aspect grids."""
    region_area = float(region.area)
    shapes = []
    seen = set()
    area = float(min_area)
    area_step = 1.0 / (alpha * alpha)
    while area <= region_area + 1e-9:
        aspect = ASPECT_MIN
        while aspect <= ASPECT_MAX * (1.0 + 1e-9):
            w = max(1, _round_half_up(np.sqrt(area * aspect)))
            h = max(1, _round_half_up(np.sqrt(area / aspect)))
            if w <= region.w and h <= region.h and (w, h) not in seen:
                seen.add((w, h))
                shapes.append((w, h))
            aspect *= ASPECT_STEP
        area *= area_step
    return shapes


def enumerate_windows(
    region: Box,
    layer: int,
    n_layers: int,
    alpha: float,
    multistride: bool = True,
    min_area: float = MIN_WINDOW_AREA,
) -> np.ndarray:
    """All sliding-window placements inside `region` as an (N, 4) box array.

    Windows that would exceed the region are dropped, not shrunk; a region
    smaller than the minimum window yields an empty result.
    """
    out = []
    for w, h in _window_shapes(region, alpha, min_area):
        sx = stride(alpha, n_layers, layer, w, multistride)
        sy = stride(alpha, n_layers, layer, h, multistride)
        xs = np.arange(region.x, region.x1 - w + 1, sx, dtype=np.int64)
        ys = np.arange(region.y, region.y1 - h + 1, sy, dtype=np.int64)
        gx, gy = np.meshgrid(xs, ys)
        boxes = np.empty((gx.size, 4), dtype=np.int64)
        boxes[:, 0] = gx.ravel()
        boxes[:, 1] = gy.ravel()
        boxes[:, 2] = w
        boxes[:, 3] = h
        out.append(boxes)
    if not out:
        return np.zeros((0, 4), dtype=np.int64)
    return np.concatenate(out, axis=0)


def _border_widths(boxes: np.ndarray) -> np.ndarray:
    return np.maximum(1, np.floor(0.1 * np.minimum(boxes[:, 2], boxes[:, 3]) + 0.5).astype(np.int64))


def batch_objectness(
    boxes: np.ndarray,
    edge_table: np.ndarray,
    border_weight: float = OBJECTNESS_BORDER_WEIGHT,
    size_exponent: float = OBJECTNESS_SIZE_EXPONENT,
) -> np.ndarray:
    """Border-penalized edge mass for each box, from a precomputed integral image.

    score = max(0, inner_mass - border_weight * border_mass) / perimeter^size_exponent
    where the border strip is 10% of the short side (at least 1 px) wide.
    """
    if boxes.shape[0] == 0:
        return np.zeros(0)
    d = _border_widths(boxes)
    x0, y0 = boxes[:, 0], boxes[:, 1]
    x1, y1 = x0 + boxes[:, 2], y0 + boxes[:, 3]
    total = box_sum(edge_table, x0, y0, x1, y1)
    wi = boxes[:, 2] - 2 * d
    hi = boxes[:, 3] - 2 * d
    valid = (wi > 0) & (hi > 0)
    inner = np.where(
        valid,
        box_sum(edge_table, x0 + d, y0 + d, np.maximum(x1 - d, x0 + d), np.maximum(y1 - d, y0 + d)),
        0.0,
    )
    border = total - inner
    perimeter = 2.0 * (boxes[:, 2] + boxes[:, 3])
    return np.maximum(0.0, inner - border_weight * border) / perimeter**size_exponent


def score_objectness(box: Box, enhanced, **kwargs) -> float:
    """Objectness of a single box on an (enhanced) edge map."""
    values = enhanced.values if hasattr(enhanced, "values") else np.asarray(enhanced)
    h, w = values.shape
    if box.x < 0 or box.y < 0 or box.x1 > w or box.y1 > h:
        raise DataError(f"box {box} outside the {w}x{h} edge map")
    table = integral_image(values)
    return float(batch_objectness(box.as_array()[None, :], table, **kwargs)[0])


def _dedupe_keep_lowest_layer(boxes: np.ndarray, layer: np.ndarray) -> np.ndarray:
    order = np.lexsort((layer, boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0]))
    sorted_boxes = boxes[order]
    first = np.ones(order.shape[0], dtype=bool)
    first[1:] = np.any(sorted_boxes[1:] != sorted_boxes[:-1], axis=1)
    return order[first]


def rank_order(boxes: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Indices sorting by score descending, ties by (x, y, w, h) ascending."""
    return np.lexsort((boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], -scores))


def greedy_nms(boxes: np.ndarray, max_overlap: float) -> np.ndarray:
    """Keep-mask over already rank-ordered boxes, suppressing IoU > max_overlap."""
    n = boxes.shape[0]
    keep = np.ones(n, dtype=bool)
    x0 = boxes[:, 0].astype(np.float64)
    y0 = boxes[:, 1].astype(np.float64)
    x1 = x0 + boxes[:, 2]
    y1 = y0 + boxes[:, 3]
    areas = boxes[:, 2].astype(np.float64) * boxes[:, 3]
    for i in range(n):
        if not keep[i]:
            continue
        rest = np.flatnonzero(keep[i + 1 :]) + i + 1
        if rest.size == 0:
            break
        iw = np.clip(np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest]), 0, None)
        ih = np.clip(np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest]), 0, None)
        inter = iw * ih
        overlap = inter / (areas[i] + areas[rest] - inter)
        keep[rest[overlap > max_overlap]] = False
    return keep


def generate_proposals(
    enhanced,
    regions: MLRegionSet,
    alpha: float,
    multistride: bool = True,
    nms_overlap: float | None = None,
    min_window_area: float = MIN_WINDOW_AREA,
    border_weight: float = OBJECTNESS_BORDER_WEIGHT,
    size_exponent: float = OBJECTNESS_SIZE_EXPONENT,
) -> ProposalSet:
    """Scored union of sliding windows over every region, ranked by objectness.

    Identical boxes produced by overlapping regions are kept once with the
    lowest layer index.  Optional greedy NMS prunes the ranked list.
    """
    n_layers = regions.k
    per_layer_boxes = []
    per_layer_idx = []
    for k in range(1, n_layers + 1):
        windows = enumerate_windows(
            regions.regions[k - 1], k, n_layers, alpha, multistride, min_window_area
        )
        per_layer_boxes.append(windows)
        per_layer_idx.append(np.full(windows.shape[0], k, dtype=np.int64))
    boxes = np.concatenate(per_layer_boxes, axis=0)
    layer = np.concatenate(per_layer_idx, axis=0)
    if boxes.shape[0] == 0:
        return ProposalSet.empty()

    unique = _dedupe_keep_lowest_layer(boxes, layer)
    boxes, layer = boxes[unique], layer[unique]

    table = integral_image(enhanced.values if hasattr(enhanced, "values") else enhanced)
    scores = batch_objectness(boxes, table, border_weight, size_exponent)

    order = rank_order(boxes, scores)
    boxes, layer, scores = boxes[order], layer[order], scores[order]
    if nms_overlap is not None:
        keep = greedy_nms(boxes, nms_overlap)
        boxes, layer, scores = boxes[keep], layer[keep], scores[keep]
    return ProposalSet(boxes=boxes, objectness=scores, layer=layer)


def label_boxes(boxes: np.ndarray, road_mask: np.ndarray, obstacle_mask: np.ndarray) -> np.ndarray:
    """Majority-class label per box from pixel-ownership masks.

    Pixel classes partition as obstacle > road > background; the box label is
    the class owning the most pixels, with that same priority breaking ties
    (which also resolves the exact 50/50 case).
    """
    h, w = road_mask.shape
    if obstacle_mask.shape != road_mask.shape:
        raise DataError("road and obstacle masks disagree in shape")
    if boxes.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if (
        boxes[:, 0].min() < 0
        or boxes[:, 1].min() < 0
        or (boxes[:, 0] + boxes[:, 2]).max() > w
        or (boxes[:, 1] + boxes[:, 3]).max() > h
    ):
        raise DataError("box outside the mask bounds")
    obstacle = obstacle_mask.astype(bool)
    road = road_mask.astype(bool) & ~obstacle
    t_obstacle = integral_image(obstacle.astype(np.float64))
    t_road = integral_image(road.astype(np.float64))
    n_obstacle = box_sums(t_obstacle, boxes)
    n_road = box_sums(t_road, boxes)
    n_background = boxes[:, 2] * boxes[:, 3] - n_obstacle - n_road
    # Column order = tie-break priority; argmax picks the first maximum.
    counts = np.stack([n_obstacle, n_road, n_background], axis=1)
    priority = np.array([Category.OBSTACLE, Category.ROAD, Category.BACKGROUND], dtype=np.int64)
    return priority[np.argmax(counts, axis=1)]


def label_proposal(box: Box, road_mask: np.ndarray, obstacle_mask: np.ndarray) -> Category:
    return Category(int(label_boxes(box.as_array()[None, :], road_mask, obstacle_mask)[0]))


def write_proposals_csv(path, image_ids, proposal_sets) -> None:
    """Dump per-image proposal sets (already ranked) into one CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROPOSAL_CSV_HEADER)
        for image_id, pset in zip(image_ids, proposal_sets):
            for i in range(len(pset)):
                x, y, w, h = (int(v) for v in pset.boxes[i])
                writer.writerow(
                    [image_id, x, y, w, h, int(pset.layer[i]), f"{pset.objectness[i]:.9g}"]
                )


def read_proposals_csv(path):
    """Read a proposal CSV back as {image_id: ProposalSet} preserving row order."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"proposal file not found: {path}")
    grouped: dict = {}
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PROPOSAL_CSV_HEADER:
            raise DataError(f"proposal file {path}: unexpected header {header}")
        for row in reader:
            image_id, x, y, w, h, layer, objectness = row
            grouped.setdefault(image_id, []).append(
                (int(x), int(y), int(w), int(h), int(layer), float(objectness))
            )
    out = {}
    for image_id, rows in grouped.items():
        arr = np.array([r[:4] for r in rows], dtype=np.int64)
        out[image_id] = ProposalSet(
            boxes=arr,
            objectness=np.array([r[5] for r in rows]),
            layer=np.array([r[4] for r in rows], dtype=np.int64),
        )
    return out
