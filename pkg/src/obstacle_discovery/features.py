"""Per-proposal feature vectors: edge statistics, geometry, objectness, color.

Twenty values in a fixed layout:

    [0..6]   edge structure on the enhanced map: max response, mode response,
             mode pixel fraction, mean, inner-box mean, border-strip density,
             inner-box border-strip density
    [7..12]  geometry: area/(W*H), w/h, center x/W, center y/H, w/W, h/H
    [13]     objectness carried over from the proposal stage
    [14..19] HSV variance inside the box, then histogram contrast against the
             surround (one value per channel)

All heavy lifting happens on integral images shared per image; only the max
and mode statistics touch raw pixel slices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .geometry import Box, as_box_array
from .integral import box_sum, integral_image

FEATURE_DIM = 20
FEATURE_NAMES = [
    "max_response",
    "mode_response",
    "mode_fraction",
    "mean_response",
    "inner_mean",
    "edge_density",
    "inner_density",
    "norm_area",
    "aspect",
    "center_x",
    "center_y",
    "norm_w",
    "norm_h",
    "objectness",
    "var_h",
    "var_s",
    "var_v",
    "contrast_h",
    "contrast_s",
    "contrast_v",
]

HIST_BINS = 16
MODE_LEVELS = 256  # uint8-style quantization, reported as level/255
SURROUND_DILATION = 2  # surround box doubles each side about the center


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized hexcone RGB -> HSV with every channel in [0, 1].

    Matches colorsys.rgb_to_hsv pixel for pixel, including its channel
    priority when two channels tie for the maximum.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise DataError(f"expected trailing RGB axis of size 3, got shape {rgb.shape}")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    spread = maxc - minc
    safe_spread = np.where(spread == 0, 1.0, spread)
    rc = (maxc - r) / safe_spread
    gc = (maxc - g) / safe_spread
    bc = (maxc - b) / safe_spread
    h = np.select([r == maxc, g == maxc], [bc - gc, 2.0 + rc - bc], default=4.0 + gc - rc)
    h = np.where(spread == 0, 0.0, (h / 6.0) % 1.0)
    s = np.where(maxc == 0, 0.0, spread / np.where(maxc == 0, 1.0, maxc))
    return np.stack([h, s, maxc], axis=-1)


def _round_half_up(x):
    return np.floor(x + 0.5).astype(np.int64)


def _strip_widths(boxes: np.ndarray) -> np.ndarray:
    return np.maximum(1, _round_half_up(0.1 * np.minimum(boxes[:, 2], boxes[:, 3])))


def _inner_boxes(boxes: np.ndarray) -> np.ndarray:
    """Centered half-size boxes, never smaller than 1x1."""
    wi = np.maximum(1, boxes[:, 2] // 2)
    hi = np.maximum(1, boxes[:, 3] // 2)
    xi = boxes[:, 0] + (boxes[:, 2] - wi) // 2
    yi = boxes[:, 1] + (boxes[:, 3] - hi) // 2
    return np.stack([xi, yi, wi, hi], axis=1)


def _strip_density(boxes: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Edge mass in the border strip divided by the strip pixel count."""
    d = _strip_widths(boxes)
    x0, y0 = boxes[:, 0], boxes[:, 1]
    x1, y1 = x0 + boxes[:, 2], y0 + boxes[:, 3]
    total = box_sum(table, x0, y0, x1, y1)
    wi = boxes[:, 2] - 2 * d
    hi = boxes[:, 3] - 2 * d
    hollow = (wi > 0) & (hi > 0)
    inner = np.where(
        hollow,
        box_sum(table, x0 + d, y0 + d, np.maximum(x1 - d, x0 + d), np.maximum(y1 - d, y0 + d)),
        0.0,
    )
    inner_area = np.where(hollow, wi * hi, 0)
    strip_area = boxes[:, 2] * boxes[:, 3] - inner_area
    return (total - inner) / strip_area


@dataclass
class FeatureContext:
    """Integral images and quantized planes shared by every box of one image."""

    height: int
    width: int
    edge: np.ndarray | None = None
    edge_table: np.ndarray | None = None
    edge_levels: np.ndarray | None = None  # (H, W) uint8 of round(value * 255)
    hsv: np.ndarray | None = None
    sum_tables: list | None = None  # per channel
    square_tables: list | None = None
    hist_tables: list | None = None  # [channel][bin] indicator integrals
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def create(cls, edge=None, hsv=None, rgb=None) -> "FeatureContext":
        if edge is None and hsv is None and rgb is None:
            raise DataError("feature context needs an edge map or a color image")
        if hsv is None and rgb is not None:
            hsv = rgb_to_hsv(rgb)
        edge_values = None
        if edge is not None:
            edge_values = np.asarray(edge.values if hasattr(edge, "values") else edge, dtype=np.float64)
        shape = edge_values.shape if edge_values is not None else hsv.shape[:2]
        if edge_values is not None and hsv is not None and hsv.shape[:2] != shape:
            raise DataError(
                f"edge map {shape} and color image {hsv.shape[:2]} disagree in size"
            )
        ctx = cls(height=int(shape[0]), width=int(shape[1]))
        if edge_values is not None:
            ctx.edge = edge_values
            ctx.edge_table = integral_image(edge_values)
            ctx.edge_levels = _round_half_up(edge_values * (MODE_LEVELS - 1)).astype(np.uint8)
        if hsv is not None:
            ctx.hsv = np.asarray(hsv, dtype=np.float64)
            ctx.sum_tables = [integral_image(ctx.hsv[:, :, c]) for c in range(3)]
            ctx.square_tables = [integral_image(ctx.hsv[:, :, c] ** 2) for c in range(3)]
            bins = np.minimum(HIST_BINS - 1, (ctx.hsv * HIST_BINS).astype(np.int64))
            ctx.hist_tables = [
                [integral_image((bins[:, :, c] == b).astype(np.float64)) for b in range(HIST_BINS)]
                for c in range(3)
            ]
        return ctx

    def check_bounds(self, boxes: np.ndarray) -> None:
        if boxes.shape[0] == 0:
            return
        if (
            boxes[:, 0].min() < 0
            or boxes[:, 1].min() < 0
            or (boxes[:, 0] + boxes[:, 2]).max() > self.width
            or (boxes[:, 1] + boxes[:, 3]).max() > self.height
        ):
            raise DataError(f"box outside the {self.width}x{self.height} image")


def _edge_block(ctx: FeatureContext, boxes: np.ndarray) -> np.ndarray:
    if ctx.edge is None:
        raise DataError("feature context has no edge map")
    n = boxes.shape[0]
    out = np.zeros((n, 7))
    x0, y0 = boxes[:, 0], boxes[:, 1]
    x1, y1 = x0 + boxes[:, 2], y0 + boxes[:, 3]
    areas = (boxes[:, 2] * boxes[:, 3]).astype(np.float64)
    out[:, 3] = box_sum(ctx.edge_table, x0, y0, x1, y1) / areas
    inner = _inner_boxes(boxes)
    out[:, 4] = box_sum(
        ctx.edge_table,
        inner[:, 0],
        inner[:, 1],
        inner[:, 0] + inner[:, 2],
        inner[:, 1] + inner[:, 3],
    ) / (inner[:, 2] * inner[:, 3])
    out[:, 5] = _strip_density(boxes, ctx.edge_table)
    out[:, 6] = _strip_density(inner, ctx.edge_table)
    for i in range(n):
        patch = ctx.edge[y0[i] : y1[i], x0[i] : x1[i]]
        out[i, 0] = patch.max()
        counts = np.bincount(
            ctx.edge_levels[y0[i] : y1[i], x0[i] : x1[i]].ravel(), minlength=MODE_LEVELS
        )
        level = int(np.argmax(counts))  # ties resolve to the darkest level
        out[i, 1] = level / (MODE_LEVELS - 1)
        out[i, 2] = counts[level] / patch.size
    return out


def _geometry_block(boxes: np.ndarray, width: int, height: int) -> np.ndarray:
    out = np.zeros((boxes.shape[0], 6))
    w = boxes[:, 2].astype(np.float64)
    h = boxes[:, 3].astype(np.float64)
    out[:, 0] = w * h / (width * height)
    out[:, 1] = w / h
    out[:, 2] = (boxes[:, 0] + w / 2.0) / width
    out[:, 3] = (boxes[:, 1] + h / 2.0) / height
    out[:, 4] = w / width
    out[:, 5] = h / height
    return out


def _dilated_bounds(boxes: np.ndarray, width: int, height: int):
    """Boxes scaled by the surround factor about their centers, clipped."""
    grow_w = boxes[:, 2] * (SURROUND_DILATION - 1)
    grow_h = boxes[:, 3] * (SURROUND_DILATION - 1)
    x0 = np.clip(boxes[:, 0] - grow_w // 2, 0, width)
    y0 = np.clip(boxes[:, 1] - grow_h // 2, 0, height)
    x1 = np.clip(boxes[:, 0] + boxes[:, 2] + (grow_w - grow_w // 2), 0, width)
    y1 = np.clip(boxes[:, 1] + boxes[:, 3] + (grow_h - grow_h // 2), 0, height)
    return x0, y0, x1, y1


def _color_block(ctx: FeatureContext, boxes: np.ndarray) -> np.ndarray:
    if ctx.hsv is None:
        raise DataError("feature context has no color image")
    n = boxes.shape[0]
    out = np.zeros((n, 6))
    x0, y0 = boxes[:, 0], boxes[:, 1]
    x1, y1 = x0 + boxes[:, 2], y0 + boxes[:, 3]
    areas = (boxes[:, 2] * boxes[:, 3]).astype(np.float64)
    dx0, dy0, dx1, dy1 = _dilated_bounds(boxes, ctx.width, ctx.height)
    for c in range(3):
        mean = box_sum(ctx.sum_tables[c], x0, y0, x1, y1) / areas
        mean_sq = box_sum(ctx.square_tables[c], x0, y0, x1, y1) / areas
        out[:, c] = np.maximum(0.0, mean_sq - mean**2)

        box_hist = np.empty((n, HIST_BINS))
        around_hist = np.empty((n, HIST_BINS))
        for b in range(HIST_BINS):
            table = ctx.hist_tables[c][b]
            box_hist[:, b] = box_sum(table, x0, y0, x1, y1)
            around_hist[:, b] = box_sum(table, dx0, dy0, dx1, dy1)
        around_hist -= box_hist  # box lies inside its dilation
        around_total = around_hist.sum(axis=1)
        dot = np.einsum("ij,ij->i", box_hist, around_hist)
        norm = np.sqrt(
            np.einsum("ij,ij->i", box_hist, box_hist)
            * np.einsum("ij,ij->i", around_hist, around_hist)
        )
        cosine = np.where(norm > 0, dot / np.where(norm > 0, norm, 1.0), 1.0)
        out[:, 3 + c] = np.where(around_total > 0, 1.0 - cosine, 0.0)
    return out


def compute_features(ctx: FeatureContext, boxes, objectness) -> np.ndarray:
    """Feature matrix (N, 20) for ranked boxes sharing one image context."""
    boxes = as_box_array(boxes)
    objectness = np.asarray(objectness, dtype=np.float64)
    if objectness.shape[0] != boxes.shape[0]:
        raise DataError("objectness length does not match the box count")
    ctx.check_bounds(boxes)
    out = np.zeros((boxes.shape[0], FEATURE_DIM))
    out[:, 0:7] = _edge_block(ctx, boxes)
    out[:, 7:13] = _geometry_block(boxes, ctx.width, ctx.height)
    out[:, 13] = objectness
    out[:, 14:20] = _color_block(ctx, boxes)
    return out


def edge_structure_features(box: Box, edge) -> np.ndarray:
    """The seven edge-map statistics for one box (testing convenience)."""
    ctx = FeatureContext.create(edge=edge)
    boxes = as_box_array(box)
    ctx.check_bounds(boxes)
    return _edge_block(ctx, boxes)[0]


def geometry_features(box: Box, width: int, height: int) -> np.ndarray:
    boxes = as_box_array(box)
    if boxes[0, 0] < 0 or boxes[0, 1] < 0 or boxes[0, 0] + boxes[0, 2] > width or boxes[0, 1] + boxes[0, 3] > height:
        raise DataError(f"box outside the {width}x{height} image")
    return _geometry_block(boxes, width, height)[0]


def color_features(box: Box, hsv: np.ndarray) -> np.ndarray:
    ctx = FeatureContext.create(hsv=np.asarray(hsv, dtype=np.float64))
    boxes = as_box_array(box)
    ctx.check_bounds(boxes)
    return _color_block(ctx, boxes)[0]


def build_feature_vector(box: Box, objectness: float, edge, hsv) -> np.ndarray:
    ctx = FeatureContext.create(edge=edge, hsv=hsv)
    return compute_features(ctx, box, [float(objectness)])[0]


def write_features_csv(path, matrix: np.ndarray) -> None:
    """One row per proposal, the 20 named columns, 9 significant digits."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != FEATURE_DIM:
        raise DataError(f"feature matrix must be (N, {FEATURE_DIM}), got {matrix.shape}")
    np.savetxt(
        path,
        matrix,
        fmt="%.9g",
        delimiter=",",
        header=",".join(FEATURE_NAMES),
        comments="",
    )


def read_features_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    if data.size == 0:
        return np.zeros((0, FEATURE_DIM))
    if data.shape[1] != FEATURE_DIM:
        raise DataError(f"feature file {path}: expected {FEATURE_DIM} columns, got {data.shape[1]}")
    return data
