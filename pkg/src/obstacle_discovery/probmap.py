"""Obstacle-occupied probability maps from fused proposal scores.

The top half of the ranked proposals paint their scores into every covered
pixel; the accumulated field is divided by its maximum, so a nonzero map always
peaks at exactly 1.  Scores are quantized to integer ticks first, which makes
the rectangle-increment accumulation bit-identical to naive per-pixel loops.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from .geometry import as_box_array

TOP_FRACTION = 0.5
SCORE_TICKS = 2**32  # one score unit in integer ticks; exact up to 2^-33 resolution
MAP_SCALE = 65535


@dataclass(frozen=True)
class ProbabilityMap:
    values: np.ndarray  # (H, W) float64 in [0, 1]

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DataError(f"probability map must be 2-D, got shape {self.values.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def top_contributors(scores, fraction: float = TOP_FRACTION) -> np.ndarray:
    """Indices of the leading ceil(fraction * N) rows that carry a positive score.

    Assumes score-descending order, so whenever any score is positive the
    result is non-empty.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"contributor fraction must be in (0, 1], got {fraction}")
    n_top = int(np.ceil(fraction * scores.size))
    head = np.arange(n_top)
    return head[scores[:n_top] > 0.0]


def accumulate_ticks(boxes, ticks, width: int, height: int) -> np.ndarray:
    """Integer accumulation of box weights per pixel via corner increments."""
    boxes = as_box_array(boxes)
    ticks = np.asarray(ticks, dtype=np.int64)
    if boxes.shape[0] != ticks.shape[0]:
        raise DataError("boxes and weights disagree in length")
    if boxes.shape[0] and (
        boxes[:, 0].min() < 0
        or boxes[:, 1].min() < 0
        or (boxes[:, 0] + boxes[:, 2]).max() > width
        or (boxes[:, 1] + boxes[:, 3]).max() > height
    ):
        raise DataError(f"box outside the {width}x{height} image")
    diff = np.zeros((height + 1, width + 1), dtype=np.int64)
    x0, y0 = boxes[:, 0], boxes[:, 1]
    x1, y1 = x0 + boxes[:, 2], y0 + boxes[:, 3]
    np.add.at(diff, (y0, x0), ticks)
    np.add.at(diff, (y0, x1), -ticks)
    np.add.at(diff, (y1, x0), -ticks)
    np.add.at(diff, (y1, x1), ticks)
    return np.cumsum(np.cumsum(diff, axis=0), axis=1)[:height, :width]


def build_probability_map(
    boxes,
    scores,
    width: int,
    height: int,
    fraction: float = TOP_FRACTION,
) -> ProbabilityMap:
    """Max-normalized accumulation of the top-fraction proposal scores.

    `boxes`/`scores` must already be in final-score-descending order. Images
    where nothing passed the fusion gate produce an all-zero map.
    """
    boxes = as_box_array(boxes)
    scores = np.asarray(scores, dtype=np.float64)
    keep = top_contributors(scores, fraction)
    ticks = np.round(scores[keep] * SCORE_TICKS).astype(np.int64)
    raw = accumulate_ticks(boxes[keep], ticks, width, height)
    peak = int(raw.max()) if raw.size else 0
    if peak <= 0:
        return ProbabilityMap(values=np.zeros((height, width)))
    return ProbabilityMap(values=raw / peak)


def threshold_mask(pmap: ProbabilityMap, t: float) -> np.ndarray:
    """Boolean obstacle mask: strictly above-threshold pixels."""
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"mask threshold must be in [0, 1], got {t}")
    return pmap.values > t


def save_probability_map(pmap: ProbabilityMap, path) -> None:
    arr = np.round(np.clip(pmap.values, 0.0, 1.0) * MAP_SCALE).astype(np.uint16)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def load_probability_map(path) -> ProbabilityMap:
    path = Path(path)
    if not path.exists():
        raise DataError(f"probability map not found: {path}")
    with Image.open(path) as img:
        if img.mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr"):
            raise DataError(
                f"probability map {path}: expected a single channel, got mode {img.mode}"
            )
        if img.mode not in ("I;16", "I;16B", "I"):
            raise DataError(
                f"probability map {path}: expected 16-bit depth, got mode {img.mode}"
            )
        arr = np.asarray(img, dtype=np.float64)
    return ProbabilityMap(values=arr / MAP_SCALE)


def save_mask(mask: np.ndarray, path) -> None:
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def load_mask(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"mask not found: {path}")
    with Image.open(path) as img:
        if img.mode != "L":
            raise DataError(f"mask {path}: expected 8-bit grayscale, got mode {img.mode}")
        arr = np.asarray(img)
    return arr > 0
