"""Axis-aligned boxes and overlap computations.

Boxes use pixel coordinates with a top-left origin (y grows downward) and
half-open extents: a box (x, y, w, h) covers columns [x, x+w) and rows
[y, y+h).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    x: int
    y: int
    w: int
    h: int

    @property
    def x1(self) -> int:
        return self.x + self.w

    @property
    def y1(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def contains(self, other: "Box") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x1 <= self.x1
            and other.y1 <= self.y1
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.int64)


def union_bounds(boxes) -> Box:
    """Tight bounding box of a non-empty collection of boxes."""
    arr = as_box_array(boxes)
    if arr.shape[0] == 0:
        raise ValueError("union_bounds of empty collection")
    x0 = int(arr[:, 0].min())
    y0 = int(arr[:, 1].min())
    x1 = int((arr[:, 0] + arr[:, 2]).max())
    y1 = int((arr[:, 1] + arr[:, 3]).max())
    return Box(x0, y0, x1 - x0, y1 - y0)


def as_box_array(boxes) -> np.ndarray:
    """Normalize Box objects / sequences / (N,4) arrays to an (N,4) int array."""
    if isinstance(boxes, Box):
        return boxes.as_array()[None, :]
    if isinstance(boxes, np.ndarray):
        arr = boxes.reshape(-1, 4).astype(np.int64, copy=False)
        return arr
    rows = [b.as_array() if isinstance(b, Box) else b for b in boxes]
    return np.array(rows, dtype=np.int64).reshape(-1, 4)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = max(0, min(a.x1, b.x1) - max(a.x, b.x))
    iy = max(0, min(a.y1, b.y1) - max(a.y, b.y))
    inter = ix * iy
    if inter == 0:
        return 0.0
    union = a.area + b.area - inter
    return inter / union


def iou_matrix(boxes, others) -> np.ndarray:
    """Pairwise IoU between two box collections, shape (len(boxes), len(others))."""
    a = as_box_array(boxes).astype(np.float64)
    b = as_box_array(others).astype(np.float64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    ax0, ay0 = a[:, 0:1], a[:, 1:2]
    ax1, ay1 = ax0 + a[:, 2:3], ay0 + a[:, 3:4]
    bx0, by0 = b[None, :, 0], b[None, :, 1]
    bx1, by1 = bx0 + b[None, :, 2], by0 + b[None, :, 3]
    iw = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0.0, None)
    ih = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0.0, None)
    inter = iw * ih
    union = a[:, 2:3] * a[:, 3:4] + (b[None, :, 2] * b[None, :, 3]) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out
