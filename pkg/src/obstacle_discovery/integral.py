"""Summed-area tables for O(1) rectangle sums."""

from __future__ import annotations

import numpy as np


def integral_image(values: np.ndarray) -> np.ndarray:
    """(H+1, W+1) cumulative-sum table of a 2-D scalar field."""
    h, w = values.shape
    out = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(values, axis=0, dtype=np.float64), axis=1, out=out[1:, 1:])
    return out


def box_sum(table: np.ndarray, x0, y0, x1, y1):
    """Sum over the half-open rectangle [x0, x1) x [y0, y1).

    Coordinates may be scalars or equally-shaped integer arrays.
    """
    return table[y1, x1] - table[y0, x1] - table[y1, x0] + table[y0, x0]


def box_sums(table: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Rectangle sums for an (N,4) array of (x, y, w, h) boxes."""
    x0 = boxes[:, 0]
    y0 = boxes[:, 1]
    x1 = x0 + boxes[:, 2]
    y1 = y0 + boxes[:, 3]
    return box_sum(table, x0, y0, x1, y1)
