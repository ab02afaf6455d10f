"""Diagnostic overlays: probability heat and proposal outlines on the image."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .geometry import as_box_array

HEAT_ALPHA = 0.55  # opacity at probability 1; zero probability leaves pixels untouched


def overlay_probability(image: np.ndarray, pmap) -> np.ndarray:
    """Blend a yellow-to-red heat ramp over the image, weighted by probability."""
    values = pmap.values if hasattr(pmap, "values") else np.asarray(pmap, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if image.shape[:2] != values.shape:
        raise ContractError(
            f"probability map {values.shape} does not match image {image.shape[:2]}"
        )
    alpha = (HEAT_ALPHA * values)[:, :, None]
    heat = np.stack(
        [np.ones_like(values), 1.0 - 0.6 * values, np.zeros_like(values)], axis=-1
    )
    return image * (1.0 - alpha) + heat * alpha


def overlay_boxes(image: np.ndarray, boxes, color=(1.0, 0.1, 0.1), thickness: int = 1) -> np.ndarray:
    """Copy of the image with 1-px (or thicker) box outlines drawn on top."""
    image = np.array(image, dtype=np.float64, copy=True)
    height, width = image.shape[:2]
    boxes = as_box_array(boxes)
    if boxes.shape[0] and (
        boxes[:, 0].min() < 0
        or boxes[:, 1].min() < 0
        or (boxes[:, 0] + boxes[:, 2]).max() > width
        or (boxes[:, 1] + boxes[:, 3]).max() > height
    ):
        raise ContractError(f"box outside the {width}x{height} image")
    color = np.asarray(color, dtype=np.float64)
    for i in range(boxes.shape[0]):
        x, y, w, h = (int(v) for v in boxes[i])
        t = min(thickness, w // 2 + 1, h // 2 + 1)
        image[y : y + t, x : x + w] = color
        image[y + h - t : y + h, x : x + w] = color
        image[y : y + h, x : x + t] = color
        image[y : y + h, x + w - t : x + w] = color
    return image
