"""Edge probability maps and the multilayer enhancement pathway.

The built-in detector is a plain gradient baseline; precomputed edge or
occlusion maps can be supplied instead as 16-bit grayscale PNGs.  Enhancement
sums the edge evidence of every nested region a pixel belongs to, so contours
in the far (deeply nested) part of the scene are amplified.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .regions import MLRegionSet

EDGE_MAP_SCALE = 65535  # stored 16-bit integer = round(value * 65535)


@dataclass(frozen=True)
class EdgeMap:
    """Per-pixel edge probabilities in [0, 1]."""

    values: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EnhancedEdgeMap:
    """Edge map after multilayer summation.

    values is clamped to [0, 1]; multiplicity(p) counts the regions containing
    p (0 outside the outermost region), so the unclamped enhancement is
    multiplicity * base value.
    """

    values: np.ndarray
    multiplicity: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _luminance(image: np.ndarray) -> np.ndarray:
    rgb = np.asarray(image, dtype=np.float64)
    if rgb.ndim == 2:
        return rgb
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def _binomial_smooth_3x3(values: np.ndarray) -> np.ndarray:
    # Separable [1, 2, 1]/4 kernel with edge replication.
    padded = np.pad(values, 1, mode="edge")
    horiz = (padded[:, :-2] + 2.0 * padded[:, 1:-1] + padded[:, 2:]) / 4.0
    return (horiz[:-2] + 2.0 * horiz[1:-1] + horiz[2:]) / 4.0


def detect_edges_baseline(image: np.ndarray) -> EdgeMap:
    """Gradient-magnitude edge baseline on the luminance channel.

    The magnitude map is smoothed with a 3x3 binomial kernel, normalized by its
    99th-percentile value, and clamped to [0, 1].
    """
    image = np.asarray(image)
    if image.size == 0 or image.ndim not in (2, 3):
        raise DataError("edge detection needs a non-empty 2-D or RGB image")
    lum = _luminance(image)
    if lum.max() > 1.0:
        lum = lum / 255.0
    gy, gx = np.gradient(lum)
    magnitude = _binomial_smooth_3x3(np.hypot(gx, gy))
    scale = np.percentile(magnitude, 99.0)
    if scale > 0:
        magnitude = magnitude / scale
    return EdgeMap(np.clip(magnitude, 0.0, 1.0))


def save_edge_map(path, edge) -> None:
    """Write an edge map (or bare [0,1] array) as a 16-bit grayscale PNG."""
    values = edge.values if isinstance(edge, (EdgeMap, EnhancedEdgeMap)) else np.asarray(edge)
    stored = np.round(np.clip(values, 0.0, 1.0) * EDGE_MAP_SCALE).astype(np.uint16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(stored).save(path)


def load_edge_map(path) -> EdgeMap:
    """Read a 16-bit single-channel PNG written by save_edge_map (value = stored/65535)."""
    try:
        image = Image.open(path)
    except FileNotFoundError as exc:
        raise DataError(f"edge map not found: {path}") from exc
    image.load()
    if image.mode in ("RGB", "RGBA", "P"):
        raise DataError(f"edge map {path}: expected a single channel, got mode {image.mode}")
    if image.mode not in ("I;16", "I;16B"):
        raise DataError(f"edge map {path}: expected 16-bit depth, got mode {image.mode}")
    stored = np.asarray(image, dtype=np.float64)
    return EdgeMap(stored / EDGE_MAP_SCALE)


def enhance_edges(edge: EdgeMap, regions: MLRegionSet) -> EnhancedEdgeMap:
    """Sum the per-region clips of the edge map onto a shared canvas.

    Each pixel picks up one copy of its edge value per containing region, then
    the result is clamped to [0, 1].  Pixels outside R_1 get multiplicity 0.
    """
    values = edge.values
    h, w = values.shape
    multiplicity = np.zeros((h, w), dtype=np.int64)
    for r in regions.regions:
        if r.x < 0 or r.y < 0 or r.x1 > w or r.y1 > h:
            raise DataError(f"region {r} exceeds the {w}x{h} edge map")
        multiplicity[r.y : r.y1, r.x : r.x1] += 1
    enhanced = np.clip(multiplicity * values, 0.0, 1.0)
    enhanced[multiplicity == 0] = 0.0
    return EnhancedEdgeMap(values=enhanced, multiplicity=multiplicity)
