"""Multilayer scene-prior regions derived from the training obstacle distribution.

Obstacles are summarized by a 2-D pseudodistance (gap from the obstacle bottom
to the image bottom, pixel area), clustered into distance bands, and each band
k yields a region R_k that tightly encloses every obstacle at that distance or
farther.  The regions are nested, R_1 being the widest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .geometry import Box, union_bounds

REGION_FORMAT = "ml-regions"
REGION_VERSION = 1

_KMEANS_MAX_ITER = 100


@dataclass(frozen=True)
class PseudoDistance:
    """2-D distance surrogate: larger gap and smaller area mean farther away."""

    bottom_gap: int
    area: int


@dataclass(frozen=True)
class ObstacleAnnotation:
    image_id: str
    box: Box
    image_width: int
    image_height: int

    def __post_init__(self):
        b = self.box
        if b.w <= 0 or b.h <= 0:
            raise DataError(f"annotation {self.image_id}: box has empty extent {b}")
        if b.x < 0 or b.y < 0 or b.x1 > self.image_width or b.y1 > self.image_height:
            raise DataError(
                f"annotation {self.image_id}: box {b} outside "
                f"{self.image_width}x{self.image_height} image"
            )


def compute_pseudodistance(annotation: ObstacleAnnotation) -> PseudoDistance:
    b = annotation.box
    return PseudoDistance(bottom_gap=annotation.image_height - b.y1, area=b.w * b.h)


def pseudodistance_matrix(annotations) -> np.ndarray:
    """(N, 2) float matrix of (bottom_gap, area) rows."""
    rows = [compute_pseudodistance(a) for a in annotations]
    return np.array([[p.bottom_gap, p.area] for p in rows], dtype=np.float64).reshape(-1, 2)


def _standardize(features: np.ndarray) -> np.ndarray:
    # Gap and area live on wildly different scales; cluster on z-scores.
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std == 0.0] = 1.0
    return (features - mean) / std


def _farthest_point_seeds(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    seeds = np.empty(k, dtype=np.int64)
    seeds[0] = rng.integers(n)
    dist = np.sum((points - points[seeds[0]]) ** 2, axis=1)
    for j in range(1, k):
        seeds[j] = int(np.argmax(dist))
        dist = np.minimum(dist, np.sum((points - points[seeds[j]]) ** 2, axis=1))
    return seeds


def _fix_empty_clusters(points: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    # Refill an empty cluster with the member of the largest cluster that sits
    # farthest from that cluster's centroid.
    for c in range(k):
        while np.count_nonzero(labels == c) == 0:
            sizes = np.bincount(labels, minlength=k)
            donor = int(np.argmax(sizes))
            members = np.flatnonzero(labels == donor)
            centroid = points[members].mean(axis=0)
            far = members[int(np.argmax(np.sum((points[members] - centroid) ** 2, axis=1)))]
            labels[far] = c
    return labels


def cluster_obstacles(annotations, n_clusters: int, seed: int) -> np.ndarray:
    """Group obstacles into distance bands by k-means on standardized pseudodistance.

    Returns 0-based labels reordered so that band 0 is nearest (smallest mean
    bottom gap) and band n_clusters-1 is farthest.
    """
    annotations = list(annotations)
    if n_clusters < 1:
        raise ConfigError(f"n_clusters must be >= 1, got {n_clusters}")
    if len(annotations) < n_clusters:
        raise ConfigError(
            f"need at least {n_clusters} annotations to form {n_clusters} clusters, "
            f"got {len(annotations)}"
        )
    raw = pseudodistance_matrix(annotations)
    points = _standardize(raw)
    rng = np.random.default_rng(seed)

    centroids = points[_farthest_point_seeds(points, n_clusters, rng)].copy()
    labels = np.full(points.shape[0], -1, dtype=np.int64)
    for _ in range(_KMEANS_MAX_ITER):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        new_labels = _fix_empty_clusters(points, new_labels, n_clusters)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(n_clusters):
            centroids[c] = points[labels == c].mean(axis=0)

    # Order bands near -> far: ascending mean gap, ties broken by larger mean
    # area first (smaller area at the same gap reads as farther).
    key = []
    for c in range(n_clusters):
        members = raw[labels == c]
        key.append((members[:, 0].mean(), -members[:, 1].mean()))
    order = sorted(range(n_clusters), key=lambda c: key[c])
    remap = np.empty(n_clusters, dtype=np.int64)
    remap[order] = np.arange(n_clusters)
    return remap[labels]


@dataclass(frozen=True)
class MLRegionSet:
    """Nested regions R_1 ⊇ R_2 ⊇ ... ⊇ R_K (stored as regions[0..K-1])."""

    regions: tuple
    image_width: int
    image_height: int

    def __post_init__(self):
        if len(self.regions) < 1:
            raise DataError("region set must contain at least one region")
        for i, r in enumerate(self.regions):
            if r.x < 0 or r.y < 0 or r.x1 > self.image_width or r.y1 > self.image_height:
                raise DataError(f"region {i + 1} {r} outside the image")
            if i > 0 and not self.regions[i - 1].contains(r):
                raise DataError(f"region {i + 1} not nested inside region {i}")

    @property
    def k(self) -> int:
        return len(self.regions)

    def truncated(self, n_layers: int) -> "MLRegionSet":
        """Keep only the first n_layers regions (the @k proposal variants)."""
        if not 1 <= n_layers <= self.k:
            raise ConfigError(f"layers must be in 1..{self.k}, got {n_layers}")
        return MLRegionSet(self.regions[:n_layers], self.image_width, self.image_height)

    def to_json(self) -> dict:
        return {
            "format": REGION_FORMAT,
            "version": REGION_VERSION,
            "K": self.k,
            "image_width": self.image_width,
            "image_height": self.image_height,
            "regions": [{"x": r.x, "y": r.y, "w": r.w, "h": r.h} for r in self.regions],
            "vertical_boundaries": vertical_ranges(self).boundaries,
        }

    @staticmethod
    def from_json(doc: dict) -> "MLRegionSet":
        if not isinstance(doc, dict) or doc.get("format") != REGION_FORMAT:
            raise DataError("not a region-set document (bad or missing format field)")
        if doc.get("version") != REGION_VERSION:
            raise DataError(f"unsupported region-set version {doc.get('version')!r}")
        try:
            regions = tuple(Box(r["x"], r["y"], r["w"], r["h"]) for r in doc["regions"])
            return MLRegionSet(regions, doc["image_width"], doc["image_height"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed region-set document: {exc}") from exc

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @staticmethod
    def load(path) -> "MLRegionSet":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise DataError(f"region file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"region file {path} is not valid JSON: {exc}") from exc
        return MLRegionSet.from_json(doc)


def build_regions(annotations, labels: np.ndarray, n_clusters: int) -> MLRegionSet:
    """Region k = tight bounds of the obstacles in bands k..K (1-based)."""
    annotations = list(annotations)
    labels = np.asarray(labels)
    if len(annotations) != labels.shape[0]:
        raise ConfigError("labels length does not match annotations")
    dims = {(a.image_width, a.image_height) for a in annotations}
    if len(dims) != 1:
        raise ConfigError(f"annotations span inconsistent image sizes: {sorted(dims)}")
    width, height = next(iter(dims))

    regions = []
    for band in range(n_clusters):
        boxes = [a.box for a, lab in zip(annotations, labels) if lab >= band]
        if not boxes:
            raise ConfigError(f"no obstacles left for region {band + 1}")
        regions.append(union_bounds(boxes))
    return MLRegionSet(tuple(regions), width, height)


def fit_regions(annotations, n_clusters: int, seed: int) -> MLRegionSet:
    """Cluster + region construction in one step (the offline fitting path)."""
    labels = cluster_obstacles(annotations, n_clusters, seed)
    return build_regions(annotations, labels, n_clusters)


@dataclass(frozen=True)
class VerticalRanges:
    """Row boundaries y_1 >= y_2 >= ... >= y_{K+1} (y_1 = R_1 bottom, y_{K+1} = R_K top).

    Range k spans rows [y_{k+1}, y_k]; the shared boundary y_{k+1} belongs to
    range k+1, and rows outside [y_{K+1}, y_1] clamp to the nearest range.
    """

    boundaries: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.boundaries) - 1

    def range_of(self, bottom_rows) -> np.ndarray:
        """1-based range index for each proposal bottom row (y + h)."""
        rows = np.atleast_1d(np.asarray(bottom_rows))
        idx = np.ones(rows.shape, dtype=np.int64)
        for j in range(1, self.k):
            idx += rows <= self.boundaries[j]
        return idx


def vertical_ranges(region_set: MLRegionSet) -> VerticalRanges:
    bounds = [r.y1 for r in region_set.regions]
    bounds.append(region_set.regions[-1].y)
    return VerticalRanges(boundaries=bounds)
