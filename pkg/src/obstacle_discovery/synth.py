"""Synthetic road scenes with known ground truth.

Each scene is a perspective trapezoid road on a textured ground/sky
background.  Rectangular obstacles sit on the road with bottom rows spread
over the depth range; their on-screen size shrinks toward the horizon and
their underlying size follows a long-tail (Pareto) law, so small instances
dominate.  Two kinds of distractors are painted in deliberately: low-contrast
shadow patches on the road surface (edge energy that is not an obstacle) and
colorful clutter boxes off the road (obstacle-like appearance in background
context).

Everything derives from one seed through spawned per-image generators, so a
dataset is bitwise reproducible.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .config import PipelineConfig, SynthSection
from .dataset import (
    OBSTACLE_ID_BASE,
    DatasetManifest,
    ImageBundle,
    ImageRecord,
    save_image_rgb,
    save_label_mask,
    save_manifest,
)

log = logging.getLogger(__name__)

PARETO_SHAPE = 1.8  # long-tail exponent for underlying obstacle size
MIN_OBSTACLE_PX = 8
MAX_PLACEMENT_TRIES = 10
HORIZON_BLEND_ROWS = 4  # half-height of the sky/ground transition band
ROAD_MID_LEVEL = 0.5  # reference shade obstacles must contrast against


def _road_geometry(rng, width, height):
    horizon = int(round(height * rng.uniform(0.28, 0.38)))
    cx = width / 2.0 + rng.uniform(-0.05, 0.05) * width
    hw_top = width * rng.uniform(0.04, 0.08)
    hw_bottom = width * rng.uniform(0.38, 0.46)
    return horizon, cx, hw_top, hw_bottom


def _half_width(y, horizon, height, hw_top, hw_bottom):
    t = (np.asarray(y, dtype=np.float64) - horizon) / (height - 1 - horizon)
    return hw_top + (hw_bottom - hw_top) * t


def _paint_background(rng, image, horizon):
    height, width = image.shape[:2]
    ys = np.linspace(0.0, 1.0, height)[:, None]
    sky = np.stack(
        [0.55 + 0.1 * (1 - ys), 0.62 + 0.1 * (1 - ys), 0.72 + 0.12 * (1 - ys)], axis=-1
    )
    ground_base = np.array([0.32, 0.36, 0.22]) + rng.uniform(-0.04, 0.04, 3)
    ground = np.broadcast_to(ground_base, image.shape).copy()
    ground += rng.normal(0.0, 0.008, size=ground.shape)
    # Atmospheric blend instead of a razor edge: a hard sky/ground line would
    # be the strongest contour in the scene and drown the obstacle edges.
    rows = np.arange(height)[:, None, None]
    t = np.clip((rows - (horizon - HORIZON_BLEND_ROWS)) / (2.0 * HORIZON_BLEND_ROWS), 0.0, 1.0)
    image[:] = sky * (1.0 - t) + ground * t


def _paint_road(rng, image, road_mask, horizon, cx, hw_top, hw_bottom):
    height, width = image.shape[:2]
    base = rng.uniform(0.45, 0.55)
    ys = np.arange(height)
    shade = base + 0.06 * (ys - horizon) / max(1, height - 1 - horizon)
    road_color = np.repeat(shade[:, None], width, axis=1)
    road_color += rng.normal(0.0, 0.004, size=road_color.shape)
    # Soft dirt shoulder: blend road into ground over a few pixels so the
    # trapezoid sides do not form razor-sharp diagonal contours.
    ys_grid, xs_grid = np.mgrid[0:height, 0:width]
    half = _half_width(ys_grid, horizon, height, hw_top, hw_bottom)
    alpha = np.clip((half + 2.0 - np.abs(xs_grid - cx)) / 4.0, 0.0, 1.0)
    alpha[ys_grid < horizon] = 0.0
    for c in range(3):
        image[:, :, c] = image[:, :, c] * (1.0 - alpha) + road_color * alpha
    # Dashed center line: worn paint, and only in the near field where
    # perspective leaves it wide enough to resolve.
    for y0 in range(horizon + max(4, int(0.35 * (height - horizon))), height, 12):
        y1 = min(y0 + 3, height)
        mid = (y0 + y1) // 2
        half_px = max(1, int(round(0.012 * _half_width(mid, horizon, height, hw_top, hw_bottom))) + 1)
        x0 = int(round(cx)) - half_px
        x1 = int(round(cx)) + half_px
        image[y0:y1, max(0, x0) : min(width, x1)] = shade[mid] + 0.13


def _perspective_scale(bottom, horizon, height):
    return (bottom - horizon) / (height - 1 - horizon)


def _sample_obstacle_dims(rng, bottom, horizon, height, base):
    size = base * (1.0 + rng.pareto(PARETO_SHAPE))
    size = min(size, 0.42)
    scale = _perspective_scale(bottom, horizon, height)
    h = max(MIN_OBSTACLE_PX, int(round(size * scale * height)))
    aspect = rng.uniform(0.5, 1.6)
    w = max(MIN_OBSTACLE_PX, int(round(h * aspect)))
    return w, h


def _obstacle_color(rng):
    if rng.uniform() < 0.5:
        v = rng.uniform(0.12, 0.3)
        return np.array([v, v, v]) + rng.uniform(-0.03, 0.03, 3)
    # Colored objects: push every channel away from the road shade so lost
    # cargo never fades into the asphalt it sits on.
    signs = rng.choice(np.array([-1.0, 1.0]), 3)
    return np.clip(ROAD_MID_LEVEL + signs * rng.uniform(0.18, 0.42, 3), 0.05, 0.95)


def _place_obstacles(rng, image, labels, cfg, horizon, cx, hw_top, hw_bottom):
    height, width = image.shape[:2]
    n = int(rng.integers(cfg.min_obstacles, cfg.max_obstacles + 1))
    # Start placement well below the sky blend so the fitted regions (whose
    # shared top row carries the full multiplicity) never cover horizon
    # gradient; clamp heights to keep obstacle tops clear of it too.
    depth_lo = horizon + max(4, int(0.22 * (height - horizon)))
    depth_hi = height - 2
    edges = np.linspace(depth_lo, depth_hi, n + 1)
    boxes = []
    for i in range(n):
        bottom = int(rng.integers(int(edges[i]), max(int(edges[i]) + 1, int(edges[i + 1]))))
        w, h = _sample_obstacle_dims(rng, bottom, horizon, height, cfg.obstacle_scale)
        h = min(h, bottom - horizon - 2 * HORIZON_BLEND_ROWS)
        top = bottom - h
        road_half = _half_width(top, horizon, height, hw_top, hw_bottom)
        if 2 * road_half < w:  # wider than the road this far out: shrink to fit
            w = max(MIN_OBSTACLE_PX, int(2 * road_half) - 2)
        if w < MIN_OBSTACLE_PX or h < MIN_OBSTACLE_PX:
            continue
        lo = int(np.ceil(cx - road_half))
        hi = int(np.floor(cx + road_half)) - w
        if hi < lo:
            continue
        x = None
        for _ in range(MAX_PLACEMENT_TRIES):
            trial = int(rng.integers(lo, hi + 1))
            candidate = np.array([trial, top, w, h])
            if all(not _placement_conflict(candidate, b) for b in boxes):
                x = trial
                break
        if x is None:
            continue
        color = _obstacle_color(rng)
        patch = color + rng.normal(0.0, 0.01, size=(h, w, 3))
        image[top:bottom, x : x + w] = patch
        shade_rows = min(2, h)
        image[bottom - shade_rows : bottom, x : x + w] *= 0.7  # contact shadow edge
        labels[top:bottom, x : x + w] = OBSTACLE_ID_BASE + len(boxes)
        boxes.append(np.array([x, top, w, h]))
    return boxes


def _placement_conflict(a, b) -> bool:
    """Reject pairs that overlap too much (IoU) or nearly contain each other.

    The containment check keeps every instance mostly visible after later
    obstacles paint over earlier ones; plain IoU lets a large box swallow a
    small one while staying under the overlap cap.
    """
    iw = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    ih = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return False
    inter = iw * ih
    area_a = a[2] * a[3]
    area_b = b[2] * b[3]
    if inter / (area_a + area_b - inter) >= 0.3:
        return True
    return inter / min(area_a, area_b) >= 0.5


def _place_shadows(rng, image, labels, road_mask, cfg, horizon, cx, hw_top, hw_bottom):
    """Low-contrast dark patches on the road; never labeled as obstacles."""
    height, width = image.shape[:2]
    for _ in range(cfg.n_shadows):
        bottom = int(rng.integers(horizon + 6, height - 1))
        scale = _perspective_scale(bottom, horizon, height)
        h = max(3, int(round(rng.uniform(0.04, 0.12) * scale * height)))
        w = max(4, int(round(h * rng.uniform(1.2, 3.0))))
        top = max(horizon + 1, bottom - h)
        road_half = _half_width(top, horizon, height, hw_top, hw_bottom)
        lo = int(np.ceil(cx - road_half))
        hi = int(np.floor(cx + road_half)) - w
        if hi < lo:
            continue
        x = int(rng.integers(lo, hi + 1))
        region = labels[top:bottom, x : x + w]
        if (region > 0).any():  # keep distractors clear of real obstacles
            continue
        image[top:bottom, x : x + w] *= rng.uniform(0.72, 0.88)


def _place_clutter(rng, image, cfg, horizon, cx, hw_top, hw_bottom):
    """Textured roadside blocks hugging the shoulder, mostly off the road.

    Blocks may spill onto the carriageway by at most 0.35 of their width,
    so windows over them stay majority off-road yet still cover road
    pixels near the boundary.  Painted before obstacles so real obstacles
    occlude clutter, never the reverse.
    """
    height, width = image.shape[:2]
    for _ in range(cfg.n_clutter):
        bottom = int(rng.integers(horizon + 5, height - 1))
        scale = _perspective_scale(bottom, horizon, height)
        h = max(4, int(round(rng.uniform(0.05, 0.2) * scale * height)))
        w = max(4, int(round(h * rng.uniform(0.6, 1.5))))
        top = max(0, bottom - h)
        road_half = _half_width(bottom, horizon, height, hw_top, hw_bottom)
        overlap = int(rng.integers(0, max(1, int(0.35 * w)) + 1))
        left_x = int(np.floor(cx - road_half)) - w + overlap
        right_x = int(np.ceil(cx + road_half)) - overlap
        sides = []
        if left_x >= 0:
            sides.append(left_x)
        if right_x + w <= width:
            sides.append(right_x)
        if not sides:
            continue
        x = sides[int(rng.integers(0, len(sides)))]
        color = _obstacle_color(rng)
        rows = np.arange(top, bottom)
        stripe = np.where((rows // 2) % 2 == 0, 1.0, -1.0)[:, None, None]
        patch = color + 0.12 * stripe + rng.normal(0.0, 0.01, size=(bottom - top, w, 3))
        image[top:bottom, x : x + w] = np.clip(patch, 0.0, 1.0)


def generate_scene(rng: np.random.Generator, image_id: str, cfg: SynthSection) -> ImageBundle:
    """One deterministic scene: image, road mask, instance labels, GT boxes."""
    width, height = cfg.width, cfg.height
    image = np.zeros((height, width, 3))
    horizon, cx, hw_top, hw_bottom = _road_geometry(rng, width, height)
    ys, xs = np.mgrid[0:height, 0:width]
    half = _half_width(ys, horizon, height, hw_top, hw_bottom)
    road_mask = (ys >= horizon) & (np.abs(xs - cx) <= half)

    _paint_background(rng, image, horizon)
    _paint_road(rng, image, road_mask, horizon, cx, hw_top, hw_bottom)
    _place_clutter(rng, image, cfg, horizon, cx, hw_top, hw_bottom)
    labels = np.zeros((height, width), dtype=np.int64)
    boxes = _place_obstacles(rng, image, labels, cfg, horizon, cx, hw_top, hw_bottom)
    _place_shadows(rng, image, labels, road_mask, cfg, horizon, cx, hw_top, hw_bottom)

    image += rng.normal(0.0, cfg.noise, size=image.shape)
    np.clip(image, 0.0, 1.0, out=image)
    box_array = np.array(boxes, dtype=np.int64) if boxes else np.zeros((0, 4), dtype=np.int64)
    return ImageBundle(
        image_id=image_id,
        rgb=image,
        road_mask=road_mask,
        obstacle_labels=labels,
        boxes=box_array,
    )


def generate_bundles(cfg: PipelineConfig, seed: int, n_images=None) -> list:
    """In-memory dataset; file-free path used by tests and tight loops."""
    n = int(n_images if n_images is not None else cfg.synth.n_images)
    seeds = np.random.SeedSequence(seed).spawn(n)
    return [
        generate_scene(np.random.default_rng(seeds[i]), f"img_{i:04d}", cfg.synth)
        for i in range(n)
    ]


def generate_dataset(cfg: PipelineConfig, out_dir, seed=None, n_images=None) -> Path:
    """Write images, masks, and a split-tagged manifest; returns its path."""
    out_dir = Path(out_dir)
    seed = cfg.seed if seed is None else int(seed)
    bundles = generate_bundles(cfg, seed, n_images)
    n_train = int(np.ceil(cfg.synth.train_fraction * len(bundles)))
    records = []
    for i, bundle in enumerate(bundles):
        image_path = out_dir / "images" / f"{bundle.image_id}.png"
        road_path = out_dir / "masks" / f"{bundle.image_id}_road.png"
        obstacle_path = out_dir / "masks" / f"{bundle.image_id}_obstacles.png"
        save_image_rgb(bundle.rgb, image_path)
        save_label_mask(bundle.road_mask.astype(np.int64), road_path)
        save_label_mask(bundle.obstacle_labels, obstacle_path)
        records.append(
            ImageRecord(
                image_id=bundle.image_id,
                image_path=image_path,
                road_mask_path=road_path,
                boxes=bundle.boxes,
                split="train" if i < n_train else "test",
                obstacle_mask_path=obstacle_path,
            )
        )
    manifest_path = out_dir / "manifest.json"
    save_manifest(DatasetManifest(records=records, root=out_dir), manifest_path)
    log.info("wrote %d synthetic scenes under %s", len(records), out_dir)
    return manifest_path
