"""End-to-end stages: synth, regions, proposals, training, inference, metrics.

Two layers live here.  The in-memory core (`*_for_bundle`, `train_on_bundles`,
`infer_on_bundle`) passes arrays between steps and is what tests and tight
experiment loops call.  The `stage_*` wrappers bind that core to the
filesystem: a manifest in, documented filenames under one output directory
out, JSON-safe summary dicts back.  Stages that consume other stages' output
(eval, render) look for those filenames in the same output directory.

Split convention: training reads the records tagged "train", everything else
reads "test"; a manifest without the requested tag falls back to all records.
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .dataset import (
    ImageBundle,
    image_size,
    labels_from_boxes,
    load_bundle,
    load_manifest,
    load_obstacle_labels,
    load_road_mask,
    save_image_rgb,
)
from .edges import detect_edges_baseline, enhance_edges, load_edge_map, save_edge_map
from .errors import ConfigError, DataError
from .evaluation import average_recall, pixel_roc, recall_curve, write_recall_csv
from .features import FeatureContext, compute_features, write_features_csv
from .forest import train_forest
from .geometry import Box
from .model import (
    PRIMARY,
    SECONDARY,
    TrainedModel,
    load_model,
    save_model,
    score_proposals,
    select_training_rows,
    write_scored_csv,
)
from .probmap import (
    build_probability_map,
    load_probability_map,
    save_mask,
    save_probability_map,
    threshold_mask,
)
from .proposals import generate_proposals, label_boxes, write_proposals_csv
from .regions import MLRegionSet, ObstacleAnnotation, fit_regions, vertical_ranges
from .render import overlay_boxes, overlay_probability
from .synth import generate_dataset

log = logging.getLogger(__name__)

DEFAULT_RECALL_BUDGETS = (1, 10, 100, 1000)


# ---------------------------------------------------------------- in-memory

def bundle_annotations(bundles) -> list:
    out = []
    for b in bundles:
        for row in np.atleast_2d(b.boxes) if len(b.boxes) else []:
            out.append(
                ObstacleAnnotation(
                    image_id=b.image_id,
                    box=Box(*(int(v) for v in row)),
                    image_width=b.width,
                    image_height=b.height,
                )
            )
    return out


def manifest_annotations(manifest, split: str = "train") -> list:
    """Annotations from manifest records; reads only image headers, not pixels."""
    out = []
    for record in manifest.for_split(split):
        if record.boxes.shape[0] == 0:
            continue
        width, height = image_size(record.image_path)
        for row in record.boxes:
            out.append(
                ObstacleAnnotation(
                    image_id=record.image_id,
                    box=Box(*(int(v) for v in row)),
                    image_width=width,
                    image_height=height,
                )
            )
    return out


def fit_regions_from_annotations(cfg: PipelineConfig, annotations, seed) -> MLRegionSet:
    if len(annotations) < cfg.n_regions:
        raise DataError(
            f"region fitting needs at least {cfg.n_regions} annotated obstacles, "
            f"got {len(annotations)}"
        )
    return fit_regions(annotations, cfg.n_regions, int(seed))


def proposals_for_bundle(
    cfg: PipelineConfig,
    bundle: ImageBundle,
    region_set: MLRegionSet,
    multistride=None,
    cap=None,
    base_edge=None,
):
    """Enhanced edge map plus the ranked proposal set for one image."""
    edge = base_edge if base_edge is not None else detect_edges_baseline(bundle.rgb)
    enhanced = enhance_edges(edge, region_set)
    ms = cfg.multistride if multistride is None else bool(multistride)
    pset = generate_proposals(
        enhanced,
        region_set,
        cfg.stride_overlap,
        multistride=ms,
        nms_overlap=cfg.nms_overlap,
        min_window_area=cfg.min_window_area,
    )
    if cap is not None and len(pset) > cap:
        pset = pset.take(np.arange(cap))
    return pset, enhanced


def _child_seed(seed_seq) -> int:
    return int(seed_seq.generate_state(1)[0])


def train_on_bundles(cfg: PipelineConfig, bundles, region_set: MLRegionSet, seed) -> TrainedModel:
    """Fit the primary and secondary forests from labeled synthetic/real images.

    Proposal generation runs uncapped here; the max_proposals budget only
    applies at inference and dump time.
    """
    ranges = vertical_ranges(region_set)
    root = np.random.SeedSequence(int(seed))
    sampling_ss, primary_ss, secondary_ss = root.spawn(3)
    image_seeds = sampling_ss.spawn(len(bundles))
    samples = {PRIMARY: [], SECONDARY: []}
    targets = {PRIMARY: [], SECONDARY: []}
    n_used = 0
    for bundle, image_seed in zip(bundles, image_seeds):
        if bundle.boxes.shape[0] == 0:
            log.warning("image %s has no ground-truth boxes; skipped for training", bundle.image_id)
            continue
        pset, enhanced = proposals_for_bundle(cfg, bundle, region_set)
        if len(pset) == 0:
            log.warning("image %s produced no proposals; skipped for training", bundle.image_id)
            continue
        pset.category = label_boxes(pset.boxes, bundle.road_mask, bundle.obstacle_mask)
        ctx = FeatureContext.create(edge=enhanced, rgb=bundle.rgb)
        rng = np.random.default_rng(image_seed)
        for role in (PRIMARY, SECONDARY):
            rows, ious = select_training_rows(
                pset, bundle.boxes, ranges, role, cfg.sampling(role), rng
            )
            if rows.size == 0:
                continue
            samples[role].append(
                compute_features(ctx, pset.boxes[rows], pset.objectness[rows])
            )
            targets[role].append(ious)
        n_used += 1
    for role in (PRIMARY, SECONDARY):
        if not samples[role]:
            raise ConfigError(f"no {role} training samples were collected")
    params = cfg.forest.tree_params()
    primary = train_forest(
        np.concatenate(samples[PRIMARY]),
        np.concatenate(targets[PRIMARY]),
        cfg.forest.n_trees,
        params,
        seed=_child_seed(primary_ss),
    )
    secondary = train_forest(
        np.concatenate(samples[SECONDARY]),
        np.concatenate(targets[SECONDARY]),
        cfg.forest.n_trees,
        params,
        seed=_child_seed(secondary_ss),
    )
    log.info(
        "trained forests on %d images (%d primary / %d secondary samples)",
        n_used,
        sum(len(t) for t in targets[PRIMARY]),
        sum(len(t) for t in targets[SECONDARY]),
    )
    return TrainedModel(
        primary=primary,
        secondary=secondary,
        regions=region_set,
        sampling_primary=cfg.sampling(PRIMARY),
        sampling_secondary=cfg.sampling(SECONDARY),
        secondary_weight=cfg.secondary_weight,
        gate_fraction=cfg.gate_fraction,
    )


def infer_on_bundle(
    cfg: PipelineConfig,
    model: TrainedModel,
    bundle: ImageBundle,
    multistride=None,
    fusion=None,
    layers=None,
    base_edge=None,
):
    """Score one image end to end; returns (scored proposals, probability map)."""
    region_set = model.regions if layers is None else model.regions.truncated(int(layers))
    pset, enhanced = proposals_for_bundle(
        cfg, bundle, region_set, multistride=multistride, cap=cfg.max_proposals, base_edge=base_edge
    )
    ctx = FeatureContext.create(edge=enhanced, rgb=bundle.rgb)
    feats = compute_features(ctx, pset.boxes, pset.objectness)
    use_fusion = cfg.fusion if fusion is None else bool(fusion)
    effective = model if use_fusion else replace(model, secondary_weight=0.0, gate_fraction=1.0)
    scored = score_proposals(effective, pset, feats)
    pmap = build_probability_map(
        scored.boxes, scored.score, bundle.width, bundle.height, cfg.prob_top_fraction
    )
    return scored, pmap


# ------------------------------------------------------------- file stages

def _edge_input(cfg: PipelineConfig, out_dir: Path, image_id: str):
    """Precomputed edge maps come from <out>/edges when configured that way."""
    if cfg.edge_source != "precomputed":
        return None
    path = Path(out_dir) / "edges" / f"{image_id}.png"
    if not path.exists():
        raise DataError(f"edge_source is 'precomputed' but {path} is missing")
    return load_edge_map(path)


def stage_synth(cfg: PipelineConfig, out, seed=None) -> dict:
    out = Path(out)
    manifest_path = generate_dataset(cfg, out, seed=seed)
    manifest = load_manifest(manifest_path)
    return {
        "manifest": str(manifest_path),
        "n_images": len(manifest),
        "n_train": len([r for r in manifest.records if r.split == "train"]),
    }


def stage_regions(cfg: PipelineConfig, manifest_path, out, seed=None, layers=None) -> dict:
    if manifest_path is None:
        raise ConfigError("region fitting requires --manifest")
    if layers is not None:
        cfg = cfg.with_layers(int(layers))
    manifest = load_manifest(manifest_path)
    annotations = manifest_annotations(manifest, "train")
    region_set = fit_regions_from_annotations(
        cfg, annotations, cfg.seed if seed is None else seed
    )
    out = Path(out)
    path = out / "regions.json"
    region_set.save(path)
    return {
        "regions": str(path),
        "k": region_set.k,
        "rects": [[r.x, r.y, r.w, r.h] for r in region_set.regions],
        "n_annotations": len(annotations),
    }


def stage_edges(cfg: PipelineConfig, manifest_path, out) -> dict:
    if manifest_path is None:
        raise ConfigError("edge detection requires --manifest")
    manifest = load_manifest(manifest_path)
    out = Path(out)
    written = []
    for record in manifest.records:
        bundle = load_bundle(record)
        edge = detect_edges_baseline(bundle.rgb)
        path = out / "edges" / f"{record.image_id}.png"
        save_edge_map(path, edge)
        written.append(str(path))
    return {"edges": str(out / "edges"), "n_images": len(written)}


def _load_regions_arg(regions_path, out) -> MLRegionSet:
    """Explicit region file, falling back to <out>/regions.json from a prior stage."""
    if regions_path is None:
        candidate = Path(out) / "regions.json"
        if not candidate.exists():
            raise ConfigError(
                f"no region file given and {candidate} does not exist; run `regions` first"
            )
        regions_path = candidate
    return MLRegionSet.load(regions_path)


def stage_proposals(
    cfg: PipelineConfig, manifest_path, regions_path, out, multistride=None, layers=None
) -> dict:
    if manifest_path is None:
        raise ConfigError("proposal generation requires --manifest")
    region_set = _load_regions_arg(regions_path, out)
    if layers is not None:
        region_set = region_set.truncated(int(layers))
    manifest = load_manifest(manifest_path)
    out = Path(out)
    ids, sets = [], []
    for record in manifest.for_split("test"):
        bundle = load_bundle(record)
        pset, _ = proposals_for_bundle(
            cfg,
            bundle,
            region_set,
            multistride=multistride,
            cap=cfg.max_proposals,
            base_edge=_edge_input(cfg, out, record.image_id),
        )
        ids.append(record.image_id)
        sets.append(pset)
    path = out / "proposals.csv"
    write_proposals_csv(path, ids, sets)
    return {
        "proposals": str(path),
        "n_images": len(ids),
        "n_proposals": int(sum(len(s) for s in sets)),
    }


def stage_features(
    cfg: PipelineConfig, manifest_path, regions_path, out, multistride=None, layers=None
) -> dict:
    if manifest_path is None:
        raise ConfigError("feature extraction requires --manifest")
    region_set = _load_regions_arg(regions_path, out)
    if layers is not None:
        region_set = region_set.truncated(int(layers))
    manifest = load_manifest(manifest_path)
    out = Path(out)
    ids, sets, written = [], [], []
    for record in manifest.for_split("test"):
        bundle = load_bundle(record)
        pset, enhanced = proposals_for_bundle(
            cfg,
            bundle,
            region_set,
            multistride=multistride,
            cap=cfg.max_proposals,
            base_edge=_edge_input(cfg, out, record.image_id),
        )
        ctx = FeatureContext.create(edge=enhanced, rgb=bundle.rgb)
        feats = compute_features(ctx, pset.boxes, pset.objectness)
        path = out / "features" / f"{record.image_id}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_features_csv(path, feats)
        ids.append(record.image_id)
        sets.append(pset)
        written.append(str(path))
    write_proposals_csv(out / "proposals.csv", ids, sets)
    return {
        "features": str(out / "features"),
        "proposals": str(out / "proposals.csv"),
        "n_images": len(ids),
    }


def stage_train(
    cfg: PipelineConfig,
    manifest_path,
    out,
    seed=None,
    regions_path=None,
    layers=None,
) -> dict:
    if manifest_path is None:
        raise ConfigError("training requires --manifest")
    if layers is not None:
        cfg = cfg.with_layers(int(layers))
    seed = cfg.seed if seed is None else int(seed)
    manifest = load_manifest(manifest_path)
    out = Path(out)
    if regions_path is not None:
        region_set = MLRegionSet.load(regions_path)
        if region_set.k != cfg.n_regions:
            region_set = region_set.truncated(cfg.n_regions)
    else:
        annotations = manifest_annotations(manifest, "train")
        region_set = fit_regions_from_annotations(cfg, annotations, seed)
        region_set.save(out / "regions.json")
    bundles = [load_bundle(r) for r in manifest.for_split("train")]
    model = train_on_bundles(cfg, bundles, region_set, seed)
    model_path = out / "model.json"
    save_model(model, model_path)
    return {
        "model": str(model_path),
        "regions_k": region_set.k,
        "n_trees": cfg.forest.n_trees,
        "n_train_images": len(bundles),
    }


def stage_infer(
    cfg: PipelineConfig,
    manifest_path,
    model_path,
    out,
    multistride=None,
    fusion=None,
    layers=None,
) -> dict:
    if manifest_path is None:
        raise ConfigError("inference requires --manifest")
    out = Path(out)
    if model_path is None:
        candidate = out / "model.json"
        if not candidate.exists():
            raise ConfigError(
                f"no model file given and {candidate} does not exist; run `train` first"
            )
        model_path = candidate
    model = load_model(model_path)
    manifest = load_manifest(manifest_path)
    ids, scored_sets = [], []
    for record in manifest.for_split("test"):
        bundle = load_bundle(record)
        scored, pmap = infer_on_bundle(
            cfg,
            model,
            bundle,
            multistride=multistride,
            fusion=fusion,
            layers=layers,
            base_edge=_edge_input(cfg, out, record.image_id),
        )
        save_probability_map(pmap, out / "maps" / f"{record.image_id}.png")
        save_mask(
            threshold_mask(pmap, cfg.mask_threshold),
            out / "masks" / f"{record.image_id}.png",
        )
        ids.append(record.image_id)
        scored_sets.append(scored)
    scored_path = out / "scored.csv"
    write_scored_csv(scored_path, ids, scored_sets)
    return {
        "scored": str(scored_path),
        "maps": str(out / "maps"),
        "masks": str(out / "masks"),
        "n_images": len(ids),
    }


def _ground_truth_masks(record):
    road = load_road_mask(record.road_mask_path)
    if record.obstacle_mask_path is not None:
        obstacle = load_obstacle_labels(record.obstacle_mask_path) > 0
    else:
        obstacle = labels_from_boxes(record.boxes, road.shape[1], road.shape[0]) > 0
    return road, obstacle


def stage_eval_roc(cfg: PipelineConfig, manifest_path, out) -> dict:
    if manifest_path is None:
        raise ConfigError("ROC evaluation requires --manifest")
    manifest = load_manifest(manifest_path)
    out = Path(out)
    maps, roads, obstacles = [], [], []
    for record in manifest.for_split("test"):
        map_path = out / "maps" / f"{record.image_id}.png"
        if not map_path.exists():
            raise DataError(f"no probability map for {record.image_id!r} at {map_path}")
        maps.append(load_probability_map(map_path))
        road, obstacle = _ground_truth_masks(record)
        roads.append(road)
        obstacles.append(obstacle)
    curve = pixel_roc(maps, roads, obstacles)
    roc_path = out / "roc.csv"
    curve.save_csv(roc_path)
    order = np.argsort(curve.fpr, kind="stable")
    summary = {
        "tpr_at_fpr_0.01": curve.tpr_at_fpr(0.01),
        "tpr_at_fpr_0.02": curve.tpr_at_fpr(0.02),
        "tpr_at_fpr_0.05": curve.tpr_at_fpr(0.05),
        "auc": float(np.trapezoid(curve.tpr[order], curve.fpr[order])),
        "n_images": len(maps),
    }
    (out / "roc_summary.json").write_text(json.dumps(summary, indent=1))
    return {"roc": str(roc_path), "summary": str(out / "roc_summary.json"), **summary}


def _read_ranked_boxes(path) -> dict:
    """image_id -> (N, 4) boxes in file order, from proposals.csv or scored.csv."""
    import csv as _csv

    path = Path(path)
    grouped: dict = {}
    with path.open() as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:5] != ["image_id", "x", "y", "w", "h"]:
            raise DataError(f"{path}: expected a ranked box CSV, got header {header}")
        for row in reader:
            grouped.setdefault(row[0], []).append([int(v) for v in row[1:5]])
    return {k: np.array(v, dtype=np.int64) for k, v in grouped.items()}


def stage_eval_recall(
    cfg: PipelineConfig, manifest_path, out, top_ns=DEFAULT_RECALL_BUDGETS
) -> dict:
    if manifest_path is None:
        raise ConfigError("recall evaluation requires --manifest")
    manifest = load_manifest(manifest_path)
    out = Path(out)
    source = out / "scored.csv"
    if not source.exists():
        source = out / "proposals.csv"
    if not source.exists():
        raise DataError(f"no scored.csv or proposals.csv under {out}; run infer or proposals first")
    ranked = _read_ranked_boxes(source)
    empty = np.zeros((0, 4), dtype=np.int64)
    props, gts = [], []
    for record in manifest.for_split("test"):
        props.append(ranked.get(record.image_id, empty))
        gts.append(record.boxes)
    budgets = [int(n) for n in top_ns]
    rows = recall_curve(props, gts, budgets, iou_threshold=0.5)
    curve_path = out / "recall_curve.csv"
    write_recall_csv(curve_path, rows)
    top = max(budgets)
    summary = {
        "source": str(source),
        "recall_at_iou0.5": dict((str(n), r) for n, r in rows),
        "average_recall": average_recall(props, gts, top_n=top),
        "top_n": top,
    }
    (out / "recall_summary.json").write_text(json.dumps(summary, indent=1))
    return {"recall_curve": str(curve_path), "summary": str(out / "recall_summary.json"), **summary}


def stage_render(cfg: PipelineConfig, manifest_path, out, max_boxes: int = 20) -> dict:
    if manifest_path is None:
        raise ConfigError("rendering requires --manifest")
    manifest = load_manifest(manifest_path)
    out = Path(out)
    maps_dir = out / "maps"
    boxes_by_image = None
    if not maps_dir.exists():
        source = out / "scored.csv"
        if not source.exists():
            source = out / "proposals.csv"
        if not source.exists():
            raise DataError(f"nothing to render under {out}: no maps/, scored.csv, or proposals.csv")
        boxes_by_image = _read_ranked_boxes(source)
    written = []
    for record in manifest.for_split("test"):
        bundle = load_bundle(record)
        if boxes_by_image is None:
            map_path = maps_dir / f"{record.image_id}.png"
            if not map_path.exists():
                raise DataError(f"no probability map for {record.image_id!r} at {map_path}")
            composite = overlay_probability(bundle.rgb, load_probability_map(map_path))
        else:
            boxes = boxes_by_image.get(record.image_id, np.zeros((0, 4), dtype=np.int64))
            composite = overlay_boxes(bundle.rgb, boxes[:max_boxes])
        path = out / "renders" / f"{record.image_id}.png"
        save_image_rgb(composite, path)
        written.append(str(path))
    return {"renders": str(out / "renders"), "n_images": len(written)}
