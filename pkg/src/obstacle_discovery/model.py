"""Training-sample selection, the two-forest model, and score fusion.

The primary forest regresses obstacle-vs-road dissimilarity and drives the
gate; the secondary forest regresses obstacle-vs-background dissimilarity and
only tops up proposals the gate lets through:

    score = primary + secondary_weight * secondary   if primary > gate
            0                                        otherwise

with the gate set per image at the primary score of rank ceil(gate_fraction *
M) in descending order.  Training samples are drawn per vertical range;
positives are the highest-IoU boxes regardless of category, negatives are
category-filtered low-IoU boxes with a quota of high-objectness ones to keep
the pool diverse.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .forest import Forest, forest_from_dict, forest_to_dict
from .geometry import as_box_array, iou_matrix
from .proposals import Category, ProposalSet, rank_order
from .regions import MLRegionSet, VerticalRanges

log = logging.getLogger(__name__)

MODEL_FORMAT = "obstacle-model"
MODEL_VERSION = 1

NEGATIVE_IOU_CEILING = 0.5
DIVERSITY_ATTEMPTS = 100

PRIMARY = "primary"
SECONDARY = "secondary"
NEGATIVE_CATEGORIES = {
    PRIMARY: (Category.ROAD, Category.OBSTACLE),
    SECONDARY: (Category.BACKGROUND, Category.OBSTACLE),
}


@dataclass(frozen=True)
class SamplingConfig:
    """Per-range sample quotas plus the negative-diversity constraint."""

    n_positive: tuple
    n_negative: tuple
    diversity_ratio: float = 0.2  # fraction of negatives that must clear the floor
    objectness_floor: float = 0.3

    def __post_init__(self):
        if len(self.n_positive) != len(self.n_negative):
            raise ConfigError("positive and negative quota lists differ in length")
        if any(n < 0 for n in self.n_positive) or any(n < 0 for n in self.n_negative):
            raise ConfigError("sample quotas must be >= 0")
        for name in ("diversity_ratio", "objectness_floor"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")

    @property
    def n_ranges(self) -> int:
        return len(self.n_positive)


def partition_by_vertical_range(pset: ProposalSet, ranges: VerticalRanges) -> list:
    """Index arrays per range, assigned by each box's bottom row."""
    if len(pset) == 0:
        return [np.zeros(0, dtype=np.int64) for _ in range(ranges.k)]
    bottoms = pset.boxes[:, 1] + pset.boxes[:, 3]
    assigned = ranges.range_of(bottoms)
    return [np.flatnonzero(assigned == k) for k in range(1, ranges.k + 1)]


def _draw_negatives(eligible, high_mask, quota, cfg, rng):
    """Random quota-sized subset meeting the diversity constraint when possible."""
    if eligible.size <= quota:
        return eligible.copy()
    need_high = int(np.ceil(cfg.diversity_ratio * quota))
    need_high = min(need_high, int(high_mask.sum()))
    for _ in range(DIVERSITY_ATTEMPTS):
        pick = rng.choice(eligible.size, size=quota, replace=False)
        if high_mask[pick].sum() >= need_high:
            return eligible[pick]
    # Forced composition: guarantee the high-objectness quota, fill the rest.
    high_pool = np.flatnonzero(high_mask)
    low_pool = np.flatnonzero(~high_mask)
    take_high = rng.choice(high_pool, size=need_high, replace=False)
    take_low = rng.choice(low_pool, size=quota - need_high, replace=False)
    return eligible[np.sort(np.concatenate([take_high, take_low]))]


def select_training_rows(
    pset: ProposalSet,
    gt_boxes,
    ranges: VerticalRanges,
    role: str,
    cfg: SamplingConfig,
    rng: np.random.Generator,
):
    """Pick training rows and IoU targets for one image and one regressor role.

    Returns (indices into pset, targets).  Positives per range are the
    highest-IoU boxes; negatives are drawn from the role's category pool with
    max IoU below the ceiling, positives excluded.
    """
    if role not in NEGATIVE_CATEGORIES:
        raise ConfigError(f"unknown regressor role {role!r}")
    if pset.category is None:
        raise ContractError("proposals must be labeled before sample selection")
    if cfg.n_ranges != ranges.k:
        raise ConfigError(
            f"sampling quotas cover {cfg.n_ranges} ranges but the region set has {ranges.k}"
        )
    gt = as_box_array(gt_boxes)
    if gt.shape[0] == 0:
        raise DataError("image has no ground-truth boxes")
    if len(pset) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)

    overlap = iou_matrix(pset.boxes, gt).max(axis=1)
    negative_ok = np.isin(pset.category, NEGATIVE_CATEGORIES[role])

    chosen, targets = [], []
    for k, members in enumerate(partition_by_vertical_range(pset, ranges)):
        if members.size == 0:
            continue
        member_iou = overlap[members]
        order = np.argsort(-member_iou, kind="stable")
        positives = members[order[: min(cfg.n_positive[k], members.size)]]

        eligible_mask = negative_ok[members] & (member_iou < NEGATIVE_IOU_CEILING)
        eligible = members[eligible_mask]
        eligible = eligible[~np.isin(eligible, positives)]
        high_mask = pset.objectness[eligible] > cfg.objectness_floor
        negatives = _draw_negatives(eligible, high_mask, cfg.n_negative[k], cfg, rng)
        if negatives.size < cfg.n_negative[k]:
            log.debug(
                "range %d: only %d of %d negatives available",
                k + 1,
                negatives.size,
                cfg.n_negative[k],
            )
        picked = np.concatenate([positives, negatives])
        chosen.append(picked)
        targets.append(overlap[picked])
    if not chosen:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    return np.concatenate(chosen), np.concatenate(targets)


def gate_threshold(primary_scores, gate_fraction: float) -> float:
    """Primary score at descending rank ceil(gate_fraction * M).

    The fusion gate is strictly greater-than, so just under the top
    gate_fraction of proposals pass; gate_fraction=1 keeps everything above
    the per-image minimum.
    """
    scores = np.asarray(primary_scores, dtype=np.float64)
    if scores.size == 0:
        raise ConfigError("gate threshold needs at least one score")
    if not 0.0 < gate_fraction <= 1.0:
        raise ConfigError(f"gate fraction must be in (0, 1], got {gate_fraction}")
    rank = int(np.ceil(gate_fraction * scores.size))
    rank = min(max(rank, 1), scores.size)
    return float(np.sort(scores)[scores.size - rank])


def fuse(primary, secondary, secondary_weight: float, gate: float):
    """Gated sum: primary + weight * secondary where primary > gate, else 0."""
    primary = np.asarray(primary, dtype=np.float64)
    secondary = np.asarray(secondary, dtype=np.float64)
    fused = np.where(primary > gate, primary + secondary_weight * secondary, 0.0)
    return float(fused) if fused.ndim == 0 else fused


@dataclass
class TrainedModel:
    primary: Forest
    secondary: Forest
    regions: MLRegionSet
    sampling_primary: SamplingConfig
    sampling_secondary: SamplingConfig
    secondary_weight: float = 0.3
    gate_fraction: float = 0.5

    def __post_init__(self):
        if self.secondary_weight < 0:
            raise ConfigError(f"secondary weight must be >= 0, got {self.secondary_weight}")
        if not 0.0 < self.gate_fraction <= 1.0:
            raise ConfigError(f"gate fraction must be in (0, 1], got {self.gate_fraction}")


@dataclass
class ScoredProposals:
    """Proposals of one image after fusion, sorted by final score descending."""

    boxes: np.ndarray
    objectness: np.ndarray
    layer: np.ndarray
    primary: np.ndarray
    secondary: np.ndarray
    score: np.ndarray
    gate: float

    def __len__(self) -> int:
        return self.boxes.shape[0]


def score_proposals(model: TrainedModel, pset: ProposalSet, features: np.ndarray) -> ScoredProposals:
    """Run both forests, gate on the per-image quantile, fuse, and re-rank."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != len(pset):
        raise ContractError(
            f"feature matrix has {features.shape[0]} rows for {len(pset)} proposals"
        )
    if len(pset) == 0:
        empty = np.zeros(0)
        return ScoredProposals(pset.boxes, pset.objectness, pset.layer, empty, empty, empty, 0.0)
    primary = model.primary.predict(features)
    secondary = model.secondary.predict(features)
    gate = gate_threshold(primary, model.gate_fraction)
    fused = fuse(primary, secondary, model.secondary_weight, gate)
    order = rank_order(pset.boxes, fused)
    return ScoredProposals(
        boxes=pset.boxes[order],
        objectness=pset.objectness[order],
        layer=pset.layer[order],
        primary=primary[order],
        secondary=secondary[order],
        score=fused[order],
        gate=gate,
    )


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "fusion": {
            "secondary_weight": model.secondary_weight,
            "gate_fraction": model.gate_fraction,
        },
        "sampling": {
            PRIMARY: {
                "n_positive": list(model.sampling_primary.n_positive),
                "n_negative": list(model.sampling_primary.n_negative),
                "diversity_ratio": model.sampling_primary.diversity_ratio,
                "objectness_floor": model.sampling_primary.objectness_floor,
            },
            SECONDARY: {
                "n_positive": list(model.sampling_secondary.n_positive),
                "n_negative": list(model.sampling_secondary.n_negative),
                "diversity_ratio": model.sampling_secondary.diversity_ratio,
                "objectness_floor": model.sampling_secondary.objectness_floor,
            },
        },
        PRIMARY: forest_to_dict(model.primary),
        SECONDARY: forest_to_dict(model.secondary),
        "regions": model.regions.to_json(),
    }


def _sampling_from_dict(payload: dict) -> SamplingConfig:
    return SamplingConfig(
        n_positive=tuple(payload["n_positive"]),
        n_negative=tuple(payload["n_negative"]),
        diversity_ratio=float(payload["diversity_ratio"]),
        objectness_floor=float(payload["objectness_floor"]),
    )


def model_from_dict(payload: dict) -> TrainedModel:
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise DataError(f"not an {MODEL_FORMAT} payload")
    if payload.get("version") != MODEL_VERSION:
        raise DataError(
            f"unsupported {MODEL_FORMAT} version {payload.get('version')!r}, "
            f"expected {MODEL_VERSION}"
        )
    try:
        return TrainedModel(
            primary=forest_from_dict(payload[PRIMARY]),
            secondary=forest_from_dict(payload[SECONDARY]),
            regions=MLRegionSet.from_json(payload["regions"]),
            sampling_primary=_sampling_from_dict(payload["sampling"][PRIMARY]),
            sampling_secondary=_sampling_from_dict(payload["sampling"][SECONDARY]),
            secondary_weight=float(payload["fusion"]["secondary_weight"]),
            gate_fraction=float(payload["fusion"]["gate_fraction"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"truncated or malformed model payload: {exc}") from exc


def save_model(model: TrainedModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> TrainedModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(payload)


SCORED_CSV_HEADER = [
    "image_id", "x", "y", "w", "h", "objectness", "primary", "secondary", "score",
]


def write_scored_csv(path, image_ids, scored_sets) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORED_CSV_HEADER)
        for image_id, s in zip(image_ids, scored_sets):
            for i in range(len(s)):
                x, y, w, h = (int(v) for v in s.boxes[i])
                writer.writerow(
                    [
                        image_id, x, y, w, h,
                        f"{s.objectness[i]:.9g}",
                        f"{s.primary[i]:.9g}",
                        f"{s.secondary[i]:.9g}",
                        f"{s.score[i]:.9g}",
                    ]
                )
