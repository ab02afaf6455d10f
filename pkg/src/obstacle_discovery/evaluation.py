"""Pixel-level ROC over probability maps and instance-level recall metrics.

Pixel tallies aggregate globally across the dataset before rates are formed;
instance recall matches ranked proposals to ground-truth boxes greedily and
one-to-one.  Both metrics depend only on score order, never on magnitudes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import as_box_array, iou_matrix

N_ROC_THRESHOLDS = 100
ROC_THRESHOLDS = (np.arange(N_ROC_THRESHOLDS) + 0.5) / N_ROC_THRESHOLDS
AR_IOU_GRID = np.linspace(0.5, 1.0, 11)


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def tpr_at_fpr(self, max_fpr: float) -> float:
        """Best TPR among operating points with FPR at or below the budget."""
        ok = self.fpr <= max_fpr
        return float(self.tpr[ok].max()) if ok.any() else 0.0

    def save_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "fpr", "tpr"])
            for t, f, r in zip(self.thresholds, self.fpr, self.tpr):
                writer.writerow([f"{t:.9g}", f"{f:.9g}", f"{r:.9g}"])

    @classmethod
    def load_csv(cls, path) -> "RocCurve":
        path = Path(path)
        if not path.exists():
            raise DataError(f"ROC file not found: {path}")
        rows = []
        with path.open() as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["threshold", "fpr", "tpr"]:
                raise DataError(f"ROC file {path}: unexpected header {header}")
            rows = [[float(v) for v in row] for row in reader]
        arr = np.array(rows, dtype=np.float64).reshape(-1, 3)
        return cls(thresholds=arr[:, 0], fpr=arr[:, 1], tpr=arr[:, 2])


def _count_above(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """For each threshold, how many values lie strictly above it."""
    pos = np.searchsorted(thresholds, values.ravel(), side="left")
    tally = np.bincount(pos, minlength=thresholds.size + 1)
    below_or_at = np.cumsum(tally[:-1])
    return values.size - below_or_at


def pixel_roc(maps, road_masks, obstacle_masks, thresholds=None) -> RocCurve:
    """Globally aggregated pixel ROC over per-image probability maps.

    TPR = obstacle pixels above threshold / all obstacle pixels; FPR likewise
    over road-only pixels.  Pixels in neither mask are ignored.
    """
    thresholds = ROC_THRESHOLDS if thresholds is None else np.asarray(thresholds)
    tp = np.zeros(thresholds.size, dtype=np.int64)
    fp = np.zeros(thresholds.size, dtype=np.int64)
    gt_obstacle = 0
    gt_road = 0
    for pmap, road, obstacle in zip(maps, road_masks, obstacle_masks):
        values = pmap.values if hasattr(pmap, "values") else np.asarray(pmap)
        road = np.asarray(road, dtype=bool)
        obstacle = np.asarray(obstacle, dtype=bool)
        if road.shape != values.shape or obstacle.shape != values.shape:
            raise DataError(
                f"mask shapes {road.shape}/{obstacle.shape} do not match map {values.shape}"
            )
        road_only = road & ~obstacle
        gt_obstacle += int(obstacle.sum())
        gt_road += int(road_only.sum())
        if obstacle.any():
            tp += _count_above(values[obstacle], thresholds)
        if road_only.any():
            fp += _count_above(values[road_only], thresholds)
    if gt_obstacle == 0:
        raise DataError("pixel ROC undefined: no ground-truth obstacle pixels")
    if gt_road == 0:
        raise DataError("pixel ROC undefined: no ground-truth road pixels")
    return RocCurve(
        thresholds=thresholds.copy(),
        fpr=fp / gt_road,
        tpr=tp / gt_obstacle,
    )


def _match_count(proposals: np.ndarray, gt: np.ndarray, iou_threshold: float, top_n) -> int:
    """Greedy one-to-one matches between ranked proposals and GT boxes."""
    if gt.shape[0] == 0 or proposals.shape[0] == 0:
        return 0
    head = proposals if top_n is None else proposals[:top_n]
    overlap = iou_matrix(head, gt)
    taken = np.zeros(gt.shape[0], dtype=bool)
    matched = 0
    for i in range(head.shape[0]):
        row = np.where(taken, -1.0, overlap[i])
        j = int(np.argmax(row))
        if row[j] >= iou_threshold:
            taken[j] = True
            matched += 1
            if matched == gt.shape[0]:
                break
    return matched


def instance_recall(proposals_per_image, gt_per_image, iou_threshold: float, top_n=None) -> float:
    """Fraction of all GT boxes matched by a top-n proposal at the given IoU."""
    total_gt = 0
    total_matched = 0
    for props, gt in zip(proposals_per_image, gt_per_image):
        gt = as_box_array(gt)
        props = as_box_array(props)
        total_gt += gt.shape[0]
        total_matched += _match_count(props, gt, iou_threshold, top_n)
    if total_gt == 0:
        raise DataError("instance recall undefined: no ground-truth boxes")
    return total_matched / total_gt


def average_recall(proposals_per_image, gt_per_image, top_n=None, iou_grid=None) -> float:
    """Mean instance recall over the 11-point IoU grid from 0.5 to 1.0."""
    grid = AR_IOU_GRID if iou_grid is None else np.asarray(iou_grid)
    values = [instance_recall(proposals_per_image, gt_per_image, float(t), top_n) for t in grid]
    return float(np.mean(values))


def recall_curve(proposals_per_image, gt_per_image, top_ns, iou_threshold: float = 0.5):
    """(top_n, recall) pairs for a sweep of proposal budgets."""
    return [
        (int(n), instance_recall(proposals_per_image, gt_per_image, iou_threshold, int(n)))
        for n in top_ns
    ]


def write_recall_csv(path, rows) -> None:
    """Two-column curve file: the swept quantity and the recall it achieves."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_or_iou", "recall"])
        for key, value in rows:
            writer.writerow([f"{key:.9g}" if isinstance(key, float) else key, f"{value:.9g}"])
