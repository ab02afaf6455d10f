"""Dataset manifests and the image/mask file formats they point at.

A manifest is a JSON file listing per-image records; all paths inside it are
relative to the manifest's directory, so a dataset directory can be moved
wholesale.  Mask palette: 0 = background, 1 = road, values >= 2 = obstacle
instance ids.  Road masks and obstacle masks live in separate files but share
that palette, so a combined labeling also loads correctly through both
loaders.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .geometry import as_box_array

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
OBSTACLE_ID_BASE = 2  # first instance id; 1 stays reserved for road


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    image_path: Path
    road_mask_path: Path
    boxes: np.ndarray  # (G, 4) int64 ground-truth obstacle boxes
    split: str = "train"
    obstacle_mask_path: Path | None = None


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.records)

    def for_split(self, split: str) -> list:
        """Records with the given split tag, or all records if none carry it."""
        tagged = [r for r in self.records if r.split == split]
        return tagged if tagged else list(self.records)

    def record(self, image_id: str) -> ImageRecord:
        for r in self.records:
            if r.image_id == image_id:
                return r
        raise DataError(f"manifest has no record for image id {image_id!r}")


def image_size(path) -> tuple:
    """(width, height) from the file header, without decoding pixels."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    with Image.open(path) as img:
        return img.size


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest; every referenced file must exist."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != MANIFEST_VERSION:
        raise DataError(
            f"manifest {path}: expected version {MANIFEST_VERSION}, "
            f"got {payload.get('version')!r}"
        )
    root = path.parent
    records = []
    seen_ids = set()
    try:
        raw_records = payload["records"]
    except KeyError as exc:
        raise DataError(f"manifest {path} has no 'records' list") from exc
    for i, raw in enumerate(raw_records):
        try:
            image_id = str(raw["image_id"])
            image_rel = raw["image"]
            road_rel = raw["road_mask"]
            raw_boxes = raw["boxes"]
            split = str(raw.get("split", "train"))
            obstacle_rel = raw.get("obstacle_mask")
        except (KeyError, TypeError) as exc:
            raise DataError(f"manifest {path}: record {i} is malformed: {exc}") from exc
        if image_id in seen_ids:
            raise DataError(f"manifest {path}: duplicate image id {image_id!r}")
        seen_ids.add(image_id)
        image_path = root / image_rel
        road_path = root / road_rel
        obstacle_path = root / obstacle_rel if obstacle_rel else None
        for p in (image_path, road_path, obstacle_path):
            if p is not None and not p.exists():
                raise DataError(f"manifest {path}: record {image_id!r} references missing file {p}")
        boxes = as_box_array(raw_boxes) if raw_boxes else np.zeros((0, 4), dtype=np.int64)
        if boxes.shape[0]:
            if boxes[:, 2].min() < 1 or boxes[:, 3].min() < 1:
                raise DataError(f"manifest {path}: record {image_id!r} has a degenerate box")
            width, height = image_size(image_path)
            if (
                boxes[:, 0].min() < 0
                or boxes[:, 1].min() < 0
                or (boxes[:, 0] + boxes[:, 2]).max() > width
                or (boxes[:, 1] + boxes[:, 3]).max() > height
            ):
                raise DataError(
                    f"manifest {path}: record {image_id!r} has a box outside the "
                    f"{width}x{height} image"
                )
        records.append(
            ImageRecord(
                image_id=image_id,
                image_path=image_path,
                road_mask_path=road_path,
                boxes=boxes,
                split=split,
                obstacle_mask_path=obstacle_path,
            )
        )
    return DatasetManifest(records=records, root=root)


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write records with paths relative to the manifest location."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = path.parent
    out = []
    for r in manifest.records:
        entry = {
            "image_id": r.image_id,
            "image": str(Path(r.image_path).relative_to(root)),
            "road_mask": str(Path(r.road_mask_path).relative_to(root)),
            "boxes": [[int(v) for v in row] for row in np.atleast_2d(r.boxes)] if len(r.boxes) else [],
            "split": r.split,
        }
        if r.obstacle_mask_path is not None:
            entry["obstacle_mask"] = str(Path(r.obstacle_mask_path).relative_to(root))
        out.append(entry)
    path.write_text(json.dumps({"version": MANIFEST_VERSION, "records": out}, indent=1))


def load_image_rgb(path) -> np.ndarray:
    """(H, W, 3) float64 in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image_rgb(image: np.ndarray, path) -> None:
    arr = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)


def load_road_mask(path) -> np.ndarray:
    """Boolean road membership; any nonzero pixel counts as road."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"road mask not found: {path}")
    with Image.open(path) as img:
        if img.mode not in ("L", "P", "1"):
            raise DataError(f"road mask {path}: expected 8-bit labels, got mode {img.mode}")
        arr = np.asarray(img.convert("L"))
    return arr > 0


def load_obstacle_labels(path) -> np.ndarray:
    """Integer instance-id map; pixels below the id base become 0."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"obstacle mask not found: {path}")
    with Image.open(path) as img:
        if img.mode not in ("L", "P", "1"):
            raise DataError(f"obstacle mask {path}: expected 8-bit labels, got mode {img.mode}")
        arr = np.asarray(img.convert("L"), dtype=np.int64)
    return np.where(arr >= OBSTACLE_ID_BASE, arr, 0)


def save_label_mask(labels: np.ndarray, path) -> None:
    arr = np.asarray(labels)
    if arr.min() < 0 or arr.max() > 255:
        raise DataError("label mask values must fit in 8 bits")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def labels_from_boxes(boxes, width: int, height: int) -> np.ndarray:
    """Rasterized fallback when a record ships boxes but no obstacle mask."""
    labels = np.zeros((height, width), dtype=np.int64)
    boxes = as_box_array(boxes)
    for i in range(boxes.shape[0]):
        x, y, w, h = (int(v) for v in boxes[i])
        labels[y : y + h, x : x + w] = OBSTACLE_ID_BASE + i
    return labels


@dataclass
class ImageBundle:
    """One record's pixels, fully loaded: the unit every stage operates on."""

    image_id: str
    rgb: np.ndarray  # (H, W, 3) float64
    road_mask: np.ndarray  # (H, W) bool
    obstacle_labels: np.ndarray  # (H, W) int64 instance ids, 0 = none
    boxes: np.ndarray  # (G, 4) int64

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def obstacle_mask(self) -> np.ndarray:
        return self.obstacle_labels > 0


def load_bundle(record: ImageRecord) -> ImageBundle:
    rgb = load_image_rgb(record.image_path)
    road = load_road_mask(record.road_mask_path)
    height, width = rgb.shape[:2]
    if road.shape != (height, width):
        raise DataError(
            f"record {record.image_id!r}: road mask {road.shape} does not match "
            f"image {(height, width)}"
        )
    if record.obstacle_mask_path is not None:
        labels = load_obstacle_labels(record.obstacle_mask_path)
        if labels.shape != (height, width):
            raise DataError(
                f"record {record.image_id!r}: obstacle mask {labels.shape} does not "
                f"match image {(height, width)}"
            )
    else:
        labels = labels_from_boxes(record.boxes, width, height)
    return ImageBundle(
        image_id=record.image_id,
        rgb=rgb,
        road_mask=road,
        obstacle_labels=labels,
        boxes=as_box_array(record.boxes) if len(record.boxes) else np.zeros((0, 4), dtype=np.int64),
    )
