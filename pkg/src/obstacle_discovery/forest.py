"""From-scratch regression forest on bootstrap resamples.

Plain CART variance reduction: every node tries ceil(sqrt(d)) randomly drawn
features, thresholds sit at midpoints of adjacent sorted unique values (capped
at 32, evenly subsampled beyond that), and leaves store the mean target of the
samples reaching them.  Trees are grown from per-tree seeds spawned off one
SeedSequence, so a forest is a pure function of (data, params, seed).

Trees live in flat parallel arrays; prediction routes whole batches level by
level instead of walking Python node objects.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DataError

MODEL_FORMAT = "regression-forest"
MODEL_VERSION = 1

DEFAULT_N_TREES = 200
PURITY_VARIANCE = 1e-9
LEAF = -1


@dataclass(frozen=True)
class TreeParams:
    """Growth limits; max_depth=None grows until purity or min_node."""

    max_depth: int | None = 20
    min_node: int = 5
    n_thresholds: int = 32
    mtry: int | None = None  # None means ceil(sqrt(n_features))
    bootstrap: bool = True

    def resolve_mtry(self, n_features: int) -> int:
        if self.mtry is not None:
            if not 1 <= self.mtry <= n_features:
                raise ConfigError(f"mtry must be in 1..{n_features}, got {self.mtry}")
            return self.mtry
        return int(np.ceil(np.sqrt(n_features)))


@dataclass
class Tree:
    """Flat node arrays; feature == LEAF marks leaves, value is the node mean."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        node = np.zeros(n, dtype=np.int64)
        while True:
            feat = self.feature[node]
            at_leaf = feat == LEAF
            if at_leaf.all():
                break
            safe = np.where(at_leaf, 0, feat)
            go_left = x[np.arange(n), safe] <= self.threshold[node]
            step = np.where(go_left, self.left[node], self.right[node])
            node = np.where(at_leaf, node, step)
        return self.value[node]

    def depth(self) -> int:
        depths = np.zeros(self.feature.shape[0], dtype=np.int64)
        for i in range(self.feature.shape[0]):
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max(initial=0))


def _best_split(x: np.ndarray, y: np.ndarray, features: np.ndarray, n_thresholds: int):
    """Minimum child SSE over the candidate features; None when nothing splits."""
    n = y.shape[0]
    total = y.sum()
    total_sq = (y * y).sum()
    best = None  # (sse, feature, threshold)
    for f in features:
        vals = x[:, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sy = y[order]
        boundary = np.flatnonzero(sv[:-1] < sv[1:])  # split after these positions
        if boundary.size == 0:
            continue
        if boundary.size > n_thresholds:
            pick = np.unique(
                np.round(np.linspace(0, boundary.size - 1, n_thresholds)).astype(np.int64)
            )
            boundary = boundary[pick]
        csum = np.cumsum(sy)
        csum_sq = np.cumsum(sy * sy)
        nl = boundary + 1
        nr = n - nl
        left_sum = csum[boundary]
        left_sq = csum_sq[boundary]
        sse = (
            left_sq
            - left_sum**2 / nl
            + (total_sq - left_sq)
            - (total - left_sum) ** 2 / nr
        )
        i = int(np.argmin(sse))
        if best is None or sse[i] < best[0] - 1e-15:
            lo = sv[boundary[i]]
            hi = sv[boundary[i] + 1]
            mid = lo + (hi - lo) / 2.0
            if not lo <= mid < hi:  # adjacent floats can collapse the midpoint
                mid = lo
            best = (float(sse[i]), int(f), float(mid))
    return best


def _grow_tree(x: np.ndarray, y: np.ndarray, params: TreeParams, rng: np.random.Generator) -> Tree:
    n, d = x.shape
    mtry = params.resolve_mtry(d)
    if params.bootstrap:
        sample = rng.integers(0, n, size=n)
        x, y = x[sample], y[sample]

    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(idx: np.ndarray) -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[idx].mean()))
        count.append(int(idx.shape[0]))
        return len(feature) - 1

    root_idx = np.arange(x.shape[0])
    stack = [(new_node(root_idx), root_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        if (
            idx.shape[0] < params.min_node
            or (params.max_depth is not None and depth >= params.max_depth)
            or ys.var() < PURITY_VARIANCE
        ):
            continue
        cand = rng.choice(d, size=mtry, replace=False)
        split = _best_split(x[idx], ys, cand, params.n_thresholds)
        if split is None:
            continue
        _, f, thr = split
        go_left = x[idx, f] <= thr
        left_idx, right_idx = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(left_idx)
        right[node] = new_node(right_idx)
        stack.append((right[node], right_idx, depth + 1))
        stack.append((left[node], left_idx, depth + 1))

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value),
        count=np.array(count, dtype=np.int64),
    )


@dataclass
class Forest:
    trees: list = field(default_factory=list)
    params: TreeParams = field(default_factory=TreeParams)
    seed: int = 0
    n_features: int = 0

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Mean of the per-tree leaf scores, one value per row of x."""
        if not self.trees:
            raise ContractError("forest has no trees; train or load it first")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise ContractError(
                f"forest expects {self.n_features} features, got {x.shape[1]}"
            )
        acc = np.zeros(x.shape[0])
        for tree in self.trees:
            acc += tree.predict(x)
        return acc / len(self.trees)

    def predict_one(self, v) -> float:
        return float(self.predict(np.asarray(v, dtype=np.float64)[None, :])[0])


def train_forest(
    samples: np.ndarray,
    targets: np.ndarray,
    n_trees: int = DEFAULT_N_TREES,
    params: TreeParams | None = None,
    seed: int = 0,
) -> Forest:
    """Fit n_trees regression trees on bootstrap resamples of (samples, targets)."""
    x = np.asarray(samples, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ConfigError("training needs a non-empty (N, d) sample matrix")
    if y.shape != (x.shape[0],):
        raise ConfigError(f"targets shape {y.shape} does not match {x.shape[0]} samples")
    if x.shape[0] < 2:
        raise ConfigError("training needs at least 2 samples")
    if y.min() < 0.0 or y.max() > 1.0:
        raise ConfigError("targets must lie in [0, 1]")
    if n_trees < 1:
        raise ConfigError(f"tree count must be >= 1, got {n_trees}")
    params = params or TreeParams()
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_trees)]
    trees = [_grow_tree(x, y, params, rng) for rng in rngs]
    return Forest(trees=trees, params=params, seed=int(seed), n_features=x.shape[1])


def forest_to_dict(forest: Forest) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "seed": forest.seed,
        "n_features": forest.n_features,
        "params": asdict(forest.params),
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "count": t.count.tolist(),
            }
            for t in forest.trees
        ],
    }


def forest_from_dict(payload: dict) -> Forest:
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise DataError(f"not a {MODEL_FORMAT} payload")
    if payload.get("version") != MODEL_VERSION:
        raise DataError(
            f"unsupported {MODEL_FORMAT} version {payload.get('version')!r}, "
            f"expected {MODEL_VERSION}"
        )
    try:
        params = TreeParams(**payload["params"])
        trees = []
        for t in payload["trees"]:
            tree = Tree(
                feature=np.array(t["feature"], dtype=np.int64),
                threshold=np.array(t["threshold"], dtype=np.float64),
                left=np.array(t["left"], dtype=np.int64),
                right=np.array(t["right"], dtype=np.int64),
                value=np.array(t["value"], dtype=np.float64),
                count=np.array(t["count"], dtype=np.int64),
            )
            sizes = {a.shape[0] for a in (tree.feature, tree.threshold, tree.left, tree.right, tree.value, tree.count)}
            if len(sizes) != 1 or tree.feature.shape[0] == 0:
                raise DataError("malformed tree node arrays")
            trees.append(tree)
        forest = Forest(
            trees=trees,
            params=params,
            seed=int(payload["seed"]),
            n_features=int(payload["n_features"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"truncated or malformed forest payload: {exc}") from exc
    if not forest.trees:
        raise DataError("forest payload contains no trees")
    return forest


def serialize(forest: Forest) -> bytes:
    return json.dumps(forest_to_dict(forest)).encode()


def deserialize(blob: bytes) -> Forest:
    if not blob:
        raise DataError("empty forest payload")
    try:
        payload = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise DataError(f"forest payload is not valid JSON: {exc}") from exc
    return forest_from_dict(payload)


def save_forest(forest: Forest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize(forest))


def load_forest(path) -> Forest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"forest file not found: {path}")
    return deserialize(path.read_bytes())
