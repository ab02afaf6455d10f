"""Shared fixtures: tiny deterministic scenes and annotation builders."""

import numpy as np
import pytest

from obstacle_discovery.config import PipelineConfig, SynthSection
from obstacle_discovery.geometry import Box
from obstacle_discovery.regions import ObstacleAnnotation, fit_regions
from obstacle_discovery.synth import generate_bundles

IMG_W, IMG_H = 160, 120


def make_annotations(boxes, width=IMG_W, height=IMG_H):
    return [
        ObstacleAnnotation(f"img_{i:03d}", Box(*b), width, height)
        for i, b in enumerate(boxes)
    ]


# A spread of near-large and far-small obstacles, enough for 3 clusters.
STOCK_BOXES = [
    (10, 90, 40, 25),
    (70, 85, 45, 30),
    (30, 95, 38, 22),
    (50, 60, 18, 12),
    (80, 55, 16, 11),
    (65, 62, 20, 13),
    (70, 30, 8, 6),
    (78, 28, 7, 5),
    (85, 32, 9, 6),
]


@pytest.fixture(scope="session")
def stock_annotations():
    return make_annotations(STOCK_BOXES)


@pytest.fixture(scope="session")
def stock_regions(stock_annotations):
    return fit_regions(stock_annotations, n_clusters=3, seed=0)


@pytest.fixture(scope="session")
def small_config():
    return PipelineConfig(
        seed=11,
        n_regions=3,
        max_proposals=400,
        sampling_primary={"n_positive": [8, 8, 8], "n_negative": [8, 8, 8]},
        sampling_secondary={"n_positive": [8, 8, 8], "n_negative": [10, 10, 10]},
        forest={"n_trees": 8, "max_depth": 8},
        synth=SynthSection(n_images=10, width=160, height=120, train_fraction=0.6),
    )


@pytest.fixture(scope="session")
def small_bundles(small_config):
    return generate_bundles(small_config, seed=11)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(2024)
