"""Run configuration: every tunable of the pipeline in one strict model.

Unknown keys are rejected and out-of-range values raise a configuration error
naming the offending field, so a typo in a config file fails fast instead of
silently running with defaults.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .forest import TreeParams
from .model import SamplingConfig


class ForestSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_trees: int = Field(200, ge=1)
    max_depth: Optional[int] = Field(20, ge=1)
    min_node: int = Field(5, ge=1)
    n_thresholds: int = Field(32, ge=1)
    mtry: Optional[int] = Field(None, ge=1)
    bootstrap: bool = True

    def tree_params(self) -> TreeParams:
        return TreeParams(
            max_depth=self.max_depth,
            min_node=self.min_node,
            n_thresholds=self.n_thresholds,
            mtry=self.mtry,
            bootstrap=self.bootstrap,
        )


class SamplingSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_positive: list[int] = Field(default=[17, 17, 17, 17])
    n_negative: list[int] = Field(default=[17, 17, 17, 17])


class SynthSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_images: int = Field(30, ge=1)
    width: int = Field(320, ge=64)
    height: int = Field(240, ge=64)
    train_fraction: float = Field(0.67, gt=0.0, le=1.0)
    min_obstacles: int = Field(2, ge=1)
    max_obstacles: int = Field(5, ge=1)
    n_shadows: int = Field(3, ge=0)
    n_clutter: int = Field(3, ge=0)
    noise: float = Field(0.004, ge=0.0, le=0.5)
    obstacle_scale: float = Field(0.05, gt=0.0, le=0.5)


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, ge=0)
    n_regions: int = Field(4, ge=1)
    stride_overlap: float = Field(0.65, gt=0.0, lt=1.0)
    multistride: bool = True
    min_window_area: float = Field(100.0, gt=0.0)
    nms_overlap: Optional[float] = Field(None, gt=0.0, le=1.0)
    max_proposals: int = Field(1000, ge=1)

    fusion: bool = True
    secondary_weight: float = Field(0.3, ge=0.0)
    gate_fraction: float = Field(0.5, gt=0.0, le=1.0)

    diversity_ratio: float = Field(0.2, ge=0.0, le=1.0)
    objectness_floor: float = Field(0.3, ge=0.0, le=1.0)
    # Reserved slack factor on realized window aspect ratios; parsed and
    # carried for config compatibility, not consumed by any stage yet.
    aspect_margin: float = Field(6.0, ge=1.0)

    edge_source: Literal["gradient", "precomputed"] = "gradient"

    prob_top_fraction: float = Field(0.5, gt=0.0, le=1.0)
    mask_threshold: float = Field(0.5, ge=0.0, le=1.0)

    sampling_primary: SamplingSection = Field(default_factory=SamplingSection)
    sampling_secondary: SamplingSection = Field(
        default_factory=lambda: SamplingSection(n_negative=[25, 25, 25, 25])
    )
    forest: ForestSection = Field(default_factory=ForestSection)
    synth: SynthSection = Field(default_factory=SynthSection)

    @model_validator(mode="after")
    def _quota_lengths(self) -> "PipelineConfig":
        for name in ("sampling_primary", "sampling_secondary"):
            section = getattr(self, name)
            for side in ("n_positive", "n_negative"):
                quotas = getattr(section, side)
                if len(quotas) != self.n_regions:
                    raise ValueError(
                        f"{name}.{side} lists {len(quotas)} quotas "
                        f"but n_regions is {self.n_regions}"
                    )
                if any(q < 0 for q in quotas):
                    raise ValueError(f"{name}.{side} entries must be >= 0")
        if self.synth.max_obstacles < self.synth.min_obstacles:
            raise ValueError("synth.max_obstacles must be >= synth.min_obstacles")
        return self

    def sampling(self, role: str) -> SamplingConfig:
        section = self.sampling_primary if role == "primary" else self.sampling_secondary
        return SamplingConfig(
            n_positive=tuple(section.n_positive),
            n_negative=tuple(section.n_negative),
            diversity_ratio=self.diversity_ratio,
            objectness_floor=self.objectness_floor,
        )

    def with_layers(self, k: int) -> "PipelineConfig":
        """Derived config truncated to the first k region layers."""
        if not 1 <= k <= self.n_regions:
            raise ConfigError(f"layers must be in 1..{self.n_regions}, got {k}")
        update = {
            "n_regions": k,
            "sampling_primary": SamplingSection(
                n_positive=self.sampling_primary.n_positive[:k],
                n_negative=self.sampling_primary.n_negative[:k],
            ),
            "sampling_secondary": SamplingSection(
                n_positive=self.sampling_secondary.n_positive[:k],
                n_negative=self.sampling_secondary.n_negative[:k],
            ),
        }
        return self.model_copy(update=update)

    def without_fusion(self) -> "PipelineConfig":
        """Primary-regressor-only ablation: no gate, no secondary term."""
        return self.model_copy(update={"fusion": False, "secondary_weight": 0.0, "gate_fraction": 1.0})

    def effective_gate_fraction(self) -> float:
        return self.gate_fraction if self.fusion else 1.0

    def effective_secondary_weight(self) -> float:
        return self.secondary_weight if self.fusion else 0.0


def parse_config(payload: dict) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(payload)
    except ValidationError as exc:
        issues = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}"
            for err in exc.errors()
        )
        raise ConfigError(f"invalid configuration: {issues}") from exc


def load_config(path=None) -> PipelineConfig:
    """Config from a JSON file, or all defaults when no path is given."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return parse_config(payload)
