"""Thresholds, noise settings and run configuration."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import MalformedInput


@dataclass(frozen=True)
class Thresholds:
    object_sat: float = 0.65
    object_unc: float = 0.35
    attribute_sat: float = 0.60
    attribute_unc: float = 0.35
    action_sat: float = 0.55
    action_unc: float = 0.35
    relation_sat: float = 0.60
    relation_unc: float = 0.35
    min_background_ratio: float = 0.10
    min_mask_area_ratio: float = 0.0
    detector_confidence: float = 0.30
    exclusion_overlap_iou: float = 0.5

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise MalformedInput(f"threshold {f.name}={v} outside [0, 1]")
        for sat, unc in (("object_sat", "object_unc"), ("attribute_sat", "attribute_unc"),
                         ("action_sat", "action_unc"), ("relation_sat", "relation_unc")):
            if getattr(self, sat) < getattr(self, unc):
                raise MalformedInput(f"{sat} must be >= {unc}")


@dataclass(frozen=True)
class NoiseConfig:
    """Error-injection rates for the synthetic world."""

    drop_object: float = 0.0
    count_delta: float = 0.0
    attribute_flip: float = 0.0
    relation_violate: float = 0.0
    scene_flip: float = 0.0
    text_miss: float = 0.0
    edit_success: float = 1.0
    confidence_noise: float = 0.0
    distractor_rate: float = 0.0
    region_noise: float = 0.0
    # share of each error draw keyed to the prompt wording instead of the seed
    prompt_bias: float = 0.5
    auditor_error: float = 0.0

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise MalformedInput(f"noise rate {f.name}={v} outside [0, 1]")


ABLATION_NOISE = NoiseConfig(
    drop_object=0.15, count_delta=0.25, attribute_flip=0.25, relation_violate=0.20, edit_success=0.8,
)

MODES = ("synthetic", "scripted", "live")


@dataclass(frozen=True)
class EndpointConfig:
    mllm_url: str | None = None
    api_key: str | None = None
    model: str = "Qwen/Qwen3-VL-32B-Instruct"
    temperature: float = 0.0
    seed: int = 42
    timeout: float = 120.0
    image_service_url: str | None = None


@dataclass(frozen=True)
class RunConfig:
    budget: int = 32
    seed: int = 42
    mode: str = "synthetic"
    out_dir: str | None = None
    rewrites: int = 8
    workers: int = 1
    larger_depth_is_nearer: bool = True
    thresholds: Thresholds = field(default_factory=Thresholds)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    script_path: str | None = None

    def validate(self) -> None:
        if self.budget < 1:
            raise MalformedInput("budget must be >= 1")
        if self.mode not in MODES:
            raise MalformedInput(f"mode must be one of {MODES}")
        self.thresholds.validate()
        self.noise.validate()

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["endpoint"].pop("api_key", None)
        return doc


def _sub(cls, data: Mapping[str, Any] | None):
    if not data:
        return cls()
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise MalformedInput(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def load_config(path: str | os.PathLike | None = None, **overrides: Any) -> RunConfig:
    """Read a JSON or YAML config; None keyword overrides are ignored.

    PREDGUIDE_ENDPOINT and PREDGUIDE_API_KEY override the MLLM endpoint.
    """
    data: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        try:
            data = yaml.safe_load(text) if str(path).endswith((".yaml", ".yml")) else json.loads(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise MalformedInput(f"config {path}: {exc}") from exc
        data = data or {}
    data = dict(data)
    thresholds = _sub(Thresholds, data.pop("thresholds", None))
    noise = _sub(NoiseConfig, data.pop("noise", None))
    endpoint = _sub(EndpointConfig, data.pop("endpoint", None))
    env_url = os.environ.get("PREDGUIDE_ENDPOINT")
    env_key = os.environ.get("PREDGUIDE_API_KEY")
    if env_url:
        endpoint = replace(endpoint, mllm_url=env_url)
    if env_key:
        endpoint = replace(endpoint, api_key=env_key)
    cfg = _sub(RunConfig, data)
    cfg = replace(cfg, thresholds=thresholds, noise=noise, endpoint=endpoint)
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg
