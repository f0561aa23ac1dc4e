"""Hierarchical run configuration with full-size defaults and a desk-scale toy preset.

A config file is YAML mirroring the dataclass tree; any subset of keys may be
given. ``VCSE_CONFIG`` names a file to load when no explicit path is passed.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

CONFIG_ENV = "VCSE_CONFIG"


@dataclass
class ModelConfig:
    n_channels: int = 256  # latent dimension N, shared by every stream
    encoder_kernel: int = 40
    encoder_stride: int = 20
    tcn_bottleneck: int = 256
    tcn_hidden: int = 512
    tcn_kernel: int = 3
    tcn_repeats: int = 3
    tcn_blocks: int = 8
    resnet_layers: int = 18
    visual_stem_channels: int = 64
    visual_widths: tuple[int, ...] = (64, 128, 256, 512)
    visual_stem_stride: int = 2
    visual_norm: str = "batch"  # "group" avoids running-statistics drift on tiny batches
    context_blocks: int = 5
    context_kernel: int = 5
    n_mels: int = 80
    asr_subsample_channels: int = 256
    asr_layers: int = 6
    asr_heads: int = 4
    asr_ff: int = 1024
    asr_dropout: float = 0.1


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 4
    grad_clip: float = 5.0
    weight_decay: float = 0.0
    warmup_steps: int = 4000
    warmup_scale: float = 1.0
    stage_epochs: dict[int, int] = field(default_factory=lambda: {1: 30, 2: 50, 3: 30, 4: 30, 5: 20})
    max_asr_duration_s: float = 20.0
    # Initialise the AC extractor's encoder/decoder/TCN from the trained AV one (copy, not share).
    warm_start_ac: bool = True


@dataclass
class DataConfig:
    n_speakers: int = 4
    n_utterances: int = 96
    train: int = 200
    valid: int = 40
    test: int = 40
    snr_low: float = -5.0
    snr_high: float = 5.0
    duration_s: float = 3.0


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    device: str = "cpu"
    toy: bool = False


TOY_OVERRIDES: dict[str, Any] = {
    "model": {
        "tcn_bottleneck": 64,
        "tcn_hidden": 128,
        "tcn_repeats": 1,
        "tcn_blocks": 4,
        "resnet_layers": 4,
        "visual_stem_channels": 16,
        "visual_widths": (16,),
        "visual_stem_stride": 4,
        "visual_norm": "group",
        "asr_subsample_channels": 32,
        "asr_layers": 2,
        "asr_ff": 512,
    },
    "train": {"warmup_steps": 200, "warmup_scale": 0.5},
    "toy": True,
}


def _merge(obj, updates: dict[str, Any], path: str = ""):
    for key, value in updates.items():
        if not hasattr(obj, key):
            raise KeyError(f"unknown config key {path}{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _merge(current, value, f"{path}{key}.")
        else:
            if isinstance(current, tuple):
                value = tuple(value)
            elif isinstance(current, dict):
                value = {**current, **{type(next(iter(current)))(k): v for k, v in value.items()}}
            setattr(obj, key, value)
    return obj


def toy_config(**updates) -> Config:
    cfg = _merge(Config(), TOY_OVERRIDES)
    return _merge(cfg, updates)


def load_config(path: str | Path | None = None, *, toy: bool = False, overrides: dict | None = None) -> Config:
    """Build a config: defaults, then the toy preset, then the file, then explicit overrides."""
    cfg = Config()
    if toy:
        _merge(cfg, TOY_OVERRIDES)
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if data.get("toy") and not toy:
            _merge(cfg, TOY_OVERRIDES)
        _merge(cfg, data)
    if overrides:
        _merge(cfg, overrides)
    return cfg


def to_dict(cfg: Config) -> dict[str, Any]:
    return dataclasses.asdict(cfg)
