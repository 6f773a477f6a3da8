"""Run configuration: one JSON file, overridable from the command line."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .context_vit import STREAMS, ViTConfig
from .motion_cae import CAEConfig
from .objectives import ScoreWeights
from .training import TrainConfig

ABLATION_ROWS = {
    "none": (),
    "masked": ("masked",),
    "masked+whole": ("masked", "whole"),
    "all": ("masked", "whole", "partial"),
}


@dataclass
class DataConfig:
    n_train_videos: int = 70
    n_test_videos: int = 30
    n_frames: int = 32
    n_sprites: int = 3
    anomaly_rate: float = 0.2
    flow_mode: str = "ground_truth"


@dataclass
class ModelConfig:
    dim: int = 128
    encoder_depth: int = 4
    decoder_depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    streams: tuple[str, ...] = STREAMS
    motion: bool = True
    cae_channels: tuple[int, int, int] = (32, 64, 128)
    cae_latent: int = 256

    def __post_init__(self):
        self.streams = tuple(self.streams)
        self.cae_channels = tuple(self.cae_channels)
        bad = set(self.streams) - set(STREAMS)
        if bad:
            raise ValueError(f"unknown streams {sorted(bad)}")


@dataclass
class EvalConfig:
    lambda_a: float = 2.0
    lambda_o: float = 1.0
    mask_draws: int = 1
    aggregate: str = "max"
    normalize: bool = True
    plots: bool = False
    n_error_maps: int = 8

    def __post_init__(self):
        if self.aggregate not in ("max", "mean"):
            raise ValueError("aggregate must be 'max' or 'mean'")
        if self.mask_draws < 1:
            raise ValueError("mask_draws must be >= 1")


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation_seeds: int = 3

    def vit_config(self) -> ViTConfig:
        m = self.model
        return ViTConfig(dim=m.dim, encoder_depth=m.encoder_depth, decoder_depth=m.decoder_depth,
                         heads=m.heads, mlp_ratio=m.mlp_ratio, mask_ratio=self.train.masking_ratio,
                         streams=m.streams)

    def cae_config(self) -> CAEConfig:
        return CAEConfig(channels=self.model.cae_channels, latent_dim=self.model.cae_latent)

    def weights(self) -> ScoreWeights:
        return ScoreWeights(self.eval.lambda_a, self.eval.lambda_o)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _build(cls, data: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if name in known else None
        if is_dataclass(default) and isinstance(value, dict):
            value = _build(type(default), value)
        kwargs[name] = value
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    return from_dict(json.loads(Path(path).read_text()))
