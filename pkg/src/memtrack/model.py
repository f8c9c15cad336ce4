"""Full network: feature extractors, memory read, head."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import checkpoint
from .features import BackboneConfig, FeatureMap, FeatureNet
from .head import GridGeometry, HeadConfig, HeadNet, HeadOutputs
from .reader import read, stack_memory


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    head_depth: int = 3
    patch_size: int = 289
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        bb = BackboneConfig(**d.pop("backbone", {}))
        return cls(backbone=bb, **d)

    @property
    def grid_size(self) -> int:
        return self.backbone.grid_size(self.patch_size)

    @property
    def grid(self) -> GridGeometry:
        return GridGeometry.for_patch(self.patch_size, self.backbone.total_stride, self.grid_size)


class TrackerNet(FeatureNet):
    """Feature net plus head; head parameters live under ``head.*``."""

    def __init__(self, cfg: ModelConfig | None = None):
        cfg = cfg or ModelConfig()
        super().__init__(cfg.backbone, seed=cfg.seed)
        self.model_cfg = cfg
        # a target cropped with 4x context spans about a quarter of the patch
        head_cfg = HeadConfig(depth=cfg.head_depth, stride=cfg.backbone.total_stride, reg_prior=cfg.patch_size / 8)
        self.head = HeadNet(2 * cfg.backbone.reduced_channels, head_cfg, seed=cfg.seed)

    @property
    def grid(self) -> GridGeometry:
        return self.model_cfg.grid

    def forward_features(self, memory: Sequence[FeatureMap], query: FeatureMap) -> HeadOutputs:
        return self.head(read(stack_memory(memory), query))

    def forward(self, memory_frames, label_maps, query_frame) -> HeadOutputs:
        maps = label_maps if label_maps is not None else [None] * len(memory_frames)
        memory = [self.embed_memory(f, m, frame_index=i) for i, (f, m) in enumerate(zip(memory_frames, maps))]
        return self.forward_features(memory, self.embed_query(query_frame))

    __call__ = forward

    def save(self, path, meta=None) -> None:
        info = {"model": self.model_cfg.to_dict()}
        info.update(meta or {})
        checkpoint.save_arrays(path, self.state_dict(), info)


def load_model(path) -> tuple[TrackerNet, dict]:
    arrays, meta = checkpoint.load_arrays(path)
    cfg = ModelConfig.from_dict(meta["model"])
    model = TrackerNet(cfg)
    dtype = next(iter(arrays.values())).dtype if arrays else np.float32
    model.to_dtype(dtype)
    model.load_state_dict(arrays)
    return model, meta
