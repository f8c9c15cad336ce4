"""Memory and query feature extractors.

Memory branch: ``h_m(phi_m_rest(relu(phi_m_0(frame) + g(label_map))))``.
Query branch:  ``h_q(phi_q(frame))``.

The label-map embedder ``g`` has the same kernel and stride as the first
backbone layer so both land on the same grid before the addition.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .nn import Conv2d, ConvReLU, Module
from .tensor import InvalidArgumentError, Tensor, relu


@dataclass
class BackboneConfig:
    widths: tuple[int, ...] = (16, 32, 64, 64)
    strides: tuple[int, ...] = (2, 2, 1, 2)
    reduced_channels: int = 32
    share_backbone: bool = False
    share_reducer: bool = False
    use_label_map: bool = True
    mirror_init: bool = True  # unshared memory/query branches start from identical weights
    kernel: int = 3

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.widths) != len(self.strides) or not self.widths:
            raise InvalidArgumentError("widths and strides must be non-empty and equally long")
        if self.reduced_channels < 1:
            raise InvalidArgumentError(f"reduced_channels must be >= 1, got {self.reduced_channels}")
        ts = self.total_stride
        if ts & (ts - 1):
            raise InvalidArgumentError(f"total stride must be a power of two, got {ts}")

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.strides))

    def grid_size(self, input_size: int) -> int:
        """Output side for a square input: ``ceil(input / total_stride)`` with pad = k // 2."""
        n = input_size
        for s in self.strides:
            n = (n + 2 * (self.kernel // 2) - self.kernel) // s + 1
        return n


def _rng(seed: int, name: str) -> np.random.Generator:
    # one stream per sub-network so toggling one part never reshuffles another's init
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, seed: int, name: str):
        pad = cfg.kernel // 2
        cin = 3
        self.layers = []
        for i, (w, s) in enumerate(zip(cfg.widths, cfg.strides)):
            self.layers.append(ConvReLU(cin, w, cfg.kernel, stride=s, pad=pad, rng=_rng(seed, f"{name}.{i}")))
            cin = w
        self.out_channels = cin

    @property
    def first(self) -> ConvReLU:
        return self.layers[0]

    def rest(self, x: Tensor) -> Tensor:
        for layer in self.layers[1:]:
            x = layer(x)
        return x

    def __call__(self, x: Tensor) -> Tensor:
        return self.rest(self.first(x))


@dataclass
class FeatureMap:
    data: Tensor
    source_frame_index: int = 0
    geometry: Any = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


class FeatureNet(Module):
    """Parameters are exposed as ``phi_m.*``, ``phi_q.*``, ``g.*``, ``h_m.*``, ``h_q.*``.

    With ``share_backbone`` the query backbone *is* the memory backbone
    object, so it is reported only under ``phi_m``. ``h_m``/``h_q`` stay
    separate unless ``share_reducer`` is also set.
    """

    def __init__(self, cfg: BackboneConfig | None = None, seed: int = 0):
        cfg = cfg or BackboneConfig()
        self.cfg = cfg
        # mirrored branches are separate parameters drawn from the same stream,
        # so memory and query embeddings start out comparable
        tag_m, tag_q = ("phi", "phi") if cfg.mirror_init else ("phi_m", "phi_q")
        self.phi_m = Backbone(cfg, seed, tag_m)
        self.phi_q = self.phi_m if cfg.share_backbone else Backbone(cfg, seed, tag_q)
        first = self.phi_m.first
        self.g = (
            Conv2d(1, cfg.widths[0], cfg.kernel, stride=first.stride, pad=first.pad, bias=False, rng=_rng(seed, "g"))
            if cfg.use_label_map
            else None
        )
        c_in, c = self.phi_m.out_channels, cfg.reduced_channels
        tag_m, tag_q = ("h", "h") if cfg.mirror_init else ("h_m", "h_q")
        self.h_m = ConvReLU(c_in, c, 1, rng=_rng(seed, tag_m))
        self.h_q = self.h_m if cfg.share_reducer else ConvReLU(c_in, c, 1, rng=_rng(seed, tag_q))

    @property
    def channels(self) -> int:
        return self.cfg.reduced_channels

    def embed_memory(self, frame, label_map=None, frame_index: int = 0, geometry=None) -> FeatureMap:
        frame = _normalize(_as_image(frame, 3, "frame"))
        pre = self.phi_m.first.linear(frame)
        if self.g is not None:
            if label_map is None:
                raise InvalidArgumentError("label map required when use_label_map is on")
            label_map = _as_image(label_map, 1, "label_map")
            if label_map.shape[1:] != frame.shape[1:]:
                raise InvalidArgumentError(
                    f"label map spatial shape {label_map.shape[1:]} != frame spatial shape {frame.shape[1:]}"
                )
            pre = pre + self.g(label_map)
        x = self.phi_m.rest(relu(pre))
        return FeatureMap(self.h_m(x), frame_index, geometry)

    def embed_query(self, frame, frame_index: int = 0, geometry=None) -> FeatureMap:
        frame = _normalize(_as_image(frame, 3, "frame"))
        return FeatureMap(self.h_q(self.phi_q(frame)), frame_index, geometry)

    def output_shape(self, input_size: int) -> tuple[int, int, int]:
        n = self.cfg.grid_size(input_size)
        return (self.channels, n, n)


def _as_image(x, channels: int, name: str) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.data.ndim != 3 or t.shape[0] != channels:
        raise InvalidArgumentError(f"{name} must be {channels}xHxW, got shape {t.shape}")
    return t


def _normalize(frame: Tensor) -> Tensor:
    # [0, 1] pixels -> roughly zero-mean, unit-range
    return (frame - 0.5) * 4.0


def count_parameters(modules: Sequence[Module]) -> int:
    seen: set[int] = set()
    total = 0
    for m in modules:
        for p in m.parameters():
            if id(p) not in seen:
                seen.add(id(p))
                total += p.size
    return total
