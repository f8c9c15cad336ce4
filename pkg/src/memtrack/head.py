"""Anchor-free head: classification, center-ness and (l, t, r, b) regression.

Also holds target encoding for training and score decoding for inference.
Boxes handled here live in the coordinate frame of the network input patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxes import BBox
from .nn import Conv2d, ConvReLU, Module
from .features import _rng
from .reader import SynthFeature
from .tensor import InvalidArgumentError, Tensor, exp, mul

CLS_PRIOR = 0.01


@dataclass
class HeadConfig:
    depth: int = 3
    width: int | None = None  # defaults to 2C
    stride: int = 8
    reg_prior: float | None = None  # initial distance in pixels; defaults to one stride


@dataclass
class HeadOutputs:
    cls: Tensor  # 1 x H x W logits
    ctr: Tensor  # 1 x H x W logits
    reg: Tensor  # 4 x H x W distances (l, t, r, b), positive

    def numpy(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.cls.data, self.ctr.data, self.reg.data


class HeadNet(Module):
    def __init__(self, in_channels: int, cfg: HeadConfig | None = None, seed: int = 0):
        cfg = cfg or HeadConfig()
        self.cfg = cfg
        width = cfg.width or in_channels
        self.in_channels = in_channels
        self.cls_tower = []
        self.reg_tower = []
        cin = in_channels
        for i in range(cfg.depth):
            self.cls_tower.append(ConvReLU(cin, width, 3, pad=1, rng=_rng(seed, f"head.cls.{i}")))
            self.reg_tower.append(ConvReLU(cin, width, 3, pad=1, rng=_rng(seed, f"head.reg.{i}")))
            cin = width
        self.cls_out = Conv2d(cin, 1, 1, rng=_rng(seed, "head.cls_out"), gain=0.1)
        self.ctr_out = Conv2d(cin, 1, 1, rng=_rng(seed, "head.ctr_out"), gain=0.1)
        self.reg_out = Conv2d(cin, 4, 1, rng=_rng(seed, "head.reg_out"), gain=0.1)
        self.cls_out.bias.data[:] = -math.log((1 - CLS_PRIOR) / CLS_PRIOR)
        if cfg.reg_prior:
            self.reg_out.bias.data[:] = math.log(cfg.reg_prior / cfg.stride)

    def __call__(self, y: SynthFeature | Tensor) -> HeadOutputs:
        x = y.data if isinstance(y, SynthFeature) else y
        if x.shape[0] != self.in_channels:
            raise InvalidArgumentError(f"head expects {self.in_channels} channels, got {x.shape[0]}")
        c = x
        for layer in self.cls_tower:
            c = layer(c)
        r = x
        for layer in self.reg_tower:
            r = layer(r)
        reg = mul(exp(self.reg_out(r)), float(self.cfg.stride))
        return HeadOutputs(self.cls_out(c), self.ctr_out(c), reg)


@dataclass(frozen=True)
class GridGeometry:
    """Maps score-grid cells to patch pixels: cell j is centered at ``offset + j * stride``.

    The default offset 0.5 is the center of patch pixel 0, which is where the
    receptive field of cell 0 is centered for stride-2, pad-k//2 convolutions.
    """

    stride: int
    size: int  # cells per side
    image_size: int  # patch side in pixels
    offset: float = 0.5

    @classmethod
    def for_patch(cls, patch_size: int, stride: int, grid_size: int, offset: float = 0.5) -> "GridGeometry":
        return cls(stride, grid_size, patch_size, offset)

    def centers(self) -> np.ndarray:
        return self.offset + self.stride * np.arange(self.size, dtype=np.float64)


class NoPositiveCellsError(ValueError):
    pass


@dataclass
class Targets:
    cls: np.ndarray  # 1 x H x W in {0, 1}
    ctr: np.ndarray  # 1 x H x W in [0, 1]
    reg: np.ndarray  # 4 x H x W

    @property
    def num_positive(self) -> int:
        return int(self.cls.sum())


def encode_targets(gt: BBox, grid: GridGeometry) -> Targets:
    if not gt.intersects(grid.image_size, grid.image_size):
        raise NoPositiveCellsError(f"box {gt} lies outside the {grid.image_size}px patch")
    c = grid.centers()
    xs, ys = c[None, :], c[:, None]
    l = np.broadcast_to(xs - gt.x, (grid.size, grid.size))
    r = np.broadcast_to(gt.x1 - xs, (grid.size, grid.size))
    t = np.broadcast_to(ys - gt.y, (grid.size, grid.size))
    b = np.broadcast_to(gt.y1 - ys, (grid.size, grid.size))
    pos = (l >= 0) & (r > 0) & (t >= 0) & (b > 0)
    reg = np.stack([l, t, r, b]) * pos
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_x = np.minimum(l, r) / np.maximum(l, r)
        ratio_y = np.minimum(t, b) / np.maximum(t, b)
        ctr = np.where(pos, np.sqrt(np.clip(ratio_x * ratio_y, 0, 1)), 0.0)
    return Targets(pos[None].astype(np.float64), ctr[None], reg)


@dataclass
class DecodeConfig:
    window_influence: float = 0.21
    penalty_k: float = 0.04
    lr: float = 0.5
    score_weighted_lr: bool = True

    @classmethod
    def off(cls) -> "DecodeConfig":
        """No window, no penalty, no size smoothing."""
        return cls(window_influence=0.0, penalty_k=0.0, lr=1.0, score_weighted_lr=False)


def cosine_window(size: int) -> np.ndarray:
    w = np.hanning(size)
    return np.outer(w, w)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _change(r):
    return np.maximum(r, 1.0 / r)


def _padded_size(w, h):
    pad = (w + h) * 0.5
    return np.sqrt((w + pad) * (h + pad))


def scale_ratio_penalty(w, h, prev: BBox, k: float):
    """``exp(-(ratio_change * scale_change - 1) * k)``; exactly 1 when size and aspect match ``prev``."""
    s_c = _change(_padded_size(w, h) / _padded_size(prev.w, prev.h))
    r_c = _change((prev.w / prev.h) / (w / h))
    return np.exp(-(r_c * s_c - 1.0) * k)


def decode(
    outputs: HeadOutputs,
    grid: GridGeometry,
    prev: BBox,
    window: np.ndarray | None = None,
    cfg: DecodeConfig | None = None,
) -> tuple[BBox, float]:
    """Pick the best cell and turn its distances into a box.

    Ties on the final score go to the smallest row-major cell index. If every
    raw score underflows to zero the previous box is returned with score 0.
    """
    cfg = cfg or DecodeConfig()
    cls_logit, ctr_logit, reg = (np.asarray(a, dtype=np.float64) for a in outputs.numpy())
    raw = (_sigmoid(cls_logit[0]) * _sigmoid(ctr_logit[0])).reshape(-1)
    if not np.any(raw > 0):
        return prev, 0.0

    c = grid.centers()
    cx = np.broadcast_to(c[None, :], reg.shape[1:]).reshape(-1)
    cy = np.broadcast_to(c[:, None], reg.shape[1:]).reshape(-1)
    l, t, r, b = (reg[i].reshape(-1) for i in range(4))
    x0, y0, x1, y1 = cx - l, cy - t, cx + r, cy + b
    w = np.maximum(x1 - x0, 1e-6)
    h = np.maximum(y1 - y0, 1e-6)

    if cfg.penalty_k > 0:
        penalty = scale_ratio_penalty(w, h, prev, cfg.penalty_k)
    else:
        penalty = np.ones_like(raw)
    score = raw * penalty
    if cfg.window_influence > 0:
        if window is None:
            window = cosine_window(grid.size)
        score = score * (1 - cfg.window_influence) + window.reshape(-1) * cfg.window_influence
    best = int(np.argmax(score))

    lr = cfg.lr * penalty[best] * raw[best] if cfg.score_weighted_lr else cfg.lr
    bw = prev.w * (1 - lr) + w[best] * lr
    bh = prev.h * (1 - lr) + h[best] * lr
    center_x = (x0[best] + x1[best]) / 2
    center_y = (y0[best] + y1[best]) / 2
    return BBox.from_center(center_x, center_y, bw, bh), float(raw[best])
