"""Pixel-level memory read.

Every query pixel attends over every pixel of every memory frame. The same
features serve as keys and values: similarity logits are
``memory (THW x C) @ query (C x HW)``, normalized per query column with a
softmax at temperature ``sqrt(C)``, and the readout ``memory^T @ weights``
is concatenated after the query features.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import FeatureMap
from .tensor import (
    InvalidArgumentError,
    Tensor,
    concat,
    concat_channels,
    matmul,
    reshape,
    softmax_columns,
    transpose,
)

DEFAULT_TILE = 512


@dataclass
class StackedMemory:
    data: Tensor  # THW x C
    frame_index: np.ndarray  # THW, source frame of each row
    frames: int
    height: int
    width: int

    @property
    def channels(self) -> int:
        return self.data.shape[1]


@dataclass
class SynthFeature:
    data: Tensor  # 2C x H x W: query features first, readout second

    @property
    def channels(self) -> int:
        return self.data.shape[0]


def stack_memory(features: Sequence[FeatureMap]) -> StackedMemory:
    """Row ``t*H*W + h*W + w`` holds frame t's C-vector at pixel (h, w)."""
    features = list(features)
    if not features:
        raise InvalidArgumentError("stack_memory needs at least one feature map")
    c, h, w = features[0].shape
    rows = []
    for f in features:
        if f.shape != (c, h, w):
            raise InvalidArgumentError(f"memory feature shape {f.shape} != {(c, h, w)}")
        rows.append(transpose(reshape(f.data, (c, h * w))))
    data = rows[0] if len(rows) == 1 else concat(rows, axis=0)
    frame_index = np.repeat([f.source_frame_index for f in features], h * w)
    return StackedMemory(data, frame_index, len(features), h, w)


def unstack_memory(memory: StackedMemory) -> list[np.ndarray]:
    t, h, w, c = memory.frames, memory.height, memory.width, memory.channels
    arr = memory.data.data.reshape(t, h, w, c)
    return [np.ascontiguousarray(arr[i].transpose(2, 0, 1)) for i in range(t)]


def _check(memory: StackedMemory, query: FeatureMap) -> tuple[int, int, int]:
    c, h, w = query.shape
    if memory.channels != c:
        raise InvalidArgumentError(f"memory channels {memory.channels} != query channels {c}")
    return c, h, w


def similarity(memory: StackedMemory, query: FeatureMap) -> Tensor:
    """Column-stochastic THW x HW weight matrix."""
    c, h, w = _check(memory, query)
    q = reshape(query.data, (c, h * w))
    return softmax_columns(matmul(memory.data, q), math.sqrt(c))


def read(memory: StackedMemory, query: FeatureMap) -> SynthFeature:
    c, h, w = _check(memory, query)
    weights = similarity(memory, query)
    readout = matmul(transpose(memory.data), weights)  # C x HW
    return SynthFeature(concat_channels(query.data, reshape(readout, (c, h, w))))


def read_blocked(memory: np.ndarray, query: np.ndarray, tile: int = DEFAULT_TILE) -> np.ndarray:
    """Tape-free read over query-column tiles; bounds the live THW x tile block.

    ``memory`` is THW x C, ``query`` is C x H x W. Returns 2C x H x W.
    """
    c, h, w = query.shape
    if memory.shape[1] != c:
        raise InvalidArgumentError(f"memory channels {memory.shape[1]} != query channels {c}")
    q = query.reshape(c, h * w)
    out = np.empty((c, h * w), dtype=np.result_type(memory, query))
    inv_s = 1.0 / math.sqrt(c)
    mem_t = np.ascontiguousarray(memory.T)
    for j in range(0, h * w, tile):
        logits = memory @ q[:, j : j + tile]
        logits *= inv_s
        logits -= logits.max(axis=0, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=0, keepdims=True)
        out[:, j : j + tile] = mem_t @ logits
    return np.concatenate([query, out.reshape(c, h, w)], axis=0)


def dump_similarity_column(memory: StackedMemory, query: FeatureMap, pixel: tuple[int, int], path) -> None:
    """Write one query pixel's weights as ``row_index,frame_index,weight`` CSV."""
    _, h, w = query.shape
    r, col = pixel
    if not (0 <= r < h and 0 <= col < w):
        raise InvalidArgumentError(f"pixel {pixel} outside {h}x{w}")
    weights = similarity(memory, query).data[:, r * w + col]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["row_index", "frame_index", "weight"])
        for i, (fi, wt) in enumerate(zip(memory.frame_index, weights)):
            out.writerow([i, int(fi), repr(float(wt))])
