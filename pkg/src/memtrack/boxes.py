"""Axis-aligned boxes in continuous pixel coordinates.

Pixel ``(row r, col c)`` covers ``[c, c+1) x [r, r+1)``; its center is
``(c + 0.5, r + 0.5)``. Boxes are ``(x, y, w, h)`` with a top-left corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box needs positive width and height, got w={self.w}, h={self.h}")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "BBox":
        return cls(x0, y0, x1 - x0, y1 - y0)

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def x1(self) -> float:
        return self.x + self.w

    @property
    def y1(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def intersects(self, width: float, height: float) -> bool:
        """True if the box overlaps the image rectangle ``[0, width) x [0, height)``."""
        return self.x < width and self.y < height and self.x1 > 0 and self.y1 > 0


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x, b.x)
    ih = min(a.y1, b.y1) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # areas from the same corner differences, so identical boxes give exactly 1
    area_a = (a.x1 - a.x) * (a.y1 - a.y)
    area_b = (b.x1 - b.x) * (b.y1 - b.y)
    return inter / (area_a + area_b - inter)


def iou_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise IoU of two ``(n, 4)`` arrays of ``x, y, w, h``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx1, by1 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.minimum(ax1, bx1) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(ay1, by1) - np.maximum(a[:, 1], b[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (ax1 - a[:, 0]) * (ay1 - a[:, 1]) + (bx1 - b[:, 0]) * (by1 - b[:, 1]) - inter
    return inter / union


def center_distance(a: BBox, b: BBox) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)
