"""Axis-aligned box geometry: IoU, intersection rate, mark boxes, box features.

Boxes are stored as ``(left, top, width, height)`` in pixels, the same
convention used by MOT Challenge files.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w >= 0 and self.h >= 0):
            raise ValueError(f"box width/height must be >= 0, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)


@dataclass(frozen=True)
class FrameSize:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"frame size must be positive, got {self.width}x{self.height}")


def _intersection(a: BBox, b: BBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    inter = _intersection(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def intersection_rate(mark: BBox, human: BBox) -> float:
    """Fraction of the mark box covered by the human box.

    Unlike IoU this does not depend on the size of the human box, so a mark
    keeps its score when the human box grows away from it (e.g. partial
    occlusion changes the visible extent of the body).
    """
    if mark.area <= 0:
        return 0.0
    return _intersection(mark, human) / mark.area


def mark_box(b: BBox, area_fraction: float = 0.6) -> BBox:
    """Centered sub-box whose area is ``area_fraction`` of ``b``'s area."""
    if not (0.0 < area_fraction <= 1.0):
        raise ValueError(f"area_fraction must lie in (0, 1], got {area_fraction}")
    if area_fraction == 1.0:
        return b
    s = math.sqrt(area_fraction)
    cx, cy = b.center
    return BBox.from_center(cx, cy, b.w * s, b.h * s)


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.array([[b.x, b.y, b.w, b.h] for b in boxes], dtype=np.float64)


def _pairwise_intersection(r: np.ndarray, c: np.ndarray) -> np.ndarray:
    left = np.maximum(r[:, None, 0], c[None, :, 0])
    top = np.maximum(r[:, None, 1], c[None, :, 1])
    right = np.minimum(r[:, None, 0] + r[:, None, 2], c[None, :, 0] + c[None, :, 2])
    bottom = np.minimum(r[:, None, 1] + r[:, None, 3], c[None, :, 1] + c[None, :, 3])
    return np.clip(right - left, 0, None) * np.clip(bottom - top, 0, None)


def iou_matrix(rows: Sequence[BBox], cols: Sequence[BBox]) -> np.ndarray:
    r, c = boxes_to_array(rows), boxes_to_array(cols)
    if len(r) == 0 or len(c) == 0:
        return np.zeros((len(r), len(c)))
    inter = _pairwise_intersection(r, c)
    union = (r[:, 2] * r[:, 3])[:, None] + (c[:, 2] * c[:, 3])[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def ir_matrix(marks: Sequence[BBox], humans: Sequence[BBox]) -> np.ndarray:
    m, h = boxes_to_array(marks), boxes_to_array(humans)
    if len(m) == 0 or len(h) == 0:
        return np.zeros((len(m), len(h)))
    inter = _pairwise_intersection(m, h)
    area = np.broadcast_to((m[:, 2] * m[:, 3])[:, None], inter.shape)
    out = np.zeros_like(inter)
    np.divide(inter, area, out=out, where=area > 0)
    return out


def box_feature(b: BBox, frame: FrameSize) -> np.ndarray:
    return np.array(
        [b.x / frame.width, b.y / frame.height, b.w / frame.width, b.h / frame.height],
        dtype=np.float64,
    )


def box_features(boxes: Sequence[BBox], frame: FrameSize) -> np.ndarray:
    arr = boxes_to_array(boxes)
    return arr / np.array([frame.width, frame.height, frame.width, frame.height], dtype=np.float64)
