"""Normalized bounding-box arithmetic shared by the sampler, metrics and trainer."""
from __future__ import annotations

from dataclasses import astuple, dataclass
from typing import Iterator

import numpy as np


class InvalidBoxError(ValueError):
    """Raised when a box has non-positive width or height after clamping."""


@dataclass(frozen=True)
class RawBBox:
    """Unvalidated box, e.g. the direct output of a coordinate perturbation."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __iter__(self) -> Iterator[float]:
        return iter(astuple(self))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized screen coordinates with positive area."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        x0, y0, x1, y1 = self.x_min, self.y_min, self.x_max, self.y_max
        if not all(np.isfinite((x0, y0, x1, y1))):
            raise InvalidBoxError(f"non-finite coordinate in {astuple(self)}")
        if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
            raise InvalidBoxError(f"invalid box {astuple(self)}")

    def __iter__(self) -> Iterator[float]:
        return iter(astuple(self))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_seq(cls, values) -> "BBox":
        x0, y0, x1, y1 = (float(v) for v in values)
        return cls(x0, y0, x1, y1)


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise ValueError(f"point ({self.x}, {self.y}) outside the unit square")


def iou(a: BBox, b: BBox) -> float:
    """Intersection area over union area; 0 for disjoint boxes."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def iou_many(ref, boxes: np.ndarray) -> np.ndarray:
    """Vectorized IoU of every row of ``boxes`` (shape ``(..., 4)``) against ``ref``.

    Rows with non-positive area are not checked; callers mask them out.
    """
    r = np.asarray(tuple(ref), dtype=float)
    boxes = np.asarray(boxes, dtype=float)
    x0, y0, x1, y1 = (boxes[..., i] for i in range(4))
    iw = np.clip(np.minimum(x1, r[2]) - np.maximum(x0, r[0]), 0.0, None)
    ih = np.clip(np.minimum(y1, r[3]) - np.maximum(y0, r[1]), 0.0, None)
    inter = iw * ih
    union = (x1 - x0) * (y1 - y0) + (r[2] - r[0]) * (r[3] - r[1]) - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0.0, inter / union, 0.0)
    return np.clip(out, 0.0, 1.0)


def clamp_boxes(boxes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clamp an ``(..., 4)`` array to the unit square; also return the validity mask."""
    clamped = np.clip(boxes, 0.0, 1.0)
    valid = (clamped[..., 2] > clamped[..., 0]) & (clamped[..., 3] > clamped[..., 1])
    return clamped, valid


def validate(raw) -> BBox:
    """Clamp each coordinate to [0, 1], then require positive width and height.

    Raises :class:`InvalidBoxError` when the clamped box is degenerate or inverted.
    """
    x0, y0, x1, y1 = (min(1.0, max(0.0, float(v))) for v in raw)
    if not (x1 > x0 and y1 > y0):
        raise InvalidBoxError(f"degenerate box after clamping: {tuple(raw)}")
    return BBox(x0, y0, x1, y1)


def center(b: BBox) -> Point:
    return Point((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0)


def contains(b: BBox, p: Point) -> bool:
    # closed boundaries: an edge click is a hit
    return b.x_min <= p.x <= b.x_max and b.y_min <= p.y <= b.y_max
