"""Axis-aligned integer boxes on pixel and feature-map grids."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Box:
    """Half-open rectangle [x0, x1) x [y0, y1) on an integer grid.

    x runs along columns, y along rows. A box must be nonempty.
    """

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"empty or inverted box: {self}")

    @property
    def w(self) -> int:
        return self.x1 - self.x0

    @property
    def h(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.w * self.h

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @staticmethod
    def from_list(v) -> "Box":
        x0, y0, x1, y1 = (int(t) for t in v)
        return Box(x0, y0, x1, y1)


def intersection(a: Box, b: Box) -> Box | None:
    """Intersection box, or None when disjoint."""
    x0 = max(a.x0, b.x0)
    y0 = max(a.y0, b.y0)
    x1 = min(a.x1, b.x1)
    y1 = min(a.y1, b.y1)
    if x0 < x1 and y0 < y1:
        return Box(x0, y0, x1, y1)
    return None


def intersection_area(a: Box, b: Box) -> int:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0
    return iw * ih


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0.0 for disjoint boxes."""
    inter = intersection_area(a, b)
    if inter == 0:
        return 0.0
    return inter / float(a.area + b.area - inter)


def clip(box: Box, width: int, height: int) -> Box | None:
    """Clip to [0, width) x [0, height); None when nothing remains."""
    x0 = max(box.x0, 0)
    y0 = max(box.y0, 0)
    x1 = min(box.x1, width)
    y1 = min(box.y1, height)
    if x0 < x1 and y0 < y1:
        return Box(x0, y0, x1, y1)
    return None


def contains(outer: Box, inner: Box) -> bool:
    return (
        outer.x0 <= inner.x0
        and outer.y0 <= inner.y0
        and inner.x1 <= outer.x1
        and inner.y1 <= outer.y1
    )
