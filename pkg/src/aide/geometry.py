"""Axis-aligned pixel box primitives shared by perception, planning and scoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable


@dataclass(frozen=True)
class Region:
    """Axis-aligned pixel rectangle with inclusive-exclusive extent semantics.

    Width is ``x_max - x_min``; a zero-width region is permitted (degenerate).
    """

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if self.x_min < 0 or self.y_min < 0:
            raise ValueError(f"negative region coordinates: {self}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted region bounds: {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def contains(self, other: "Region") -> bool:
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and self.x_max >= other.x_max
            and self.y_max >= other.y_max
        )

    def contains_point(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def intersects(self, other: "Region") -> bool:
        return (
            self.x_min <= other.x_max
            and other.x_min <= self.x_max
            and self.y_min <= other.y_max
            and other.y_min <= self.y_max
        )

    def intersection(self, other: "Region") -> "Region | None":
        x0 = max(self.x_min, other.x_min)
        y0 = max(self.y_min, other.y_min)
        x1 = min(self.x_max, other.x_max)
        y1 = min(self.y_max, other.y_max)
        if x0 > x1 or y0 > y1:
            return None
        return Region(x0, y0, x1, y1)

    def union_bounds(self, other: "Region") -> "Region":
        return Region(
            min(self.x_min, other.x_min),
            min(self.y_min, other.y_min),
            max(self.x_max, other.x_max),
            max(self.y_max, other.y_max),
        )

    def clip(self, width: int, height: int) -> "Region":
        """Clamp into a ``width x height`` frame, collapsing at the border if outside."""
        return Region(
            min(max(self.x_min, 0), width),
            min(max(self.y_min, 0), height),
            min(max(self.x_max, 0), width),
            min(max(self.y_max, 0), height),
        )

    def pad(self, fraction: float, width: int, height: int) -> "Region":
        """Grow each side by ``fraction`` of the box extent, clipped to the frame."""
        dx = int(round(self.width * fraction))
        dy = int(round(self.height * fraction))
        return Region(
            max(self.x_min - dx, 0),
            max(self.y_min - dy, 0),
            self.x_max + dx,
            self.y_max + dy,
        ).clip(width, height)

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def region_from_floats(x0: float, y0: float, x1: float, y1: float) -> Region:
    """Round float bounds to a valid Region, clamping at zero."""
    xa, xb = sorted((x0, x1))
    ya, yb = sorted((y0, y1))
    return Region(
        max(int(round(xa)), 0),
        max(int(round(ya)), 0),
        max(int(round(xb)), 0),
        max(int(round(yb)), 0),
    )


def iou(a: Region, b: Region) -> float:
    """Intersection over union in [0, 1]; identical boxes score 1 even when degenerate."""
    if a == b:
        return 1.0
    inter = a.intersection(b)
    if inter is None:
        return 0.0
    inter_area = inter.area
    union = a.area + b.area - inter_area
    if union <= 0:
        return 0.0
    return inter_area / union


def bounding_region(regions: Iterable[Region]) -> Region:
    items = list(regions)
    if not items:
        raise ValueError("bounding_region needs at least one region")
    out = items[0]
    for r in items[1:]:
        out = out.union_bounds(r)
    return out


def vertical_halves(box: Region) -> tuple[Region, Region]:
    """(lower, upper) halves of a box; degenerate boxes return themselves twice."""
    mid = box.y_min + box.height // 2
    if mid == box.y_min or mid == box.y_max:
        return box, box
    return (
        Region(box.x_min, mid, box.x_max, box.y_max),
        Region(box.x_min, box.y_min, box.x_max, mid),
    )
