"""Box geometry: validation, IoU, and area-based scale buckets.

Boxes are (x1, y1, x2, y2) in continuous pixel coordinates, origin top-left.
All functions here are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class BoxValidationError(ValueError):
    """Raised for degenerate or non-finite boxes."""


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise BoxValidationError(f"non-finite box coordinate: {v!r}")
            if v < 0:
                raise BoxValidationError(f"negative box coordinate: {v!r}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise BoxValidationError(
                f"box must have strictly positive area: ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def as_list(self) -> list[float]:
        return [float(self.x1), float(self.y1), float(self.x2), float(self.y2)]

    @classmethod
    def from_list(cls, xyxy) -> "BoundingBox":
        if len(xyxy) != 4:
            raise BoxValidationError(f"box needs 4 coordinates, got {len(xyxy)}")
        return cls(float(xyxy[0]), float(xyxy[1]), float(xyxy[2]), float(xyxy[3]))

    def padded(self, fraction: float, width: float, height: float) -> "BoundingBox":
        """Expand by `fraction` of the box size per side, clamped to the image."""
        dx = self.width * fraction
        dy = self.height * fraction
        return BoundingBox(
            max(0.0, self.x1 - dx),
            max(0.0, self.y1 - dy),
            min(float(width), self.x2 + dx),
            min(float(height), self.y2 + dy),
        )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    if ix2 <= ix1 or iy2 <= iy1:
        return 0.0
    inter = (ix2 - ix1) * (iy2 - iy1)
    union = a.area + b.area - inter
    return inter / union


# Area boundaries between consecutive buckets, lower bound inclusive.
SCALE_BOUNDS = (
    ("tiny", 0.0, 20.0**2),
    ("small", 20.0**2, 40.0**2),
    ("medium", 40.0**2, 100.0**2),
    ("large", 100.0**2, 200.0**2),
    ("xlarge", 200.0**2, 500.0**2),
    ("huge", 500.0**2, math.inf),
)

SCALE_BUCKETS = tuple(name for name, _, _ in SCALE_BOUNDS)


def scale_bucket(box: BoundingBox) -> str:
    """Bucket name for a box's area; buckets partition (0, inf)."""
    area = box.area
    for name, lo, hi in SCALE_BOUNDS:
        if lo <= area < hi:
            return name
    raise BoxValidationError(f"area {area} outside all buckets")  # pragma: no cover
