"""Collision checking against axis-aligned rectangles in the plane."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .state import Obstacle, Pose2D


@dataclass(frozen=True)
class CollisionMap:
    """Inflated obstacle rectangles plus the admissible domain.

    A point on a rectangle boundary counts as free; the domain check is
    inclusive and shrunk by ``margin``.
    """

    rects: tuple[tuple[float, float, float, float], ...]
    domain: Optional[tuple[float, float, float, float]] = None  # xmin, xmax, ymin, ymax
    margin: float = 0.0

    @classmethod
    def build(cls, obstacles: Iterable[Obstacle], inflate: float = 0.0, domain=None,
              exclude: Sequence[str] = ()) -> "CollisionMap":
        rects = []
        for o in obstacles:
            if o.name in exclude:
                continue
            x0, y0, x1, y1 = o.bounds
            rects.append((x0 - inflate, y0 - inflate, x1 + inflate, y1 + inflate))
        return cls(tuple(rects), None if domain is None else tuple(domain), inflate if domain else 0.0)

    def point_free(self, x: float, y: float) -> bool:
        if self.domain is not None:
            x0, x1, y0, y1 = self.domain
            m = self.margin
            if not (x0 + m <= x <= x1 - m and y0 + m <= y <= y1 - m):
                return False
        for rx0, ry0, rx1, ry1 in self.rects:
            if rx0 < x < rx1 and ry0 < y < ry1:
                return False
        return True

    def segment_free(self, ax: float, ay: float, bx: float, by: float, resolution: float = 0.1) -> bool:
        d = math.hypot(bx - ax, by - ay)
        n = max(1, math.ceil(d / resolution - 1e-9))
        for i in range(n + 1):
            t = i / n
            if not self.point_free(ax + (bx - ax) * t, ay + (by - ay) * t):
                return False
        return True

    def polyline_free(self, pts: Sequence[tuple[float, float]], resolution: float = 0.1) -> bool:
        if len(pts) == 1:
            return self.point_free(*pts[0])
        return all(self.segment_free(*pts[i], *pts[i + 1], resolution) for i in range(len(pts) - 1))


def polyline_length(pts: Sequence[tuple[float, float]]) -> float:
    return sum(math.hypot(pts[i + 1][0] - pts[i][0], pts[i + 1][1] - pts[i][1]) for i in range(len(pts) - 1))


def resample(pts: Sequence[tuple[float, float]], n: int) -> list[tuple[float, float]]:
    """``n`` points evenly spaced by arc length along a polyline."""
    if len(pts) == 1 or n == 1:
        return [tuple(pts[0])] * n
    cum = [0.0]
    for i in range(len(pts) - 1):
        cum.append(cum[-1] + math.hypot(pts[i + 1][0] - pts[i][0], pts[i + 1][1] - pts[i][1]))
    total = cum[-1]
    if total == 0.0:
        return [tuple(pts[0])] * n
    out = []
    j = 0
    for k in range(n):
        s = total * k / (n - 1)
        while j < len(pts) - 2 and cum[j + 1] < s:
            j += 1
        seg = cum[j + 1] - cum[j]
        t = 0.0 if seg == 0 else min(1.0, max(0.0, (s - cum[j]) / seg))
        out.append((pts[j][0] + (pts[j + 1][0] - pts[j][0]) * t, pts[j][1] + (pts[j + 1][1] - pts[j][1]) * t))
    return out


def densify(poses: Sequence[Pose2D], spacing: float = 0.1) -> list[Pose2D]:
    """Insert intermediate poses so consecutive ones are at most ``spacing`` apart."""
    if not poses:
        return []
    out = [poses[0]]
    for a, b in zip(poses, poses[1:]):
        d = a.distance_to(b)
        n = max(1, math.ceil(d / spacing - 1e-9))
        heading = math.atan2(b.y - a.y, b.x - a.x) if d > 0 else b.heading
        for i in range(1, n + 1):
            t = i / n
            out.append(Pose2D(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t, heading))
    return out
