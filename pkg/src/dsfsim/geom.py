"""Semi-balls, history sets and cones.

All sets are closed.  Distances are always computed as
``sqrt(dx*dx + dy*dy)`` with the same operand order, so that a point used to
define a radius lies exactly on the boundary of the resulting ball.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .errors import ContractError
from .ppp import Point, as_point


def dist(a: Sequence[float], b: Sequence[float]) -> float:
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    return math.sqrt(dx * dx + dy * dy)


@dataclass(frozen=True)
class SemiBall:
    center: Point
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not self.radius >= 0:
            raise ContractError(f"radius must be non-negative, got {self.radius}")

    @property
    def top(self) -> float:
        return self.center.y + self.radius


@dataclass(frozen=True)
class HistorySet:
    clip_level: float
    balls: tuple[SemiBall, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "balls", tuple(self.balls))

    @classmethod
    def empty(cls, clip_level: float = -math.inf) -> "HistorySet":
        return cls(clip_level, ())

    def as_array(self) -> np.ndarray:
        if not self.balls:
            return np.zeros((0, 3))
        return np.array([(b.center.x, b.center.y, b.radius) for b in self.balls], dtype=np.float64)

    @classmethod
    def from_array(cls, clip_level: float, arr: np.ndarray) -> "HistorySet":
        return cls(float(clip_level), tuple(SemiBall(Point(float(a), float(b)), float(r)) for a, b, r in arr))


def in_semiball(p: Sequence[float], b: SemiBall) -> bool:
    return p[1] >= b.center.y and dist(b.center, p) <= b.radius


def in_history(p: Sequence[float], H: HistorySet) -> bool:
    if p[1] < H.clip_level:
        return False
    return any(in_semiball(p, b) for b in H.balls)


def history_height(H: HistorySet) -> float:
    if not H.balls:
        return 0.0
    return max(0.0, max(b.top for b in H.balls) - H.clip_level)


def prune(H: HistorySet, new_clip: float) -> HistorySet:
    if new_clip < H.clip_level:
        raise ContractError(f"prune level {new_clip} is below the current clip {H.clip_level}")
    return HistorySet(new_clip, tuple(b for b in H.balls if b.top > new_clip))


def cone_contains(apex: Sequence[float], p: Sequence[float]) -> bool:
    """Closed upward cone of half-angle π/4 around the vertical through ``apex``."""
    dy = p[1] - apex[1]
    return dy > 0 and abs(p[0] - apex[0]) <= dy


def cone_ball_distance(apex: Sequence[float], c: Sequence[float]) -> float:
    """Euclidean distance from ``c`` to the closed upward cone at ``apex``."""
    dx = abs(c[0] - apex[0])
    dy = c[1] - apex[1]
    if dx <= dy:
        return 0.0
    if -dy >= dx:
        return math.sqrt(dx * dx + dy * dy)
    return (dx - dy) / math.sqrt(2.0)


def cone_meets_history(apex: Sequence[float], H: HistorySet) -> bool:
    """Whether some semi-ball of ``H`` reaches into the open interior of the cone.

    Contact along the boundary only (for example a ball whose top is the
    apex) does not count.
    """
    for b in H.balls:
        if _semiball_meets_cone(apex[0], apex[1], b.center.x, b.center.y, b.radius):
            return True
    return False


# ---------------------------------------------------------------------------
# array versions used inside compiled kernels; balls are rows (cx, cy, r)


@njit(cache=True)
def _in_hist(x, y, balls, nb, clip):
    if y < clip:
        return False
    for j in range(nb):
        cx = balls[j, 0]
        cy = balls[j, 1]
        if y >= cy and math.sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy)) <= balls[j, 2]:
            return True
    return False


@njit(cache=True)
def _height(balls, nb, clip):
    top = -np.inf
    for j in range(nb):
        t = balls[j, 1] + balls[j, 2]
        if t > top:
            top = t
    if nb == 0 or top <= clip:
        return 0.0
    return top - clip


@njit(cache=True)
def _prune(balls, nb, clip):
    """Drop balls whose top is at or below ``clip``; returns the new count."""
    m = 0
    for j in range(nb):
        if balls[j, 1] + balls[j, 2] > clip:
            if m != j:
                balls[m, 0] = balls[j, 0]
                balls[m, 1] = balls[j, 1]
                balls[m, 2] = balls[j, 2]
            m += 1
    return m


@njit(cache=True)
def _semiball_meets_cone(ax, ay, cx, cy, r):
    # distance from the ball center to the cone compared strictly with r; the
    # half-plane restriction does not matter because the cone lies above the
    # apex and every ball center in a history set lies at or below it.
    dx = abs(cx - ax)
    dy = cy - ay
    if dx <= dy:
        d = 0.0
    elif -dy >= dx:
        d = math.sqrt(dx * dx + dy * dy)
    else:
        d = (dx - dy) / math.sqrt(2.0)
    return d < r
