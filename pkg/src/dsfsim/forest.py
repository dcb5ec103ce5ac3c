"""Ancestor map of the directed spanning forest and single-path tracing.

The ancestor of ``x`` is the closest candidate point strictly above ``x``.
Searches look in the box ``[x-R, x+R] x [y, y+R]`` for growing ``R``
(doubling from ``2/sqrt(λ)``); a hit within distance ``R`` is final because
every point closer than ``R`` has been scanned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .errors import DomainError, SearchOverflowError
from .geom import HistorySet, _in_hist
from .ppp import _F_BLOCK, _F_CELL, _I_NCELL, Point, SlabStore, _cell_range, _get_block, as_point

DEFAULT_RADIUS_CAP = 1000.0


def search_radii(store: SlabStore, radius_cap: float | None = None) -> tuple[float, float]:
    scale = 1.0 / math.sqrt(store.intensity)
    cap = DEFAULT_RADIUS_CAP * scale if radius_cap is None else float(radius_cap)
    return 2.0 * scale, cap


@njit(cache=True)
def _better(d, py, px, bd, by, bx):
    if d < bd:
        return True
    if d > bd:
        return False
    return py < by or (py == by and px < bx)


@njit(cache=True)
def _nearest_above(F, x, y, balls, nb, clip, extra, ne, r0, rcap):
    """Closest candidate strictly above ``(x, y)``.

    Candidates are store points outside the history ``(balls[:nb], clip)``
    together with the first ``ne`` rows of ``extra``.  Returns ``(ax, ay, d)``.
    """
    pts, starts, pf, pi = F[1], F[2], F[3], F[4]
    b = pf[_F_BLOCK]
    cs = pf[_F_CELL]
    ncell = pi[_I_NCELL]
    R = r0
    while True:
        bd = np.inf
        bxp = 0.0
        byp = 0.0
        x0 = x - R
        x1 = x + R
        y1 = y + R
        for by in range(int(math.floor(y / b)), int(math.floor(y1 / b)) + 1):
            for bx in range(int(math.floor(x0 / b)), int(math.floor(x1 / b)) + 1):
                k = _get_block(F, bx, by)
                if k < 0:
                    continue
                P = pts[k]
                S = starts[k]
                cx0, cx1 = _cell_range(x0, x1, bx * b, cs, ncell)
                cy0, cy1 = _cell_range(y, y1, by * b, cs, ncell)
                for cy in range(cy0, cy1 + 1):
                    for i in range(S[cy * ncell + cx0], S[cy * ncell + cx1 + 1]):
                        py = P[i, 1]
                        if py > y:
                            px = P[i, 0]
                            d = math.sqrt((px - x) * (px - x) + (py - y) * (py - y))
                            if d <= R and _better(d, py, px, bd, byp, bxp):
                                if not _in_hist(px, py, balls, nb, clip):
                                    bd = d
                                    bxp = px
                                    byp = py
        for i in range(ne):
            px = extra[i, 0]
            py = extra[i, 1]
            if py > y:
                d = math.sqrt((px - x) * (px - x) + (py - y) * (py - y))
                if d <= R and _better(d, py, px, bd, byp, bxp):
                    bd = d
                    bxp = px
                    byp = py
        if bd <= R:
            return bxp, byp, bd
        R *= 2.0
        if R > 2.0 * rcap:
            raise SearchOverflowError("nearest-point search exceeded its radius cap")


_NO_BALLS = np.zeros((0, 3))
_NO_POINTS = np.zeros((0, 2))


@njit(cache=True)
def _trace(F, x, y, ymax, r0, rcap):
    n = 1
    out = np.empty((16, 2))
    out[0, 0] = x
    out[0, 1] = y
    balls = np.zeros((0, 3))
    extra = np.zeros((0, 2))
    while out[n - 1, 1] <= ymax:
        ax, ay, _ = _nearest_above(F, out[n - 1, 0], out[n - 1, 1], balls, 0, -np.inf, extra, 0, r0, rcap)
        if n == out.shape[0]:
            grown = np.empty((2 * n, 2))
            grown[:n] = out
            out = grown
        out[n, 0] = ax
        out[n, 1] = ay
        n += 1
    return out[:n].copy()


def ancestor(
    x: Sequence[float],
    store: SlabStore,
    exclude: HistorySet | None = None,
    extra: Iterable[Sequence[float]] = (),
    radius_cap: float | None = None,
) -> Point:
    """Closest candidate strictly above ``x`` (ties: smaller y, then smaller x)."""
    x = as_point(x)
    balls = _NO_BALLS if exclude is None else exclude.as_array()
    clip = -math.inf if exclude is None else float(exclude.clip_level)
    ex = np.asarray([as_point(p) for p in extra], dtype=np.float64).reshape(-1, 2)
    r0, rcap = search_radii(store, radius_cap)
    ax, ay, _ = _nearest_above(store.field, x.x, x.y, balls, balls.shape[0], clip, ex, ex.shape[0], r0, rcap)
    return Point(float(ax), float(ay))


@dataclass(frozen=True)
class PathPolyline:
    """A path given by its vertices; ordinates strictly increase."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2))
        if v.shape[0] == 0:
            raise ValueError("a path needs at least one vertex")
        if np.any(np.diff(v[:, 1]) <= 0):
            raise ValueError("path ordinates must be strictly increasing")
        object.__setattr__(self, "vertices", v)

    @property
    def start_time(self) -> float:
        return float(self.vertices[0, 1])

    @property
    def end_time(self) -> float:
        return float(self.vertices[-1, 1])

    def __len__(self) -> int:
        return self.vertices.shape[0]

    def eval(self, t):
        return eval_path(self, t)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("x,y\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g},{y:.17g}\n")


def trace_path(x: Sequence[float], store: SlabStore, y_max: float, radius_cap: float | None = None) -> PathPolyline:
    """Follow ancestors from ``x`` until the last vertex lies above ``y_max``."""
    x = as_point(x)
    r0, rcap = search_radii(store, radius_cap)
    return PathPolyline(_trace(store.field, x.x, x.y, float(y_max), r0, rcap))


def eval_path(path: PathPolyline, t):
    """Linear interpolation of the path abscissa at time(s) ``t``."""
    v = path.vertices
    ts = np.asarray(t, dtype=np.float64)
    if np.any(ts < v[0, 1]) or np.any(ts > v[-1, 1]) or np.any(np.isnan(ts)):
        raise DomainError(f"time outside the path domain [{v[0, 1]}, {v[-1, 1]}]")
    out = np.interp(ts, v[:, 1], v[:, 0])
    return float(out) if out.ndim == 0 else out
