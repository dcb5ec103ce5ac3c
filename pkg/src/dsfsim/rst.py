"""Radial spanning tree rooted at the origin and a crossing-count proxy.

Each point is joined to the closest point of strictly smaller norm, the
origin included as a candidate so that every point has a parent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit, types
from numba.typed import Dict

from .errors import ContractError, InvariantViolation
from .forest import _better, search_radii
from .ppp import _F_BLOCK, _F_CELL, _I_NCELL, Point, SlabStore, _cell_range, _get_block, as_point

_XY = types.UniTuple(types.float64, 2)
ORIGIN = Point(0.0, 0.0)


@njit(cache=True)
def _rst_parent(F, x, y, r0):
    """Closest store point with norm strictly below that of ``(x, y)``, or the origin."""
    pts, starts, pf, pi = F[1], F[2], F[3], F[4]
    b = pf[_F_BLOCK]
    cs = pf[_F_CELL]
    ncell = pi[_I_NCELL]
    n2 = x * x + y * y
    # the origin is always a candidate
    bd = math.sqrt(n2)
    bxp = 0.0
    byp = 0.0
    R = r0
    while True:
        Rs = min(R, bd)
        x0 = x - Rs
        x1 = x + Rs
        y0 = y - Rs
        y1 = y + Rs
        for by in range(int(math.floor(y0 / b)), int(math.floor(y1 / b)) + 1):
            for bx in range(int(math.floor(x0 / b)), int(math.floor(x1 / b)) + 1):
                k = _get_block(F, bx, by)
                if k < 0:
                    continue
                P = pts[k]
                S = starts[k]
                cx0, cx1 = _cell_range(x0, x1, bx * b, cs, ncell)
                cy0, cy1 = _cell_range(y0, y1, by * b, cs, ncell)
                for cy in range(cy0, cy1 + 1):
                    for i in range(S[cy * ncell + cx0], S[cy * ncell + cx1 + 1]):
                        px = P[i, 0]
                        py = P[i, 1]
                        if px * px + py * py < n2:
                            d = math.sqrt((px - x) * (px - x) + (py - y) * (py - y))
                            if d <= Rs and _better(d, py, px, bd, byp, bxp):
                                bd = d
                                bxp = px
                                byp = py
        if bd <= R:
            return bxp, byp
        R *= 2.0


@njit(cache=True)
def _annulus_points(F, rin, rout):
    b = F[3][_F_BLOCK]
    m = int(math.floor(rout / b)) + 1
    res = np.empty((64, 2))
    n = 0
    for by in range(-m, m + 1):
        for bx in range(-m, m + 1):
            # skip blocks that miss the annulus
            qx = min(max(0.0, bx * b), (bx + 1) * b)
            qy = min(max(0.0, by * b), (by + 1) * b)
            near = math.sqrt(qx * qx + qy * qy)
            fx = max(abs(bx * b), abs((bx + 1) * b))
            fy = max(abs(by * b), abs((by + 1) * b))
            far = math.sqrt(fx * fx + fy * fy)
            if near > rout or far < rin:
                continue
            k = _get_block(F, bx, by)
            if k < 0:
                continue
            P = F[1][k]
            for i in range(P.shape[0]):
                r = math.sqrt(P[i, 0] * P[i, 0] + P[i, 1] * P[i, 1])
                if rin <= r <= rout:
                    if n == res.shape[0]:
                        g = np.empty((2 * n, 2))
                        g[:n] = res
                        res = g
                    res[n, 0] = P[i, 0]
                    res[n, 1] = P[i, 1]
                    n += 1
    return res[:n].copy()


@njit(cache=True)
def _crossings(F, starts, r, r0):
    """Outer endpoints of the distinct tree edges by which paths from ``starts`` enter the disc of radius ``r``."""
    memo = Dict.empty(key_type=_XY, value_type=types.int64)
    cross = np.empty((starts.shape[0], 2))
    nc = 0
    r2 = r * r
    for j in range(starts.shape[0]):
        cx = starts[j, 0]
        cy = starts[j, 1]
        if cx * cx + cy * cy < r2:
            continue
        stack = np.empty((16, 2))
        ns = 0
        cid = -1
        while True:
            key = (cx, cy)
            if key in memo:
                cid = memo[key]
                break
            if ns == stack.shape[0]:
                g = np.empty((2 * ns, 2))
                g[:ns] = stack[:ns]
                stack = g
            stack[ns, 0] = cx
            stack[ns, 1] = cy
            ns += 1
            ax, ay = _rst_parent(F, cx, cy, r0)
            if ax * ax + ay * ay < r2:
                cid = nc
                cross[nc, 0] = cx
                cross[nc, 1] = cy
                nc += 1
                break
            cx, cy = ax, ay
        for q in range(ns):
            memo[(stack[q, 0], stack[q, 1])] = cid
    return cross[:nc].copy()


def rst_ancestor(x: Sequence[float], store: SlabStore) -> Point:
    """Closest point of ``store`` with norm strictly below ``|x|``, or the origin."""
    x = as_point(x)
    if x.x == 0.0 and x.y == 0.0:
        raise ContractError("the origin has no ancestor")
    r0, _ = search_radii(store)
    ax, ay = _rst_parent(store.field, x.x, x.y, r0)
    return Point(float(ax), float(ay))


def chi_r_proxy(r: float, R_out: float, store: SlabStore, return_edges: bool = False):
    """Distinct edges through which tree paths from the annulus ``R_out <= |x| <= R_out+1`` cross radius ``r``."""
    if not r > 0:
        raise ContractError("r must be positive")
    if R_out < 2 * r:
        raise ContractError("R_out must be at least 2r")
    edges = crossing_edges(annulus_points(store, R_out, R_out + 1.0), r, store)
    return (edges.shape[0], edges) if return_edges else edges.shape[0]


def annulus_points(store: SlabStore, r_in: float, r_out: float) -> np.ndarray:
    """Store points with ``r_in <= |x| <= r_out``."""
    return _annulus_points(store.field, float(r_in), float(r_out))


def crossing_edges(starts: np.ndarray, r: float, store: SlabStore) -> np.ndarray:
    """Outer endpoints of the distinct edges by which tree paths from ``starts`` enter the disc of radius ``r``."""
    r0, _ = search_radii(store)
    starts = np.ascontiguousarray(np.asarray(starts, dtype=np.float64).reshape(-1, 2))
    return _crossings(store.field, starts, float(r), r0)


@dataclass(frozen=True)
class RstTree:
    points: np.ndarray  # (n, 2)
    parent: np.ndarray  # (n, 2) parent coordinates, origin as (0, 0)

    def parent_of(self, p: Sequence[float]) -> Point:
        hit = np.flatnonzero((self.points[:, 0] == p[0]) & (self.points[:, 1] == p[1]))
        if hit.size == 0:
            raise KeyError(tuple(p))
        return Point(float(self.parent[hit[0], 0]), float(self.parent[hit[0], 1]))

    def validate(self) -> None:
        """Parents have strictly smaller norm and every chain ends at the origin."""
        norms = np.hypot(self.points[:, 0], self.points[:, 1])
        pn = np.hypot(self.parent[:, 0], self.parent[:, 1])
        if np.any(pn >= norms):
            raise InvariantViolation("a parent does not have a smaller norm")
        index = {(float(x), float(y)): i for i, (x, y) in enumerate(self.points)}
        for i in range(len(self.points)):
            j, steps = i, 0
            while True:
                px, py = float(self.parent[j, 0]), float(self.parent[j, 1])
                if px == 0.0 and py == 0.0:
                    break
                if (px, py) not in index:
                    raise InvariantViolation("parent outside the tree")
                j = index[(px, py)]
                steps += 1
                if steps > len(self.points):
                    raise InvariantViolation("cycle in the tree")


def rst_tree(store: SlabStore, radius: float) -> RstTree:
    """The tree restricted to store points within ``radius`` of the origin (closed under parents)."""
    pts = store.points_in((-radius, radius, -radius, radius))
    pts = pts[np.hypot(pts[:, 0], pts[:, 1]) <= radius]
    r0, _ = search_radii(store)
    par = np.array([_rst_parent(store.field, float(x), float(y), r0) for x, y in pts]).reshape(-1, 2)
    return RstTree(pts, par)
