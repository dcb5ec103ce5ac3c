"""The dual (backward) forest and primal/dual non-crossing checks.

For a Poisson point ``q = (x, t)`` the flanking edge on the right is the
forest edge ``(p, h(p))`` with ``p.y < t <= h(p).y`` whose abscissa at time
``t`` is the smallest one exceeding ``x``; the left flank is the mirror
image.  The dual vertices of ``q`` sit at the midpoints between ``x`` and
the flanking abscissae.  A dual vertex ``(y, s)`` steps down to the left
dual vertex of its right flank's start point when that point is higher than
its left flank's start point, and to the right dual vertex of the left
flank's start point otherwise.

Several edges can reach the same point ``h`` at ordinate ``t``; they share
the abscissa there.  Among them the flank is the edge nearest to the query
just below ``t``: the leftmost for a right flank, the rightmost for a left
flank.

Everything is computed inside a finite window.  Edges are taken from the
points of the window enlarged by a horizontal and a vertical margin; a flank
is trusted only if its abscissa lies far enough inside the enlarged window
that no edge from outside could be nearer.  Untrusted queries double the
horizontal margin up to a cap and are flagged if they remain untrusted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .errors import ContractError, ResourceError
from .forest import PathPolyline, _nearest_above, _trace, search_radii
from .ppp import Point, SlabStore, as_point

LEFT = "l"
RIGHT = "r"


@njit(cache=True)
def _ancestors(F, pts, r0, rcap):
    out = np.empty_like(pts)
    balls = np.zeros((0, 3))
    extra = np.zeros((0, 2))
    for i in range(pts.shape[0]):
        ax, ay, _ = _nearest_above(F, pts[i, 0], pts[i, 1], balls, 0, -np.inf, extra, 0, r0, rcap)
        out[i, 0] = ax
        out[i, 1] = ay
    return out


@njit(cache=True)
def _flank(P, H, x, t, right):
    """Index of the flanking edge at ``(x, t)`` and its abscissa (-1 if none)."""
    best = -1
    bpos = 0.0
    bslope = 0.0
    for i in range(P.shape[0]):
        py = P[i, 1]
        hy = H[i, 1]
        if not (py < t <= hy):
            continue
        slope = (H[i, 0] - P[i, 0]) / (hy - py)
        if t == hy:
            pos = H[i, 0]
        else:
            pos = P[i, 0] + slope * (t - py)
        if right:
            if pos <= x:
                continue
            if best < 0 or pos < bpos or (pos == bpos and slope > bslope):
                best, bpos, bslope = i, pos, slope
        else:
            if pos >= x:
                continue
            if best < 0 or pos > bpos or (pos == bpos and slope < bslope):
                best, bpos, bslope = i, pos, slope
    return best, bpos


@njit(cache=True)
def _eval_at(V, a, b, t):
    """Abscissa at time ``t`` of the polyline ``V[a:b]`` (ordinates increasing)."""
    lo = a
    hi = b - 1
    if t <= V[lo, 1]:
        return V[lo, 0]
    if t >= V[hi, 1]:
        return V[hi, 0]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if V[mid, 1] <= t:
            lo = mid
        else:
            hi = mid
    y0 = V[lo, 1]
    y1 = V[hi, 1]
    return V[lo, 0] + (V[hi, 0] - V[lo, 0]) * (t - y0) / (y1 - y0)


@njit(cache=True)
def _count_violations(PV, Poff, DV, Doff, grid_step, shift):
    """Pairs (primal, dual) with σ_primal < σ_dual whose difference changes strict sign."""
    npri = Poff.shape[0] - 1
    ndual = Doff.shape[0] - 1
    bad = 0
    checked = 0
    for i in range(npri):
        a0, a1 = Poff[i], Poff[i + 1]
        sp = PV[a0, 1]
        ptop = PV[a1 - 1, 1]
        for j in range(ndual):
            b0, b1 = Doff[j], Doff[j + 1]
            sd = DV[b1 - 1, 1]
            dbot = DV[b0, 1]
            if not sp < sd:
                continue
            lo = max(sp, dbot)
            hi = min(sd, ptop)
            if not lo < hi:
                continue
            checked += 1
            npts = 2
            for q in range(a0, a1):
                if lo < PV[q, 1] < hi:
                    npts += 1
            for q in range(b0, b1):
                if lo < DV[q, 1] < hi:
                    npts += 1
            g0 = int(math.ceil(lo / grid_step))
            g1 = int(math.floor(hi / grid_step))
            if g1 >= g0:
                npts += g1 - g0 + 1
            ts = np.empty(npts)
            ts[0] = lo
            ts[1] = hi
            m = 2
            for q in range(a0, a1):
                if lo < PV[q, 1] < hi:
                    ts[m] = PV[q, 1]
                    m += 1
            for q in range(b0, b1):
                if lo < DV[q, 1] < hi:
                    ts[m] = DV[q, 1]
                    m += 1
            for g in range(g0, g1 + 1):
                ts[m] = g * grid_step
                m += 1
            pos = False
            neg = False
            for q in range(npts):
                t = ts[q]
                if t < lo or t > hi:
                    continue
                d = _eval_at(PV, a0, a1, t) - (_eval_at(DV, b0, b1, t) + shift)
                if d > 0:
                    pos = True
                elif d < 0:
                    neg = True
                if pos and neg:
                    break
            if pos and neg:
                bad += 1
    return bad, checked


@dataclass(frozen=True)
class DualVertex:
    location: Point
    side: str
    parent_primal: Point

    def __post_init__(self):
        if self.side not in (LEFT, RIGHT):
            raise ContractError("side must be 'l' or 'r'")


@dataclass(frozen=True)
class NoncrossingReport:
    violations: int
    pairs_checked: int


class DualWindow:
    """Forest edges around a window and the dual construction on top of them.

    ``rect = (x0, x1, y0, y1)``.  Margins default to ``20/sqrt(λ)``
    horizontally and ``12/sqrt(λ)`` below the window.
    """

    def __init__(
        self,
        store: SlabStore,
        rect: Sequence[float],
        margin_x: float | None = None,
        margin_y: float | None = None,
        max_margin_x: float | None = None,
    ):
        x0, x1, y0, y1 = (float(v) for v in rect)
        if not (x0 < x1 and y0 < y1):
            raise ContractError("window must have positive width and height")
        unit = 1.0 / math.sqrt(store.intensity)
        self.store = store
        self.rect = (x0, x1, y0, y1)
        self.margin_x = 20.0 * unit if margin_x is None else float(margin_x)
        self.margin_y = 12.0 * unit if margin_y is None else float(margin_y)
        self.max_margin_x = 8 * self.margin_x if max_margin_x is None else float(max_margin_x)
        # an edge longer than this has probability below 1e-24 at any intensity scale
        self.edge_bound = 6.0 * unit
        self.r0, self.rcap = search_radii(store)
        self.expansions = 0
        self._build()

    def _build(self) -> None:
        x0, x1, y0, y1 = self.rect
        mx = self.margin_x
        self.outer = (x0 - mx, x1 + mx, y0 - self.margin_y, y1)
        self.P = np.ascontiguousarray(self.store.points_in(self.outer))
        self.H = _ancestors(self.store.field, self.P, self.r0, self.rcap)
        self._cache: dict = {}

    def _trusted(self, pos: float) -> bool:
        return self.outer[0] + self.edge_bound <= pos <= self.outer[1] - self.edge_bound

    def flank(self, x: float, t: float, side: str) -> int:
        """Index into ``self.P`` of the flanking edge's start point, or -1 when unresolved."""
        while True:
            i, pos = _flank(self.P, self.H, float(x), float(t), side == RIGHT)
            if i >= 0 and self._trusted(pos):
                return int(i)
            if self.margin_x * 2 > self.max_margin_x:
                return -1
            self.margin_x *= 2
            self.expansions += 1
            self._build()

    def flank_position(self, x: float, t: float, side: str) -> tuple[int, float]:
        i = self.flank(x, t, side)
        if i < 0:
            return -1, math.nan
        _, pos = _flank(self.P, self.H, float(x), float(t), side == RIGHT)
        return i, float(pos)

    def dual_vertex(self, q: Sequence[float], side: str) -> DualVertex | None:
        """``r̂_q`` (side 'r') or ``l̂_q`` (side 'l'); None if the flank is unresolved."""
        q = as_point(q)
        key = (q, side)
        if key in self._cache:
            return self._cache[key]
        i, pos = self.flank_position(q.x, q.y, side)
        v = None if i < 0 else DualVertex(Point(0.5 * (q.x + pos), q.y), side, q)
        self._cache[key] = v
        return v

    def flank_start(self, x: float, t: float, side: str) -> Point | None:
        i = self.flank(x, t, side)
        return None if i < 0 else Point(float(self.P[i, 0]), float(self.P[i, 1]))

    def dual_ancestor(self, v: DualVertex) -> DualVertex | None:
        y, s = v.location
        pr = self.flank_start(y, s, RIGHT)
        pl = self.flank_start(y, s, LEFT)
        if pr is None or pl is None:
            return None
        if pr.y > pl.y:
            return self.dual_vertex(pr, LEFT)
        return self.dual_vertex(pl, RIGHT)

    def window_points(self) -> np.ndarray:
        x0, x1, y0, y1 = self.rect
        m = (self.P[:, 0] >= x0) & (self.P[:, 0] <= x1) & (self.P[:, 1] >= y0) & (self.P[:, 1] <= y1)
        return self.P[m]

    def dual_vertices(self) -> tuple[list[DualVertex], int]:
        """Dual vertices of the window's points and the number of unresolved ones."""
        out, flagged = [], 0
        for q in self.window_points():
            for side in (LEFT, RIGHT):
                v = self.dual_vertex(q, side)
                if v is None:
                    flagged += 1
                else:
                    out.append(v)
        return out, flagged

    def dual_path(self, v: DualVertex) -> tuple[PathPolyline, bool]:
        """Dual path from ``v`` down to the first vertex below the window.

        Returns the path (vertices in increasing ordinate) and whether it was
        cut short by an unresolved flank.
        """
        y0 = self.rect[2]
        verts = [v.location]
        cur = v
        complete = True
        while cur.location.y >= y0:
            nxt = self.dual_ancestor(cur)
            if nxt is None:
                complete = False
                break
            if not nxt.location.y < cur.location.y:
                raise ContractError("dual step did not go down")
            verts.append(nxt.location)
            cur = nxt
        return PathPolyline(np.asarray(verts[::-1], dtype=np.float64)), complete

    def primal_paths(self) -> list[PathPolyline]:
        """Forest paths from every window point, traced past the window top."""
        y1 = self.rect[3]
        return [
            PathPolyline(_trace(self.store.field, float(x), float(y), y1, self.r0, self.rcap))
            for x, y in self.window_points()
        ]

    def flanking_path(self, q: Sequence[float], side: str) -> PathPolyline | None:
        """Forest path of the flank of ``q`` from its start point up to ``q.y``."""
        q = as_point(q)
        p = self.flank_start(q.x, q.y, side)
        if p is None:
            return None
        return PathPolyline(_trace(self.store.field, p.x, p.y, float(np.nextafter(q.y, -np.inf)), self.r0, self.rcap))

    def dual_edges(self) -> list[tuple[DualVertex, DualVertex]]:
        edges = []
        for v in self.dual_vertices()[0]:
            w = self.dual_ancestor(v)
            if w is not None:
                edges.append((v, w))
        return edges


def flanking_path(p: Sequence[float], side: str, store: SlabStore, window: Sequence[float]) -> PathPolyline:
    path = DualWindow(store, window).flanking_path(p, side)
    if path is None:
        raise ResourceError("flank unresolved at the horizontal margin cap")
    return path


def dual_ancestor(v: DualVertex, store: SlabStore, window: Sequence[float]) -> DualVertex:
    w = DualWindow(store, window).dual_ancestor(v)
    if w is None:
        raise ResourceError("flank unresolved at the horizontal margin cap")
    return w


def _pack(paths: Sequence[PathPolyline]):
    if not paths:
        return np.zeros((0, 2)), np.zeros(1, dtype=np.int64)
    off = np.zeros(len(paths) + 1, dtype=np.int64)
    off[1:] = np.cumsum([len(p) for p in paths])
    return np.ascontiguousarray(np.vstack([p.vertices for p in paths])), off


def check_noncrossing(
    primal_paths: Sequence[PathPolyline],
    dual_paths: Sequence[PathPolyline],
    grid_step: float = 0.1,
    shift: float = 0.0,
) -> NoncrossingReport:
    """Count primal/dual pairs that cross.

    A primal path starts at its lowest vertex and a dual path at its highest.
    For each pair with the primal start strictly below the dual start, the
    difference of abscissae is evaluated on the common time range at every
    vertex ordinate of either path and on a grid of step ``grid_step``; a
    pair crosses when the difference takes both signs.  ``shift`` is added to
    every dual abscissa (used for sensitivity checks).
    """
    PV, Poff = _pack(primal_paths)
    DV, Doff = _pack(dual_paths)
    bad, checked = _count_violations(PV, Poff, DV, Doff, float(grid_step), float(shift))
    return NoncrossingReport(int(bad), int(checked))


@dataclass(frozen=True)
class WindowCheck:
    n_primal: int
    n_dual: int
    n_flagged: int
    n_incomplete: int
    violations: int
    pairs_checked: int
    perturbed_violations: int
    single_edge_ok: bool
    expansions: int


def check_window(store: SlabStore, rect: Sequence[float], perturb: float = 0.3) -> WindowCheck:
    """Build primal and dual paths of a window and run every dual check on it."""
    w = DualWindow(store, rect)
    verts, flagged = w.dual_vertices()
    dual_paths, incomplete = [], 0
    single = True
    for v in verts:
        nxt = w.dual_ancestor(v)
        # exactly one downward edge: the rule returns a single vertex strictly below
        if nxt is not None and not nxt.location.y < v.location.y:
            single = False
        path, complete = w.dual_path(v)
        if complete:
            dual_paths.append(path)
        else:
            incomplete += 1
    primal = w.primal_paths()
    rep = check_noncrossing(primal, dual_paths)
    pert = check_noncrossing(primal, dual_paths, shift=perturb)
    return WindowCheck(
        len(primal), len(verts), flagged, incomplete, rep.violations, rep.pairs_checked,
        pert.violations, single, w.expansions,
    )


def write_edges_csv(edges: Sequence[tuple[DualVertex, DualVertex]], path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("from_x,from_y,to_x,to_y,side\n")
        for a, b in edges:
            fh.write(f"{a.location.x:.17g},{a.location.y:.17g},{b.location.x:.17g},{b.location.y:.17g},{a.side}\n")
