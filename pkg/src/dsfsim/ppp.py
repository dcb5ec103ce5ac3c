"""Lazily generated homogeneous Poisson point process on the plane.

The plane is tiled by square blocks of side ``slab_height``.  A block's
points are a pure function of ``(seed, block index)``: the block is seeded
through a SplitMix64 hash of the global seed and its integer coordinates, so
realizations never depend on the order in which regions are visited.  Each
block keeps its points sorted by a finer grid of cells, which is what the
nearest-point searches in :mod:`dsfsim.forest` scan.

The numba-facing representation of a store is a plain tuple (see
:func:`_new_field`); :class:`SlabStore` wraps it with a Python API.
"""
from __future__ import annotations

import math
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from numba import njit, types
from numba.typed import Dict, List

from .errors import ContractError, ResourceError

# Layout of the integer / float parameter arrays of a field tuple.
_I_SEED, _I_MODE, _I_MAXPTS, _I_NCELL, _I_ALTSEED, _I_TOTAL = range(6)
_F_LAM, _F_BLOCK, _F_CELL, _F_FORBCLIP = range(4)

MODE_RANDOM = 0
MODE_FIXED = 1

_KEY_OFFSET = 1 << 30
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MASK64 = (1 << 64) - 1


class Point(NamedTuple):
    x: float
    y: float


def as_point(p: Sequence[float]) -> Point:
    x, y = float(p[0]), float(p[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ContractError(f"point coordinates must be finite, got ({x}, {y})")
    return Point(x, y)


# ---------------------------------------------------------------------------
# hashing and random numbers


def _mix_py(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Hash a seed and integer keys into a fresh non-negative 63-bit seed."""
    h = _mix_py(int(seed) + 0x9E3779B97F4A7C15)
    for k in keys:
        h = _mix_py(h ^ _mix_py(int(k) + 0x632BE59BD9B4E019))
    return h >> 1


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _block_rng(seed, bx, by):
    state = np.empty(1, dtype=np.uint64)
    h = _mix(np.uint64(seed) + _GOLDEN)
    h = _mix(h ^ _mix(np.uint64(bx + _KEY_OFFSET) * np.uint64(0xD1B54A32D192ED03)))
    h = _mix(h ^ _mix(np.uint64(by + _KEY_OFFSET) * np.uint64(0x8CB92BA72F3D8DD7)))
    state[0] = h
    return state


@njit(cache=True)
def _uniform(state):
    state[0] += _GOLDEN
    z = _mix(state[0])
    return float(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _poisson(state, mu):
    total = 0
    while mu > 0.0:
        m = mu if mu < 200.0 else 200.0
        mu -= m
        u = _uniform(state)
        p = math.exp(-m)
        cdf = p
        n = 0
        while u > cdf and p > 0.0:
            n += 1
            p *= m / n
            cdf += p
        total += n
    return total


# ---------------------------------------------------------------------------
# field tuple and block management


@njit(cache=True)
def _new_field(pf, pi, forb, forced, rects):
    index = Dict.empty(types.int64, types.int64)
    pts = List.empty_list(types.float64[:, ::1])
    starts = List.empty_list(types.int64[::1])
    return (index, pts, starts, pf, pi, forb, forced, rects)


@njit(cache=True)
def _block_key(bx, by):
    return ((bx + _KEY_OFFSET) << 32) | (by + _KEY_OFFSET)


@njit(cache=True)
def _in_rects(x, y, rects):
    for j in range(rects.shape[0]):
        if rects[j, 0] <= x <= rects[j, 1] and rects[j, 2] <= y <= rects[j, 3]:
            return True
    return False


@njit(cache=True)
def _in_balls(x, y, balls, clip):
    if y < clip:
        return False
    for j in range(balls.shape[0]):
        cx = balls[j, 0]
        cy = balls[j, 1]
        if y >= cy and math.sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy)) <= balls[j, 2]:
            return True
    return False


@njit(cache=True)
def _raw_block(seed, bx, by, lam, b):
    state = _block_rng(seed, bx, by)
    n = _poisson(state, lam * b * b)
    out = np.empty((n, 2))
    x0 = bx * b
    y0 = by * b
    for i in range(n):
        out[i, 0] = x0 + b * _uniform(state)
        out[i, 1] = y0 + b * _uniform(state)
    return out


@njit(cache=True)
def _make_block(F, bx, by):
    index, pts, starts, pf, pi, forb, forced, rects = F
    b = pf[_F_BLOCK]
    ncell = pi[_I_NCELL]
    if pi[_I_MODE] == MODE_RANDOM:
        raw = _raw_block(pi[_I_SEED], bx, by, pf[_F_LAM], b)
        keep = np.ones(raw.shape[0], dtype=np.bool_)
        if rects.shape[0] > 0:
            for i in range(raw.shape[0]):
                keep[i] = _in_rects(raw[i, 0], raw[i, 1], rects)
            alt = _raw_block(pi[_I_ALTSEED], bx, by, pf[_F_LAM], b)
            akeep = np.ones(alt.shape[0], dtype=np.bool_)
            for i in range(alt.shape[0]):
                akeep[i] = not _in_rects(alt[i, 0], alt[i, 1], rects)
            raw = np.concatenate((raw[keep], alt[akeep]))
            keep = np.ones(raw.shape[0], dtype=np.bool_)
        if forb.shape[0] > 0:
            for i in range(raw.shape[0]):
                if _in_balls(raw[i, 0], raw[i, 1], forb, pf[_F_FORBCLIP]):
                    keep[i] = False
        raw = raw[keep]
    else:
        raw = np.empty((0, 2))
    nf = 0
    for i in range(forced.shape[0]):
        if math.floor(forced[i, 0] / b) == bx and math.floor(forced[i, 1] / b) == by:
            nf += 1
    n = raw.shape[0] + nf
    allp = np.empty((n, 2))
    allp[: raw.shape[0]] = raw
    j = raw.shape[0]
    for i in range(forced.shape[0]):
        if math.floor(forced[i, 0] / b) == bx and math.floor(forced[i, 1] / b) == by:
            allp[j, 0] = forced[i, 0]
            allp[j, 1] = forced[i, 1]
            j += 1
    if pi[_I_TOTAL] + n > pi[_I_MAXPTS]:
        raise ResourceError("point store memory budget exceeded")
    pi[_I_TOTAL] += n
    # sort by cell so that searches can scan cell ranges
    cs = pf[_F_CELL]
    keys = np.empty(n, dtype=np.int64)
    for i in range(n):
        cx = int((allp[i, 0] - bx * b) / cs)
        cy = int((allp[i, 1] - by * b) / cs)
        cx = min(max(cx, 0), ncell - 1)
        cy = min(max(cy, 0), ncell - 1)
        keys[i] = cy * ncell + cx
    order = np.argsort(keys, kind="mergesort")
    sp = np.empty((n, 2))
    for i in range(n):
        sp[i, 0] = allp[order[i], 0]
        sp[i, 1] = allp[order[i], 1]
    st = np.zeros(ncell * ncell + 1, dtype=np.int64)
    for i in range(n):
        st[keys[i] + 1] += 1
    for c in range(ncell * ncell):
        st[c + 1] += st[c]
    idx = len(pts)
    pts.append(sp)
    starts.append(st)
    index[_block_key(bx, by)] = idx
    return idx


@njit(cache=True)
def _get_block(F, bx, by):
    """Index of block ``(bx, by)``, generating it on first use.

    Fixed stores create their blocks up front; a missing block there is
    empty and reported as -1 without being allocated.
    """
    key = _block_key(bx, by)
    index = F[0]
    if key in index:
        return index[key]
    if F[4][_I_MODE] == MODE_FIXED:
        return -1
    return _make_block(F, bx, by)


@njit(cache=True)
def _init_fixed(F):
    forced, b = F[6], F[3][_F_BLOCK]
    for i in range(forced.shape[0]):
        bx = int(math.floor(forced[i, 0] / b))
        by = int(math.floor(forced[i, 1] / b))
        if _block_key(bx, by) not in F[0]:
            _make_block(F, bx, by)


@njit(cache=True)
def _cell_range(lo, hi, origin, cs, ncell):
    c0 = int(math.floor((lo - origin) / cs))
    c1 = int(math.floor((hi - origin) / cs))
    return max(c0, 0), min(c1, ncell - 1)


@njit(cache=True)
def _collect_rect(F, x0, x1, y0, y1):
    """All stored points in the closed rectangle, generating blocks as needed."""
    pts, starts, pf, pi = F[1], F[2], F[3], F[4]
    b = pf[_F_BLOCK]
    cs = pf[_F_CELL]
    ncell = pi[_I_NCELL]
    bx0 = int(math.floor(x0 / b))
    bx1 = int(math.floor(x1 / b))
    by0 = int(math.floor(y0 / b))
    by1 = int(math.floor(y1 / b))
    res = np.empty((16, 2))
    n = 0
    for by in range(by0, by1 + 1):
        for bx in range(bx0, bx1 + 1):
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
                    if x0 <= px <= x1 and y0 <= py <= y1:
                        if n == res.shape[0]:
                            grown = np.empty((2 * n, 2))
                            grown[:n] = res
                            res = grown
                        res[n, 0] = px
                        res[n, 1] = py
                        n += 1
    return res[:n].copy()


@njit(cache=True)
def _generated_bounds(F):
    index, pf = F[0], F[3]
    b = pf[_F_BLOCK]
    if len(index) == 0:
        return np.array([np.nan, np.nan, np.nan, np.nan])
    bxmin = 1 << 40
    bxmax = -(1 << 40)
    bymin = 1 << 40
    bymax = -(1 << 40)
    for key in index.keys():
        bx = (key >> 32) - _KEY_OFFSET
        by = (key & 0xFFFFFFFF) - _KEY_OFFSET
        bxmin = min(bxmin, bx)
        bxmax = max(bxmax, bx)
        bymin = min(bymin, by)
        bymax = max(bymax, by)
    return np.array([bxmin * b, (bxmax + 1) * b, bymin * b, (bymax + 1) * b])


def _as_array(points: Iterable[Sequence[float]] | None, width: int) -> np.ndarray:
    if points is None:
        return np.zeros((0, width))
    arr = np.ascontiguousarray(np.asarray(list(points), dtype=np.float64).reshape(-1, width))
    if not np.all(np.isfinite(arr)):
        raise ContractError("coordinates must be finite")
    return arr


class SlabStore:
    """A lazily generated Poisson point process (or a fixed finite point set).

    Parameters
    ----------
    intensity:
        Poisson intensity λ (points per unit area).
    seed:
        Global seed; the realization of every block is a function of it.
    slab_height:
        Side of the square generation blocks.
    forbidden:
        Optional history-shaped region ``(clip_level, balls)`` whose points
        are discarded at generation time.
    forced:
        Points injected into the store regardless of the forbidden region.
    max_points:
        Memory budget; generating more points raises :class:`ResourceError`.
    """

    def __init__(
        self,
        intensity: float = 1.0,
        seed: int = 0,
        slab_height: float = 8.0,
        forbidden=None,
        forced: Iterable[Sequence[float]] | None = None,
        max_points: int = 20_000_000,
        *,
        splice_rects: Iterable[Sequence[float]] | None = None,
        splice_seed: int = 0,
        _fixed: bool = False,
    ):
        if not (intensity > 0 and math.isfinite(intensity)):
            raise ContractError(f"intensity must be positive, got {intensity}")
        if not slab_height > 0:
            raise ContractError(f"slab height must be positive, got {slab_height}")
        self.intensity = float(intensity)
        self.seed = int(seed) & _MASK64
        self.slab_height = float(slab_height)
        ncell = max(1, int(round(self.slab_height * math.sqrt(self.intensity))))
        forb_clip = -math.inf
        forb = np.zeros((0, 3))
        if forbidden is not None:
            forb_clip = float(forbidden.clip_level)
            forb = _as_array([(b.center[0], b.center[1], b.radius) for b in forbidden.balls], 3)
        self.forbidden = forbidden
        self.forced = [as_point(p) for p in (() if forced is None else forced)]
        forced_arr = _as_array(self.forced, 2)
        rects = _as_array(splice_rects, 4)
        pf = np.array([self.intensity, self.slab_height, self.slab_height / ncell, forb_clip])
        signed = self.seed - (1 << 64) if self.seed >= (1 << 63) else self.seed
        alt = int(splice_seed) & ((1 << 63) - 1)
        pi = np.array(
            [signed, MODE_FIXED if _fixed else MODE_RANDOM, int(max_points), ncell, alt, 0],
            dtype=np.int64,
        )
        self._field = _new_field(pf, pi, forb, forced_arr, rects)
        if _fixed:
            _init_fixed(self._field)

    @classmethod
    def from_points(
        cls, points: Iterable[Sequence[float]], intensity: float = 1.0, slab_height: float = 8.0
    ) -> "SlabStore":
        """A store holding exactly ``points`` (used for deterministic checks)."""
        return cls(intensity=intensity, slab_height=slab_height, forced=points, _fixed=True)

    @property
    def field(self):
        return self._field

    @property
    def n_points(self) -> int:
        return int(self._field[4][_I_TOTAL])

    @property
    def n_blocks(self) -> int:
        return len(self._field[0])

    def bounds(self) -> tuple[float, float, float, float]:
        """Bounding box ``(xmin, xmax, ymin, ymax)`` of all generated blocks."""
        return tuple(float(v) for v in _generated_bounds(self._field))

    @property
    def x_halfwidth(self) -> float:
        xmin, xmax, _, _ = self.bounds()
        return max(abs(xmin), abs(xmax)) if self.n_blocks else 0.0

    @property
    def y_top(self) -> float:
        return self.bounds()[3] if self.n_blocks else -math.inf

    def points_in(self, rect: Sequence[float]) -> np.ndarray:
        """Array of stored points in the closed rect ``(xmin, xmax, ymin, ymax)``."""
        x0, x1, y0, y1 = (float(v) for v in rect)
        if not all(math.isfinite(v) for v in (x0, x1, y0, y1)):
            raise ContractError("rectangle bounds must be finite")
        if x1 < x0 or y1 < y0:
            return np.zeros((0, 2))
        pts = _collect_rect(self._field, x0, x1, y0, y1)
        order = np.lexsort((pts[:, 0], pts[:, 1]))
        return pts[order]

    def extend(self, need_top: float, need_halfwidth: float, need_bottom: float | None = None) -> "SlabStore":
        """Generate every block meeting ``[-hw, hw] x [bottom, need_top]``."""
        if not (math.isfinite(need_top) and math.isfinite(need_halfwidth)):
            raise ContractError("extension bounds must be finite")
        if need_bottom is None:
            need_bottom = self.bounds()[2] if self.n_blocks else need_top - self.slab_height
        if need_halfwidth >= 0 and need_top >= need_bottom:
            _collect_rect(self._field, -need_halfwidth, need_halfwidth, need_bottom, need_top)
        return self

    def all_points(self) -> np.ndarray:
        """Every point generated so far, sorted by (y, x)."""
        blocks = list(self._field[1])
        if not blocks:
            return np.zeros((0, 2))
        pts = np.concatenate(blocks)
        return pts[np.lexsort((pts[:, 0], pts[:, 1]))]

    def dump_csv(self, path, rect: Sequence[float] | None = None) -> None:
        pts = self.all_points() if rect is None else self.points_in(rect)
        with open(path, "w", newline="\n") as fh:
            fh.write("x,y\n")
            for x, y in pts:
                fh.write(f"{x:.17g},{y:.17g}\n")


def sample_region(store: SlabStore, rect: Sequence[float]) -> list[Point]:
    """All points of ``store`` inside the closed rectangle ``(xmin, xmax, ymin, ymax)``."""
    return [Point(float(x), float(y)) for x, y in store.points_in(rect)]


def extend(store: SlabStore, need_top: float, need_halfwidth: float) -> SlabStore:
    return store.extend(need_top, need_halfwidth)
