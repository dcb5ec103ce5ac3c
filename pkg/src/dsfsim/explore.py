"""Joint exploration of k paths of the forest with a shared history set.

At every step the lowest walker (ties: leftmost, then lowest index) moves to
its closest admissible point above it.  Admissible points are store points
outside the history set, the positions of the walkers that stay, and the
extra points of the initial configuration.  Walkers sitting on the same
point move together, so coalesced paths stay glued.  The history set is the
union of the semi-balls swept by the moves, clipped at the lowest walker.

The compiled kernels below work on plain arrays:

``pos``     (k, 2) walker positions
``balls``   (cap, 3) semi-balls ``(cx, cy, r)``; only the first ``nb`` rows are live
``extra``   (cap, 2) extra points; only the first ``ne`` rows are live
``sf``      floats ``[clip, last_good_level]``
``si``      ints ``[nb, ne, step]``
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .errors import ContractError, InvariantViolation
from .forest import _nearest_above, search_radii
from .geom import HistorySet, _height, _in_hist, _prune, _semiball_meets_cone, history_height, in_history
from .ppp import Point, SlabStore, _collect_rect, as_point

DEFAULT_KAPPA = 6
_HEIGHT_TOL = 1e-9


@njit(cache=True)
def _select_mover(pos):
    i0 = 0
    for i in range(1, pos.shape[0]):
        if pos[i, 1] < pos[i0, 1] or (pos[i, 1] == pos[i0, 1] and pos[i, 0] < pos[i0, 0]):
            i0 = i
    return i0


@njit(cache=True)
def _min_y(pos):
    m = pos[0, 1]
    for i in range(1, pos.shape[0]):
        if pos[i, 1] < m:
            m = pos[i, 1]
    return m


@njit(cache=True)
def _step_k(F, pos, balls, extra, sf, si, cand, r0, rcap):
    """One exploration step in place; returns ``(balls, displacement, mover)``."""
    k = pos.shape[0]
    nb = si[0]
    ne = si[1]
    clip = sf[0]
    i = _select_mover(pos)
    mx = pos[i, 0]
    my = pos[i, 1]
    nc = 0
    for j in range(k):
        if not (pos[j, 0] == mx and pos[j, 1] == my):
            cand[nc, 0] = pos[j, 0]
            cand[nc, 1] = pos[j, 1]
            nc += 1
    for j in range(ne):
        cand[nc, 0] = extra[j, 0]
        cand[nc, 1] = extra[j, 1]
        nc += 1
    h_old = _height(balls, nb, clip)
    ax, ay, d = _nearest_above(F, mx, my, balls, nb, clip, cand, nc, r0, rcap)
    for j in range(k):
        if pos[j, 0] == mx and pos[j, 1] == my:
            pos[j, 0] = ax
            pos[j, 1] = ay
    if nb == balls.shape[0]:
        grown = np.empty((2 * nb + 4, 3))
        grown[:nb] = balls[:nb]
        balls = grown
    balls[nb, 0] = mx
    balls[nb, 1] = my
    balls[nb, 2] = d
    nb += 1
    clip = _min_y(pos)
    nb = _prune(balls, nb, clip)
    h_new = _height(balls, nb, clip)
    if h_new > max(h_old, d) + _HEIGHT_TOL * (1.0 + abs(clip)):
        raise InvariantViolation("history height grew beyond the last displacement")
    sf[0] = clip
    si[0] = nb
    si[2] += 1
    return balls, d, i


@njit(cache=True)
def _is_good(step, k, height, clip, last_good, kappa):
    return step > 0 and step % k == 0 and height <= kappa and clip >= last_good + kappa + 1.0


@njit(cache=True)
def _check_event(F, pos, balls, nb, clip, kappa, U):
    """Renewal event at the current (good) step; fills ``U`` with the unique points."""
    k = pos.shape[0]
    W = clip
    big = kappa + 1.0
    for i in range(k):
        gx = pos[i, 0]
        cand = _collect_rect(F, gx - big, gx + big, W, W + big)
        nbig = 0
        bx = 0.0
        by = 0.0
        for j in range(cand.shape[0]):
            px = cand[j, 0]
            py = cand[j, 1]
            if math.sqrt((px - gx) * (px - gx) + (py - W) * (py - W)) <= big:
                if not _in_hist(px, py, balls, nb, clip):
                    nbig += 1
                    bx = px
                    by = py
        if nbig != 1:
            return False
        uy = W + kappa
        nsmall = 0
        sx = 0.0
        sy = 0.0
        for j in range(cand.shape[0]):
            px = cand[j, 0]
            py = cand[j, 1]
            if py >= uy and math.sqrt((px - gx) * (px - gx) + (py - uy) * (py - uy)) <= 1.0:
                nsmall += 1
                sx = px
                sy = py
        if nsmall != 1 or sx != bx or sy != by:
            return False
        U[i, 0] = bx
        U[i, 1] = by
    return True


@njit(cache=True)
def _restart(pos, balls, extra, sf, si, kappa, U):
    """Replace the state by the regenerated starting configuration."""
    k = pos.shape[0]
    W = sf[0]
    newy = W + kappa
    nb = 0
    ne = 0
    for i in range(k):
        gx = pos[i, 0]
        seen = False
        for j in range(nb):
            if balls[j, 0] == gx:
                seen = True
        if not seen:
            balls[nb, 0] = gx
            balls[nb, 1] = W
            balls[nb, 2] = kappa + 1.0
            nb += 1
        seen = False
        for j in range(ne):
            if extra[j, 0] == U[i, 0] and extra[j, 1] == U[i, 1]:
                seen = True
        if not seen:
            extra[ne, 0] = U[i, 0]
            extra[ne, 1] = U[i, 1]
            ne += 1
        pos[i, 1] = newy
    sf[0] = newy
    sf[1] = newy
    si[0] = nb
    si[1] = ne
    si[2] = 0


@njit(cache=True)
def _unexplored_apex(pos, balls, nb, clip):
    i = _select_mover(pos)
    h = _height(balls, nb, clip)
    l = max(h / 2.0, 1.0)
    return pos[i, 0], pos[i, 1] + l


@njit(cache=True)
def _cone_applicable(pos, balls, nb, clip):
    """Whether the mover sits in the history set, the case where the cone must avoid it."""
    if nb == 0:
        return True
    i = _select_mover(pos)
    return _in_hist(pos[i, 0], pos[i, 1], balls, nb, clip)


@njit(cache=True)
def _cone_hits_history(pos, balls, nb, clip):
    ax, ay = _unexplored_apex(pos, balls, nb, clip)
    for j in range(nb):
        if _semiball_meets_cone(ax, ay, balls[j, 0], balls[j, 1], balls[j, 2]):
            return True
    return False


@njit(cache=True)
def _nearest_in_cone(F, ax, ay, r0, rcap):
    R = r0
    while True:
        pts = _collect_rect(F, ax - R, ax + R, ay, ay + R)
        best = np.inf
        for j in range(pts.shape[0]):
            dx = pts[j, 0] - ax
            dy = pts[j, 1] - ay
            if dy > 0 and abs(dx) <= dy:
                d = math.sqrt(dx * dx + dy * dy)
                if d <= R and d < best:
                    best = d
        if best <= R:
            return best
        R *= 2.0
        if R > 2.0 * rcap:
            return np.inf



@njit(cache=True)
def _cone_scan(F, pos0, n, r0, rcap):
    """Run ``n`` steps from ``pos0``, checking the unexplored cone before each one."""
    k = pos0.shape[0]
    pos = pos0.copy()
    balls = np.zeros((16, 3))
    extra = np.zeros((k, 2))
    cand = np.zeros((2 * k, 2))
    sf = np.array([_min_y(pos), _min_y(pos)])
    si = np.zeros(3, dtype=np.int64)
    checked = 0
    hits = 0
    for _ in range(n):
        if _cone_applicable(pos, balls, si[0], sf[0]):
            checked += 1
            if _cone_hits_history(pos, balls, si[0], sf[0]):
                hits += 1
        balls, d, i = _step_k(F, pos, balls, extra, sf, si, cand, r0, rcap)
    return checked, hits


# ---------------------------------------------------------------------------
# Python API


@dataclass(frozen=True)
class ExplorationState:
    """Positions of k walkers plus the shared history and bookkeeping."""

    positions: tuple[Point, ...]
    history: HistorySet
    extra: tuple[Point, ...] = ()
    step: int = 0
    last_good_level: float = 0.0
    kappa: int = DEFAULT_KAPPA

    @property
    def k(self) -> int:
        return len(self.positions)

    @property
    def move_level(self) -> float:
        return min(p.y for p in self.positions)

    @property
    def height(self) -> float:
        return history_height(self.history)

    # conversions to the kernel representation
    def to_arrays(self):
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 2)
        hb = self.history.as_array()
        balls = np.zeros((max(2 * hb.shape[0], 8), 3))
        balls[: hb.shape[0]] = hb
        extra = np.zeros((max(len(self.extra), self.k), 2))
        if self.extra:
            extra[: len(self.extra)] = np.array(self.extra, dtype=np.float64)
        sf = np.array([self.history.clip_level, self.last_good_level], dtype=np.float64)
        si = np.array([hb.shape[0], len(self.extra), self.step], dtype=np.int64)
        return pos, balls, extra, sf, si

    @classmethod
    def from_arrays(cls, pos, balls, extra, sf, si, kappa) -> "ExplorationState":
        nb, ne, step = (int(v) for v in si)
        return cls(
            positions=tuple(Point(float(x), float(y)) for x, y in pos),
            history=HistorySet.from_array(sf[0], balls[:nb]),
            extra=tuple(Point(float(x), float(y)) for x, y in extra[:ne]),
            step=step,
            last_good_level=float(sf[1]),
            kappa=int(kappa),
        )


def initial_state(
    starts: Iterable[Sequence[float]],
    kappa: int = DEFAULT_KAPPA,
    history: HistorySet | None = None,
    extra: Iterable[Sequence[float]] = (),
) -> ExplorationState:
    """Validated starting configuration; history defaults to empty."""
    pos = tuple(as_point(p) for p in starts)
    if not pos:
        raise ContractError("at least one starting point is required")
    if int(kappa) != kappa or kappa < 6:
        raise ContractError(f"kappa must be an integer >= 6, got {kappa}")
    ys = [p.y for p in pos]
    if max(ys) - min(ys) > kappa:
        raise ContractError("starting ordinates must lie within kappa of each other")
    clip = min(ys)
    if history is None:
        history = HistorySet.empty(clip)
    else:
        history = HistorySet(clip, tuple(b for b in history.balls if b.top > clip))
    if history_height(history) > 1.0 + _HEIGHT_TOL:
        raise ContractError("initial history must have height at most 1")
    ex = tuple(as_point(p) for p in extra)
    for p in ex:
        if not in_history(p, history) or p.y > clip + 1.0:
            raise ContractError(f"extra point {p} must lie in the history within one unit of the clip")
    return ExplorationState(pos, history, ex, 0, clip, int(kappa))


def select_mover(state: ExplorationState | Sequence[Sequence[float]]) -> int:
    positions = state.positions if isinstance(state, ExplorationState) else state
    pos = np.array([tuple(p) for p in positions], dtype=np.float64).reshape(-1, 2)
    return int(_select_mover(pos))


def step_details(state: ExplorationState, store: SlabStore, radius_cap: float | None = None):
    """Advance one step; returns ``(new_state, mover_index, displacement)``."""
    pos, balls, extra, sf, si = state.to_arrays()
    cand = np.zeros((state.k + extra.shape[0], 2))
    r0, rcap = search_radii(store, radius_cap)
    balls, d, i = _step_k(store.field, pos, balls, extra, sf, si, cand, r0, rcap)
    return ExplorationState.from_arrays(pos, balls, extra, sf, si, state.kappa), int(i), float(d)


def step(state: ExplorationState, store: SlabStore) -> ExplorationState:
    return step_details(state, store)[0]


def step_resampled(state: ExplorationState, fresh_store: SlabStore) -> ExplorationState:
    """Same transition rule, with candidates drawn from an independent store."""
    return step_details(state, fresh_store)[0]


def is_good_step(state: ExplorationState) -> bool:
    return bool(
        _is_good(state.step, state.k, state.height, state.move_level, state.last_good_level, state.kappa)
    )


def unexplored_apex(state: ExplorationState) -> Point:
    i = select_mover(state)
    l = max(state.height / 2.0, 1.0)
    p = state.positions[i]
    return Point(p.x, p.y + l)


def cone_avoids_history(state: ExplorationState) -> bool | None:
    """Whether the unexplored cone misses the history; ``None`` when not applicable.

    The property is guaranteed only when the moving walker lies in the
    history set (it has moved before, or it sits on a restart point).  A
    starting point that has not moved yet can have history balls right next
    to it, in which case ``None`` is returned.
    """
    pos, balls, _, sf, si = state.to_arrays()
    if not _cone_applicable(pos, balls, int(si[0]), sf[0]):
        return None
    return not _cone_hits_history(pos, balls, int(si[0]), sf[0])


def zeta(state: ExplorationState, store: SlabStore, radius_cap: float | None = None) -> float:
    """Distance from the unexplored-cone apex to the nearest store point in the cone."""
    if cone_avoids_history(state) is False:
        raise InvariantViolation("unexplored cone intersects the history set")
    apex = unexplored_apex(state)
    r0, rcap = search_radii(store, radius_cap)
    return float(_nearest_in_cone(store.field, apex.x, apex.y, r0, rcap))


def run_steps(state: ExplorationState, store: SlabStore, n: int) -> list[ExplorationState]:
    """States after each of ``n`` steps of the original process (no restarts)."""
    out = []
    for _ in range(n):
        state = step(state, store)
        out.append(state)
    return out


def cone_scan(starts: Iterable[Sequence[float]], store: SlabStore, n_steps: int) -> tuple[int, int]:
    """Cone checks over ``n_steps`` steps of the original process: ``(checked, intersections)``."""
    pos0 = np.array([tuple(as_point(p)) for p in starts], dtype=np.float64).reshape(-1, 2)
    r0, rcap = search_radii(store)
    checked, hits = _cone_scan(store.field, pos0, int(n_steps), r0, rcap)
    return int(checked), int(hits)
