"""Renewal steps of the joint exploration.

A good step is a renewal step when, for every walker, the semi-ball of
radius κ+1 below its vertical projection onto the moving level contains a
single unexplored point, and that point is also the single point within
distance 1 above the projection lifted by κ.  At a renewal the process is
restarted from the lifted projections, with the radius-(κ+1) semi-balls as
initial history and the unique points as extra candidates.  The segments
between consecutive renewals are i.i.d.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .errors import ContractError, RenewalTimeoutError
from .explore import (
    DEFAULT_KAPPA,
    ExplorationState,
    _check_event,
    _height,
    _is_good,
    _min_y,
    _restart,
    _step_k,
    initial_state,
)
from .forest import search_radii
from .geom import HistorySet, SemiBall, _in_hist
from .ppp import Point, SlabStore

DEFAULT_STEP_CAP = 1_000_000

_OK = 0
_TIMEOUT = 1
_LEVEL_CAP = 2


@njit(cache=True)
def _push(buf, n, x, y):
    if n == buf.shape[0]:
        grown = np.empty((2 * n + 16, 2))
        grown[:n] = buf[:n]
        buf = grown
    buf[n, 0] = x
    buf[n, 1] = y
    return buf


@njit(cache=True)
def _segment(F, pos, balls, extra, sf, si, cand, U, kappa, r0, rcap, step_cap, y_cap, verts, nv, record):
    """Step until a renewal event; returns ``(status, balls, block_size, verts, nv)``.

    On success the state is left at the renewal step (before the restart)
    and ``U`` holds the unique points.  The segment is abandoned once the
    step counter reaches ``step_cap`` or the moving ordinate exceeds ``y_cap``.
    """
    k = pos.shape[0]
    w = 0.0
    while True:
        balls, d, i = _step_k(F, pos, balls, extra, sf, si, cand, r0, rcap)
        w += d
        if record:
            verts = _push(verts, nv, pos[i, 0], pos[i, 1])
            nv += 1
        if _is_good(si[2], k, _height(balls, si[0], sf[0]), sf[0], sf[1], kappa):
            if _check_event(F, pos, balls, si[0], sf[0], kappa, U):
                return _OK, balls, w, verts, nv
            sf[1] = sf[0]
        if si[2] >= step_cap:
            return _TIMEOUT, balls, w, verts, nv
        if sf[0] > y_cap:
            return _LEVEL_CAP, balls, w, verts, nv


@njit(cache=True)
def _chain(F, pos0, kappa, L, r0, rcap, step_cap, zlo, zhi, y_cap, record):
    """Run up to ``L`` renewal segments from fresh starts ``pos0``.

    For k = 2 the chain also stops once the abscissa gap of the restart
    points is ``<= zlo`` or ``> zhi``; it stops for any k once the restart
    ordinate exceeds ``y_cap``.
    """
    k = pos0.shape[0]
    pos = pos0.copy()
    balls = np.zeros((max(16, 2 * k), 3))
    extra = np.zeros((k, 2))
    cand = np.zeros((2 * k, 2))
    U = np.zeros((k, 2))
    sf = np.array([_min_y(pos), _min_y(pos)])
    si = np.zeros(3, dtype=np.int64)
    betas = np.zeros(L, dtype=np.int64)
    wsum = np.zeros(L)
    levels = np.zeros(L)
    unew = np.zeros((L, k, 2))
    uext = np.zeros((L, k, 2))
    verts = np.zeros((64 if record else 0, 2))
    nv = 0
    if record:
        for i in range(k):
            verts = _push(verts, nv, pos[i, 0], pos[i, 1])
            nv += 1
    n = 0
    status = _OK
    while n < L:
        status, balls, w, verts, nv = _segment(
            F, pos, balls, extra, sf, si, cand, U, kappa, r0, rcap, step_cap, y_cap, verts, nv, record
        )
        if status != _OK:
            break
        betas[n] = si[2]
        wsum[n] = w
        levels[n] = sf[0]
        if balls.shape[0] < k:
            balls = np.zeros((2 * k, 3))
        _restart(pos, balls, extra, sf, si, kappa, U)
        unew[n] = pos
        uext[n] = U
        n += 1
        if k == 2:
            z = abs(pos[1, 0] - pos[0, 0])
            if z <= zlo or z > zhi:
                break
        if pos[0, 1] > y_cap:
            break
    return n, status, betas[:n], wsum[:n], levels[:n], unew[:n], uext[:n], verts[:nv].copy()


@njit(cache=True)
def _steps_to_level(F, pos, balls, extra, sf, si, cand, r0, rcap, t, step_cap):
    n = 0
    while True:
        balls, d, i = _step_k(F, pos, balls, extra, sf, si, cand, r0, rcap)
        if sf[0] > t:
            return n
        n += 1
        if n >= step_cap:
            return -1


@njit(cache=True)
def _original_vertices(F, pos0, y_stop, r0, rcap):
    """Vertices visited by the exploration without restarts until all walkers pass ``y_stop``."""
    k = pos0.shape[0]
    pos = pos0.copy()
    balls = np.zeros((16, 3))
    extra = np.zeros((k, 2))
    cand = np.zeros((2 * k, 2))
    sf = np.array([_min_y(pos), _min_y(pos)])
    si = np.zeros(3, dtype=np.int64)
    verts = np.zeros((64, 2))
    nv = 0
    for i in range(k):
        verts = _push(verts, nv, pos[i, 0], pos[i, 1])
        nv += 1
    while sf[0] <= y_stop:
        balls, d, i = _step_k(F, pos, balls, extra, sf, si, cand, r0, rcap)
        verts = _push(verts, nv, pos[i, 0], pos[i, 1])
        nv += 1
    return verts[:nv].copy()



@njit(cache=True)
def _event_log_bound(pos, balls, nb, clip, kappa, lam, h):
    """Upper bound on the log-probability of the renewal event at a good step.

    The event needs every point of ``B+((x_i, W), κ+1)`` outside the history
    to lie in ``B+((x_i, W+κ), 1)``, so the rest of that semi-ball must be
    empty.  Its area (grid of spacing ``h``) gives ``P <= exp(-λ area)``.
    """
    W = clip
    big = kappa + 1.0
    worst = 0.0
    for i in range(pos.shape[0]):
        gx = pos[i, 0]
        area = 0.0
        nx = int(2.0 * big / h)
        ny = int(big / h)
        for a in range(nx):
            x = gx - big + (a + 0.5) * h
            for b in range(ny):
                y = W + (b + 0.5) * h
                if (x - gx) ** 2 + (y - W) ** 2 > big * big:
                    continue
                if y >= W + kappa and (x - gx) ** 2 + (y - W - kappa) ** 2 <= 1.0:
                    continue
                if _in_hist(x, y, balls, nb, clip):
                    continue
                area += h * h
        worst = max(worst, area)
    return -lam * worst


@njit(cache=True)
def _good_step_bounds(F, pos0, kappa, n_good, step_cap, lam, h, r0, rcap):
    k = pos0.shape[0]
    pos = pos0.copy()
    balls = np.zeros((16, 3))
    extra = np.zeros((k, 2))
    cand = np.zeros((2 * k, 2))
    U = np.zeros((k, 2))
    sf = np.array([_min_y(pos), _min_y(pos)])
    si = np.zeros(3, dtype=np.int64)
    out = np.zeros(n_good)
    ng = 0
    events = 0
    steps = 0
    while ng < n_good and steps < step_cap:
        balls, d, i = _step_k(F, pos, balls, extra, sf, si, cand, r0, rcap)
        steps += 1
        if _is_good(si[2], k, _height(balls, si[0], sf[0]), sf[0], sf[1], kappa):
            out[ng] = _event_log_bound(pos, balls, si[0], sf[0], kappa, lam, h)
            ng += 1
            if _check_event(F, pos, balls, si[0], sf[0], kappa, U):
                events += 1
                if balls.shape[0] < k:
                    balls = np.zeros((2 * k, 3))
                _restart(pos, balls, extra, sf, si, kappa, U)
            else:
                sf[1] = sf[0]
    return out[:ng].copy(), events, steps


# ---------------------------------------------------------------------------
# Python API


@dataclass(frozen=True)
class RenewalRecord:
    ell: int
    beta: int
    varrho: int
    u_new: tuple[Point, ...]
    extra_new: tuple[Point, ...]
    h0_balls: tuple[SemiBall, ...]
    block_size: float

    @property
    def level(self) -> float:
        """Ordinate shared by the restart points."""
        return self.u_new[0].y


@dataclass(frozen=True)
class RenewalChain:
    """Arrays describing consecutive renewals of one chain."""

    starts: np.ndarray  # (k, 2)
    betas: np.ndarray  # (L,)
    block_sizes: np.ndarray  # (L,)
    move_levels: np.ndarray  # (L,) moving ordinate at each renewal step
    u_new: np.ndarray  # (L, k, 2)
    extra_new: np.ndarray  # (L, k, 2)
    kappa: int
    timed_out: bool = False
    level_capped: bool = False
    vertices: np.ndarray | None = None

    def __len__(self) -> int:
        return self.betas.shape[0]

    def records(self) -> list[RenewalRecord]:
        out = []
        varrho = 0
        for ell in range(len(self)):
            varrho += int(self.betas[ell])
            W = float(self.move_levels[ell])
            u = tuple(Point(float(x), float(y)) for x, y in self.u_new[ell])
            ex = tuple(dict.fromkeys(Point(float(x), float(y)) for x, y in self.extra_new[ell]))
            balls = tuple(dict.fromkeys(SemiBall(Point(p.x, W), self.kappa + 1.0) for p in u))
            out.append(RenewalRecord(ell + 1, int(self.betas[ell]), varrho, u, ex, balls, float(self.block_sizes[ell])))
        return out


def check_renewal_event(state: ExplorationState, store: SlabStore) -> list[Point] | None:
    """The unique points ``U_i`` if the renewal event holds at ``state``, else ``None``."""
    pos, balls, _, sf, si = state.to_arrays()
    U = np.zeros((state.k, 2))
    if _check_event(store.field, pos, balls, int(si[0]), sf[0], float(state.kappa), U):
        return [Point(float(x), float(y)) for x, y in U]
    return None


def run_to_renewal(
    state: ExplorationState,
    store: SlabStore,
    step_cap: int = DEFAULT_STEP_CAP,
    ell: int = 1,
    varrho_before: int = 0,
    radius_cap: float | None = None,
) -> tuple[RenewalRecord, ExplorationState]:
    """Advance to the next renewal step and restart from the regenerated data."""
    pos, balls, extra, sf, si = state.to_arrays()
    k = state.k
    if balls.shape[0] < k:
        balls = np.zeros((2 * k, 3))
    cand = np.zeros((k + extra.shape[0], 2))
    U = np.zeros((k, 2))
    r0, rcap = search_radii(store, radius_cap)
    status, balls, w, _, _ = _segment(
        store.field, pos, balls, extra, sf, si, cand, U, float(state.kappa), r0, rcap,
        int(step_cap), np.inf, np.zeros((0, 2)), 0, False,
    )
    if status != _OK:
        raise RenewalTimeoutError(f"no renewal within {step_cap} steps")
    beta = int(si[2])
    W = float(sf[0])
    if balls.shape[0] < k:
        balls = np.zeros((2 * k, 3))
    if extra.shape[0] < k:
        extra = np.zeros((k, 2))
    _restart(pos, balls, extra, sf, si, float(state.kappa), U)
    new_state = ExplorationState.from_arrays(pos, balls, extra, sf, si, state.kappa)
    u = new_state.positions
    balls_out = tuple(dict.fromkeys(SemiBall(Point(p.x, W), state.kappa + 1.0) for p in u))
    rec = RenewalRecord(ell, beta, varrho_before + beta, u, new_state.extra, balls_out, float(w))
    return rec, new_state


def renewal_chain(
    starts: Iterable[Sequence[float]],
    store: SlabStore,
    L: int,
    kappa: int = DEFAULT_KAPPA,
    step_cap: int = DEFAULT_STEP_CAP,
    stop_gap: tuple[float, float] | None = None,
    y_cap: float = math.inf,
    record_vertices: bool = False,
    radius_cap: float | None = None,
) -> RenewalChain:
    """Compiled loop over up to ``L`` renewals from fresh starting points.

    ``stop_gap = (lo, hi)`` (two walkers only) ends the chain as soon as the
    restart abscissa gap leaves ``(lo, hi]``.
    """
    st = initial_state(starts, kappa)
    if L < 1:
        raise ContractError("L must be at least 1")
    pos0 = np.array(st.positions, dtype=np.float64)
    lo, hi = (-1.0, math.inf) if stop_gap is None else (float(stop_gap[0]), float(stop_gap[1]))
    r0, rcap = search_radii(store, radius_cap)
    n, status, betas, wsum, levels, unew, uext, verts = _chain(
        store.field, pos0, float(kappa), int(L), r0, rcap, int(step_cap), lo, hi, float(y_cap), record_vertices
    )
    return RenewalChain(
        pos0, betas, wsum, levels, unew, uext, int(kappa),
        status == _TIMEOUT, status == _LEVEL_CAP, verts if record_vertices else None,
    )


def renewal_sequence(
    u_list: Iterable[Sequence[float]],
    store: SlabStore,
    L: int,
    kappa: int = DEFAULT_KAPPA,
    step_cap: int = DEFAULT_STEP_CAP,
) -> list[RenewalRecord]:
    """``L`` successive renewal records from the starting points ``u_list``."""
    chain = renewal_chain(u_list, store, L, kappa, step_cap)
    if chain.timed_out or len(chain) < L:
        raise RenewalTimeoutError(f"no renewal within {step_cap} steps")
    return chain.records()


def steps_to_level(state: ExplorationState, store: SlabStore, t: float, step_cap: int = DEFAULT_STEP_CAP) -> int:
    """Number of steps n with ``W_n <= t < W_{n+1}`` (moving ordinates)."""
    if t < state.move_level:
        raise ContractError("level below the current moving ordinate")
    pos, balls, extra, sf, si = state.to_arrays()
    cand = np.zeros((state.k + extra.shape[0], 2))
    r0, rcap = search_radii(store)
    n = _steps_to_level(store.field, pos, balls, extra, sf, si, cand, r0, rcap, float(t), int(step_cap))
    if n < 0:
        raise RenewalTimeoutError(f"level {t} not passed within {step_cap} steps")
    return int(n)


def original_vertices(starts: Iterable[Sequence[float]], store: SlabStore, y_stop: float) -> np.ndarray:
    """Vertices of the exploration without restarts until every walker is above ``y_stop``."""
    pos0 = np.array([tuple(p) for p in starts], dtype=np.float64).reshape(-1, 2)
    r0, rcap = search_radii(store)
    return _original_vertices(store.field, pos0, float(y_stop), r0, rcap)


def event_log_bounds(
    starts: Iterable[Sequence[float]],
    store: SlabStore,
    n_good: int,
    kappa: int = DEFAULT_KAPPA,
    step_cap: int = DEFAULT_STEP_CAP,
    grid: float = 0.05,
) -> tuple[np.ndarray, int, int]:
    """Natural-log ceilings on the renewal-event probability at successive good steps.

    Returns ``(bounds, events, steps)``: one bound per good step visited
    (at most ``n_good``), the number of renewal events that occurred and the
    number of steps taken.
    """
    st = initial_state(starts, kappa)
    pos0 = np.array(st.positions, dtype=np.float64)
    r0, rcap = search_radii(store)
    b, ev, n = _good_step_bounds(
        store.field, pos0, float(kappa), int(n_good), int(step_cap), store.intensity, float(grid), r0, rcap
    )
    return b, int(ev), int(n)
