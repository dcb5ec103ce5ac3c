"""Coalescence times of two forest paths, the gap chain at renewals, and drift checks.

Two paths started at the same ordinate are traced by always advancing the
lower one.  Distinct forest edges never cross, so the parameterized paths
first agree at the ordinate of their first shared vertex; the interpolated
difference is nonetheless checked on every overlap to catch contacts inside
segments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .errors import ContractError, DomainError
from .explore import DEFAULT_KAPPA
from .forest import _nearest_above, search_radii
from .ppp import Point, SlabStore, as_point
from .renewal import DEFAULT_STEP_CAP, renewal_chain
from .stats import Moments

CONTACT_TOL = 1e-9
LAPLACE_BINS = ((14.0, 19.0), (19.0, 24.0), (24.0, 29.0), (29.0, 34.0))
MIN_BIN_COUNT = 50


@njit(cache=True)
def _segment_contact(ax0, ay0, ax1, ay1, bx0, by0, bx1, by1, lo, hi, tol):
    """First time in ``[lo, hi]`` where two segments share an abscissa, or nan."""
    def at(x0, y0, x1, y1, t):
        if y1 == y0:
            return x1
        return x0 + (x1 - x0) * (t - y0) / (y1 - y0)

    d0 = at(ax0, ay0, ax1, ay1, lo) - at(bx0, by0, bx1, by1, lo)
    if abs(d0) <= tol:
        return lo
    d1 = at(ax0, ay0, ax1, ay1, hi) - at(bx0, by0, bx1, by1, hi)
    if abs(d1) <= tol:
        return hi
    if d0 * d1 < 0:
        return lo + (hi - lo) * d0 / (d0 - d1)
    return np.nan


@njit(cache=True)
def _coalesce(F, x1, y1, x2, y2, t_cap, r0, rcap, tol):
    """Returns ``(T, censored)`` for the forest paths from ``(x1,y1)`` and ``(x2,y2)``."""
    if x1 == x2 and y1 == y2:
        return y1, False
    balls = np.zeros((0, 3))
    extra = np.zeros((0, 2))
    # current segment of each path: previous vertex -> current vertex
    pax, pay, cax, cay = x1, y1, x1, y1
    pbx, pby, cbx, cby = x2, y2, x2, y2
    while True:
        if cax == cbx and cay == cby:
            # shared vertex; an earlier contact inside the segments is checked below
            lo = max(pay, pby)
            t = _segment_contact(pax, pay, cax, cay, pbx, pby, cbx, cby, lo, cay, tol)
            if np.isnan(t):
                t = cay
            if t > t_cap:
                return t_cap, True
            return t, False
        # advance the path whose current vertex is lower
        if cay < cby or (cay == cby and cax < cbx):
            nx, ny, _ = _nearest_above(F, cax, cay, balls, 0, -np.inf, extra, 0, r0, rcap)
            pax, pay, cax, cay = cax, cay, nx, ny
        else:
            nx, ny, _ = _nearest_above(F, cbx, cby, balls, 0, -np.inf, extra, 0, r0, rcap)
            pbx, pby, cbx, cby = cbx, cby, nx, ny
        lo = max(pay, pby)
        hi = min(cay, cby)
        if lo < hi or (lo == hi and cax != cbx):
            t = _segment_contact(pax, pay, cax, cay, pbx, pby, cbx, cby, lo, hi, tol)
            if not np.isnan(t):
                if t > t_cap:
                    return t_cap, True
                return t, False
        if lo > t_cap:
            return t_cap, True


@dataclass(frozen=True)
class CoalescenceSample:
    z0: float
    T: float
    censored: bool
    nu: int | None = None
    z_path: tuple[float, ...] = field(default_factory=tuple)

    @property
    def nu_censored(self) -> bool:
        return self.nu is None


def coalescence_time(
    u1: Sequence[float],
    u2: Sequence[float],
    store: SlabStore,
    t_cap: float,
    *,
    with_chain: bool = True,
    kappa: int = DEFAULT_KAPPA,
    max_renewals: int = 10_000,
    step_cap: int = DEFAULT_STEP_CAP,
) -> CoalescenceSample:
    """Coalescence time of the paths from ``u1`` and ``u2`` (censored at ``t_cap``).

    ``T`` is measured from the common starting ordinate.  With ``with_chain``
    the two-walker renewal chain is run on the same store and its restart gaps
    ``Z_0 = z0, Z_1, ...`` are recorded until the gap reaches 0 (``nu``) or
    the restart ordinate passes ``u1.y + t_cap``.
    """
    u1, u2 = as_point(u1), as_point(u2)
    if u1.y != u2.y:
        raise ContractError("starting points must share their ordinate")
    if u1.x > u2.x:
        raise ContractError("u1 must lie left of u2")
    z0 = u2.x - u1.x
    if t_cap < 0:
        raise ContractError("t_cap must be nonnegative")
    if z0 == 0:
        return CoalescenceSample(0.0, 0.0, False, 0, (0.0,))
    r0, rcap = search_radii(store)
    T, cens = _coalesce(store.field, u1.x, u1.y, u2.x, u2.y, u1.y + float(t_cap), r0, rcap, CONTACT_TOL)
    T = float(T) - u1.y
    nu = None
    zs: tuple[float, ...] = (z0,)
    if with_chain:
        chain = renewal_chain(
            [u1, u2], store, max_renewals, kappa, step_cap, stop_gap=(0.0, math.inf), y_cap=u1.y + float(t_cap)
        )
        gaps = np.abs(chain.u_new[:, 1, 0] - chain.u_new[:, 0, 0]) if len(chain) else np.zeros(0)
        zs = (z0,) + tuple(float(g) for g in gaps)
        hits = np.flatnonzero(gaps == 0.0)
        if hits.size:
            nu = int(hits[0]) + 1
    return CoalescenceSample(z0, T, bool(cens), nu, zs)


def f_transform(x):
    """``f(x) = (1/2 + 1/(x+2)) x``, increasing and concave on ``[0, inf)``."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("f is defined on nonnegative reals")
    out = (0.5 + 1.0 / (arr + 2.0)) * arr
    return float(out) if out.ndim == 0 else out


def y_increment(z: float, z_next: float, m0: float) -> float:
    """Increment of ``Y = f(Z) 1{Z > m0 so far}`` over one transition."""
    if z <= m0:
        return 0.0
    return (f_transform(z_next) if z_next > m0 else 0.0) - f_transform(z)


def transitions(z_paths: Iterable[Sequence[float]], first_index: int = 1) -> np.ndarray:
    """Consecutive pairs ``(Z_l, Z_{l+1})`` with ``l >= first_index`` from gap paths."""
    out = []
    for zs in z_paths:
        zs = list(zs)
        for ell in range(first_index, len(zs) - 1):
            out.append((zs[ell], zs[ell + 1]))
    return np.asarray(out, dtype=np.float64).reshape(-1, 2)


@dataclass(frozen=True)
class LaplaceBin:
    lo: float
    hi: float
    n: int
    drift: float
    drift_se: float
    second: float
    third: float

    @property
    def populated(self) -> bool:
        return self.n >= MIN_BIN_COUNT

    @property
    def drift_ok(self) -> bool:
        return self.drift <= 2.0 * self.drift_se

    def passes(self, second_min: float = 0.05, third_max: float = 500.0) -> bool:
        return self.drift_ok and self.second >= second_min and self.third <= third_max


@dataclass(frozen=True)
class LaplaceReport:
    m0: float
    bins: tuple[LaplaceBin, ...]
    n_transitions: int

    @property
    def evaluated(self) -> tuple[LaplaceBin, ...]:
        return tuple(b for b in self.bins if b.populated)

    @property
    def flagged(self) -> tuple[LaplaceBin, ...]:
        return tuple(b for b in self.bins if not b.populated)

    def passes(self) -> bool:
        ev = self.evaluated
        return bool(ev) and all(b.passes() for b in ev)


def laplace_conditions(
    z_samples, m0: float = 14.0, bins: Sequence[tuple[float, float]] = LAPLACE_BINS
) -> LaplaceReport:
    """Per-bin moments of ``ΔY`` given the current gap ``Z`` in ``(lo, hi]``.

    ``z_samples`` is an array of transitions ``(Z, Z')``.  Bins lying at or
    below ``m0`` are rejected; bins with fewer than 50 transitions are kept
    in the report but flagged as not evaluated.
    """
    tr = np.asarray(z_samples, dtype=np.float64).reshape(-1, 2)
    if np.any(tr < 0):
        raise DomainError("gaps must be nonnegative")
    out = []
    for lo, hi in bins:
        if lo < m0:
            raise ContractError("bins must lie above m0")
        sel = tr[(tr[:, 0] > lo) & (tr[:, 0] <= hi)]
        m = Moments()
        for z, zn in sel:
            m.add(y_increment(z, zn, m0))
        out.append(
            LaplaceBin(
                float(lo), float(hi), m.n,
                m.mean if m.n else math.nan, m.sem if m.n > 1 else math.nan,
                m.mean_square, m.mean_abs3,
            )
        )
    return LaplaceReport(float(m0), tuple(out), int(tr.shape[0]))


@dataclass(frozen=True)
class TailTable:
    t: np.ndarray
    survival: np.ndarray
    se: np.ndarray
    n: int

    def rows(self):
        for t, s, e in zip(self.t, self.survival, self.se):
            yield float(t), float(s), float(e), self.n


def tail_curve(samples: Sequence[CoalescenceSample] | np.ndarray, t_grid: Sequence[float]) -> TailTable:
    """Empirical ``P(T > t)`` on ``t_grid`` with binomial standard errors.

    A censored sample counts as surviving past every grid point, which needs
    the censoring cap to be at least ``max(t_grid)``.
    """
    grid = np.asarray(t_grid, dtype=np.float64)
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ContractError("time grid must be positive and increasing")
    if isinstance(samples, np.ndarray):
        times = samples.astype(np.float64)
    else:
        if len(samples) == 0:
            raise ContractError("no samples")
        for s in samples:
            if s.censored and s.T < grid[-1]:
                raise ContractError("censoring cap below the largest grid time")
        times = np.array([math.inf if s.censored else s.T for s in samples])
    if times.size == 0:
        raise ContractError("no samples")
    n = times.size
    surv = np.array([(times > t).sum() / n for t in grid])
    se = np.sqrt(surv * (1.0 - surv) / n)
    return TailTable(grid, surv, se, n)


def coalescence_times(
    z0: float,
    store: SlabStore,
    t_cap: float,
    base: Sequence[float] = (0.0, 0.0),
) -> float:
    """Convenience: coalescence time (inf when censored) of ``base`` and ``base + (z0, 0)``."""
    b = as_point(base)
    s = coalescence_time(b, Point(b.x + z0, b.y), store, t_cap, with_chain=False)
    return math.inf if s.censored else s.T
