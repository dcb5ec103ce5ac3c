"""Diffusive rescaling of paths, renewal-based normalizers and the η statistic."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numba import njit, types
from numba.typed import Dict

from .errors import ContractError, RenewalTimeoutError
from .explore import DEFAULT_KAPPA
from .forest import PathPolyline, _nearest_above, _trace, search_radii
from .ppp import SlabStore, _collect_rect
from .renewal import DEFAULT_STEP_CAP, renewal_chain

DISTINCT_TOL = 1e-9
_XY = types.UniTuple(types.float64, 2)


@dataclass(frozen=True)
class ScaleParams:
    n: int
    gamma: float
    sigma: float

    def __post_init__(self):
        if self.n < 1:
            raise ContractError("n must be a positive integer")
        if not (self.gamma > 0 and self.sigma > 0):
            raise ContractError("gamma and sigma must be positive")

    @property
    def time_unit(self) -> float:
        return self.n * self.n * self.gamma

    @property
    def space_unit(self) -> float:
        return self.n * self.sigma


def scale_path(path: PathPolyline, p: ScaleParams) -> PathPolyline:
    """Map every vertex ``(x, y)`` to ``(x/(nσ), y/(n²γ))``."""
    v = path.vertices
    return PathPolyline(np.column_stack((v[:, 0] / p.space_unit, v[:, 1] / p.time_unit)))


# ---------------------------------------------------------------------------
# γ and σ from renewal increments


@dataclass(frozen=True)
class GammaSigma:
    gamma: float
    gamma_se: float
    sigma: float
    sigma_se: float
    gamma_first: float
    sigma_first: float
    n_increments: int
    dx: np.ndarray
    dy: np.ndarray

    def params(self, n: int) -> ScaleParams:
        return ScaleParams(n, self.gamma, self.sigma)


def renewal_increments(store: SlabStore, L: int, kappa: int = DEFAULT_KAPPA, step_cap: int = DEFAULT_STEP_CAP):
    """Displacements ``u^(l+1) - u^(l)`` of a one-walker renewal chain from the origin.

    Returns ``(first, rest)``: the ``l = 0 -> 1`` increment (or None) and an
    array of the stationary increments ``l >= 1``.
    """
    chain = renewal_chain([(0.0, 0.0)], store, L, kappa, step_cap)
    if len(chain) == 0:
        return None, np.zeros((0, 2))
    u = np.vstack([[0.0, 0.0], chain.u_new[:, 0, :]])
    inc = np.diff(u, axis=0)
    return inc[0], inc[1:]


def estimate_gamma_sigma(
    replications: int,
    store_factory: Callable[[int], SlabStore],
    L: int = 20,
    kappa: int = DEFAULT_KAPPA,
    step_cap: int = DEFAULT_STEP_CAP,
) -> GammaSigma:
    """Mean ordinate gain γ and abscissa standard deviation σ per renewal.

    One chain of up to ``L`` renewals per replication; ``store_factory(i)``
    supplies the i-th independent store.  The estimates use increments with
    index ``l >= 1``; the first increment's estimates are reported alongside.
    """
    if replications < 100:
        raise ContractError("at least 100 replications are needed")
    pairs = [renewal_increments(store_factory(i), L, kappa, step_cap) for i in range(replications)]
    return gamma_sigma_from_increments(pairs)


def gamma_sigma_from_increments(pairs) -> GammaSigma:
    """Estimates from ``(first, rest)`` increment pairs as returned by :func:`renewal_increments`."""
    firsts = [f for f, _ in pairs if f is not None]
    rests = [r for _, r in pairs]
    inc = np.vstack(rests) if rests else np.zeros((0, 2))
    if inc.shape[0] < 2:
        raise RenewalTimeoutError("too few renewals to estimate gamma and sigma")
    dx, dy = inc[:, 0], inc[:, 1]
    m = dx.size
    gamma = float(dy.mean())
    gamma_se = float(dy.std(ddof=1) / math.sqrt(m))
    var = float(dx.var(ddof=1))
    sigma = math.sqrt(var)
    # delta method: Var(s²) ≈ (μ4 - σ⁴)/m, se(s) ≈ se(s²)/(2s)
    mu4 = float(np.mean((dx - dx.mean()) ** 4))
    sigma_se = math.sqrt(max(mu4 - var * var, 0.0) / m) / (2 * sigma) if sigma > 0 else math.nan
    f = np.asarray(firsts).reshape(-1, 2)
    g0 = float(f[:, 1].mean()) if f.shape[0] else math.nan
    s0 = float(f[:, 0].std(ddof=1)) if f.shape[0] > 1 else math.nan
    return GammaSigma(gamma, gamma_se, sigma, sigma_se, g0, s0, m, dx, dy)


# ---------------------------------------------------------------------------
# η: distinct positions at a later time of paths through an interval


def eta_count(paths: Sequence[PathPolyline], t0: float, t: float, a: float, b: float) -> int:
    """Number of distinct positions at ``t0 + t`` of paths started by ``t0`` inside ``[a, b]`` at ``t0``."""
    if not a < b:
        raise ContractError("need a < b")
    if not t > 0:
        raise ContractError("need t > 0")
    vals = []
    for p in paths:
        v = p.vertices
        if v[0, 1] > t0 or v[-1, 1] < t0 + t:
            continue
        x0 = float(np.interp(t0, v[:, 1], v[:, 0]))
        if a <= x0 <= b:
            vals.append(float(np.interp(t0 + t, v[:, 1], v[:, 0])))
    return _count_distinct(vals)


def _count_distinct(vals) -> int:
    if not len(vals):
        return 0
    s = np.sort(np.asarray(vals, dtype=np.float64))
    return int(1 + np.count_nonzero(np.diff(s) > DISTINCT_TOL))


@njit(cache=True)
def _eta_positions(F, T0, A, E, tau, margin, r0, rcap):
    """Positions at ``T0 + tau`` of the forest paths crossing level ``T0`` inside ``[A, A+E]``."""
    pts = _collect_rect(F, A - margin, A + E + margin, T0 - margin, T0)
    balls = np.zeros((0, 3))
    extra = np.zeros((0, 2))
    memo = Dict.empty(key_type=_XY, value_type=types.float64)
    out = np.empty(pts.shape[0])
    n = 0
    T1 = T0 + tau
    for j in range(pts.shape[0]):
        px = pts[j, 0]
        py = pts[j, 1]
        hx, hy, _ = _nearest_above(F, px, py, balls, 0, -np.inf, extra, 0, r0, rcap)
        if hy < T0:
            continue
        if py == T0:
            x0 = px
        else:
            x0 = px + (hx - px) * (T0 - py) / (hy - py)
        if x0 < A or x0 > A + E:
            continue
        # follow the path from (px, py) until it passes T1, reusing known tails
        stack = np.empty((16, 2))
        ns = 0
        cx, cy = px, py
        nx, ny = hx, hy
        val = np.nan
        while True:
            key = (cx, cy)
            if key in memo:
                val = memo[key]
                break
            if ns == stack.shape[0]:
                g = np.empty((2 * ns, 2))
                g[:ns] = stack[:ns]
                stack = g
            stack[ns, 0] = cx
            stack[ns, 1] = cy
            ns += 1
            if ny >= T1:
                val = cx + (nx - cx) * (T1 - cy) / (ny - cy)
                break
            cx, cy = nx, ny
            nx, ny, _ = _nearest_above(F, cx, cy, balls, 0, -np.inf, extra, 0, r0, rcap)
        for q in range(ns):
            memo[(stack[q, 0], stack[q, 1])] = val
        out[n] = val
        n += 1
    return out[:n].copy()


def eta_forest(store: SlabStore, T0: float, A: float, E: float, tau: float) -> int:
    """η for the whole forest of ``store`` in original (unscaled) coordinates."""
    if not E > 0 or not tau > 0:
        raise ContractError("interval length and duration must be positive")
    r0, rcap = search_radii(store)
    margin = 6.0 / math.sqrt(store.intensity)
    vals = _eta_positions(store.field, float(T0), float(A), float(E), float(tau), margin, r0, rcap)
    return _count_distinct(vals)


def bw_pair_survival(d: float, t: float) -> float:
    """Probability that coalescing Brownian motions started ``d`` apart are distinct at time ``t``."""
    if d < 0 or t < 0:
        raise ContractError("d and t must be nonnegative")
    if t == 0:
        return 1.0 if d > 0 else 0.0
    return math.erf(d / (2.0 * math.sqrt(t)))


# ---------------------------------------------------------------------------
# single-path statistics


def endpoint(store: SlabStore, t: float, start: Sequence[float] = (0.0, 0.0)) -> float:
    """Abscissa of the forest path from ``start`` at ordinate ``start.y + t``."""
    r0, rcap = search_radii(store)
    v = _trace(store.field, float(start[0]), float(start[1]), float(start[1]) + t, r0, rcap)
    return float(np.interp(float(start[1]) + t, v[:, 1], v[:, 0]))


def standardized_endpoint(store: SlabStore, p: ScaleParams) -> float:
    """``π^0(n²γ) / (nσ)`` for the path from the origin."""
    return endpoint(store, p.time_unit) / p.space_unit


def max_deviation(store: SlabStore, m: float) -> float:
    """``sup_{s <= m} |π^0(s)|`` for the path from the origin."""
    r0, rcap = search_radii(store)
    v = _trace(store.field, 0.0, 0.0, float(m), r0, rcap)
    inside = v[v[:, 1] <= m]
    end = float(np.interp(m, v[:, 1], v[:, 0]))
    return float(max(np.max(np.abs(inside[:, 0])), abs(end)))
