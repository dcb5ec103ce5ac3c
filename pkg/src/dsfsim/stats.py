"""Statistics helpers: regressions, KS tests, streaming moments, resampling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    slope_se: float
    n: int

    def slope_interval(self, z: float = 1.959963984540054) -> tuple[float, float]:
        return self.slope - z * self.slope_se, self.slope + z * self.slope_se


def linear_fit(x: Sequence[float], y: Sequence[float]) -> FitResult:
    """Ordinary least squares ``y = slope * x + intercept``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    n = x.size
    if n < 2:
        raise ValueError("need at least two points for a fit")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("fit data must be finite")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise ValueError("x values are all equal")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    sse = float(np.sum(resid**2))
    syy = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - sse / syy if syy > 0 else 1.0
    se = math.sqrt(sse / (n - 2) / sxx) if n > 2 else math.nan
    return FitResult(slope, intercept, r2, se, n)


def loglog_fit(x: Sequence[float], y: Sequence[float]) -> FitResult:
    """Linear fit of ``log y`` against ``log x``; at least three positive points."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 3:
        raise ValueError("log-log fit needs at least three points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("log-log fit needs positive data")
    return linear_fit(np.log(x), np.log(y))


def weighted_fit(x: Sequence[float], y: Sequence[float], se: Sequence[float]) -> FitResult:
    """Weighted least squares with weights ``1/se²``; slope_se from the weights."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    se = np.asarray(se, dtype=np.float64)
    if not np.all(se > 0):
        raise ValueError("standard errors must be positive")
    w = 1.0 / se**2
    sw = w.sum()
    xm = float((w * x).sum() / sw)
    ym = float((w * y).sum() / sw)
    sxx = float((w * (x - xm) ** 2).sum())
    slope = float((w * (x - xm) * (y - ym)).sum() / sxx)
    intercept = ym - slope * xm
    resid = y - slope * x - intercept
    syy = float((w * (y - ym) ** 2).sum())
    r2 = 1.0 - float((w * resid**2).sum()) / syy if syy > 0 else 1.0
    return FitResult(slope, intercept, r2, math.sqrt(1.0 / sxx), x.size)


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov


def kolmogorov_sf(z: float, terms: int = 100, tol: float = 1e-12) -> float:
    """P(K > z) for the Kolmogorov distribution, by its alternating series."""
    if z <= 0:
        return 1.0
    if z < 0.2:
        # the alternating series converges slowly here; use the theta-function form
        s = 0.0
        for k in range(1, terms + 1):
            term = math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8 * z * z))
            s += term
            if term < tol:
                break
        return min(1.0, max(0.0, 1.0 - math.sqrt(2 * math.pi) / z * s))
    s = 0.0
    for k in range(1, terms + 1):
        term = 2.0 * (-1) ** (k - 1) * math.exp(-2.0 * k * k * z * z)
        s += term
        if abs(term) < tol:
            break
    return min(1.0, max(0.0, s))


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    n: int


def ks_1samp(sample: Sequence[float], cdf) -> KSResult:
    """One-sample KS test with asymptotic p-value (Stephens' small-n correction)."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    F = np.asarray(cdf(x), dtype=np.float64)
    i = np.arange(1, n + 1)
    d = max(float(np.max(i / n - F)), float(np.max(F - (i - 1) / n)))
    sn = math.sqrt(n)
    return KSResult(d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d), n)


def ks_2samp(a: Sequence[float], b: Sequence[float]) -> KSResult:
    """Two-sample KS test with asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    n, m = a.size, b.size
    if n == 0 or m == 0:
        raise ValueError("empty sample")
    allv = np.concatenate([a, b])
    fa = np.searchsorted(a, allv, side="right") / n
    fb = np.searchsorted(b, allv, side="right") / m
    d = float(np.max(np.abs(fa - fb)))
    ne = n * m / (n + m)
    sn = math.sqrt(ne)
    return KSResult(d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d), int(round(ne)))


MIN_KS_SAMPLE = 20


def ks_test(sample: Sequence[float], reference) -> KSResult:
    """KS test against a cdf (callable) or a second sample; both samples need ``n >= 20``."""
    x = np.asarray(sample, dtype=np.float64)
    if x.size < MIN_KS_SAMPLE:
        raise ValueError(f"KS test needs at least {MIN_KS_SAMPLE} observations")
    if callable(reference):
        return ks_1samp(x, reference)
    y = np.asarray(reference, dtype=np.float64)
    if y.size < MIN_KS_SAMPLE:
        raise ValueError(f"KS test needs at least {MIN_KS_SAMPLE} observations")
    return ks_2samp(x, y)


def symmetry_test(sample: Sequence[float]) -> KSResult:
    """Two-sample KS of one half of the sample against the negated other half.

    Comparing a sample with its own mirror image would make the two samples
    dependent and the asymptotic p-value too small; alternating halves are
    independent when the observations are.
    """
    x = np.asarray(sample, dtype=np.float64)
    if x.size < 40:
        raise ValueError("symmetry test needs at least 40 observations")
    return ks_2samp(x[0::2], -x[1::2])


def normal_cdf(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + _erf(x / math.sqrt(2.0)))


_erf = np.vectorize(math.erf, otypes=[np.float64])


# ---------------------------------------------------------------------------
# streaming moments


@dataclass
class Moments:
    """Mergeable mean / variance / second and third absolute moments.

    Power sums are kept as exact rationals, so results do not depend on the
    order in which values are added or partial accumulators are merged.
    """

    n: int = 0
    s1: Fraction = Fraction(0)
    s2: Fraction = Fraction(0)
    s3: Fraction = Fraction(0)

    def add(self, x: float) -> None:
        q = Fraction(float(x))
        self.n += 1
        self.s1 += q
        self.s2 += q * q
        self.s3 += abs(q) ** 3

    def extend(self, xs) -> None:
        for x in np.asarray(xs, dtype=np.float64).ravel():
            self.add(x)

    def merge(self, other: "Moments") -> "Moments":
        return Moments(self.n + other.n, self.s1 + other.s1, self.s2 + other.s2, self.s3 + other.s3)

    @property
    def mean(self) -> float:
        return float(self.s1 / self.n) if self.n else math.nan

    @property
    def variance(self) -> float:
        if self.n < 2:
            return math.nan
        return float((self.s2 - self.s1 * self.s1 / self.n) / (self.n - 1))

    @property
    def std(self) -> float:
        return math.sqrt(self.variance) if self.n > 1 else math.nan

    @property
    def sem(self) -> float:
        return self.std / math.sqrt(self.n) if self.n > 1 else math.nan

    @property
    def mean_square(self) -> float:
        return float(self.s2 / self.n) if self.n else math.nan

    @property
    def mean_abs3(self) -> float:
        return float(self.s3 / self.n) if self.n else math.nan


# ---------------------------------------------------------------------------
# tails and resampling


def survival(samples: Sequence[float], grid: Sequence[float]) -> np.ndarray:
    """Empirical ``P(X > t)`` at each ``t`` in ``grid``."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    g = np.asarray(grid, dtype=np.float64)
    return 1.0 - np.searchsorted(x, g, side="right") / x.size


def tail_fit(samples: Sequence[float], lo: float = 1e-3, hi: float = 0.5, npts: int = 30) -> FitResult:
    """Log-log fit of the empirical survival function where ``lo <= S <= hi``."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    x = x[x > 0]
    n = x.size
    if n < 10:
        raise ValueError("too few positive samples for a tail fit")
    # order-statistic positions where the survival is in [lo, hi]
    ks = np.unique(np.geomspace(max(1, int(lo * n)), max(2, int(hi * n)), npts).astype(int))
    ks = ks[(ks >= 1) & (ks < n)]
    t = x[n - ks - 1]
    s = survival(x, t)
    keep = s > 0
    if keep.sum() < 3:
        raise ValueError("tail range holds fewer than three points")
    return loglog_fit(t[keep], s[keep])


def exp_tail_fit(samples: Sequence[float], lo: float = 1e-3, hi: float = 0.5, npts: int = 30) -> FitResult:
    """Fit of ``log S(t)`` against ``t`` (exponential tail) over ``lo <= S <= hi``."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    if n < 10:
        raise ValueError("too few samples for a tail fit")
    ks = np.unique(np.linspace(max(1, int(lo * n)), max(2, int(hi * n)), npts).astype(int))
    ks = ks[(ks >= 1) & (ks < n)]
    t = x[n - ks - 1]
    s = survival(x, t)
    keep = s > 0
    return linear_fit(t[keep], np.log(s[keep]))


def bootstrap_ci(data, statistic, n_boot: int = 1000, alpha: float = 0.05, rng=None) -> tuple[float, float]:
    """Percentile bootstrap interval of ``statistic(data)``."""
    rng = np.random.default_rng(rng)
    data = np.asarray(data)
    n = data.shape[0]
    vals = np.array([statistic(data[rng.integers(0, n, n)]) for _ in range(n_boot)])
    return float(np.quantile(vals, alpha / 2)), float(np.quantile(vals, 1 - alpha / 2))


def pearson_ci(x, y, alpha: float = 0.05) -> tuple[float, float, float]:
    """Pearson correlation with a Fisher-z confidence interval."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    r = float(np.corrcoef(x, y)[0, 1])
    n = x.size
    z = math.atanh(max(min(r, 1 - 1e-15), -1 + 1e-15))
    q = _norm_ppf(1 - alpha / 2) / math.sqrt(n - 3)
    return r, math.tanh(z - q), math.tanh(z + q)


def _norm_ppf(p: float) -> float:
    # bisection on the normal cdf; only used for a handful of quantiles
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1 + math.erf(mid / math.sqrt(2))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def upper_bound(estimate: float, se: float, alpha: float = 0.05) -> float:
    """One-sided upper confidence bound ``estimate + z_{1-alpha} se``."""
    return estimate + _norm_ppf(1 - alpha) * se
