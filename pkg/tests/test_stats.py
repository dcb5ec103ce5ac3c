from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special
from scipy import stats as sps

from dsfsim.errors import DomainError
from dsfsim.stats import (
    Moments,
    bootstrap_ci,
    exp_tail_fit,
    kolmogorov_sf,
    ks_test,
    linear_fit,
    loglog_fit,
    normal_cdf,
    pearson_ci,
    survival,
    symmetry_test,
    tail_fit,
    upper_bound,
    weighted_fit,
)


def test_loglog_exact_power_law():
    t = np.array([1.0, 4.0, 16.0])
    f = loglog_fit(t, t**-0.5)
    assert f.slope == pytest.approx(-0.5, abs=1e-14)
    assert f.r_squared == pytest.approx(1.0, abs=1e-14)


def test_loglog_constant():
    f = loglog_fit([1.0, 10.0, 100.0, 1000.0], [0.3] * 4)
    assert f.slope == 0.0 and f.slope_se == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_loglog_noisy_synthetic(seed):
    rng = np.random.default_rng(seed)
    t = np.geomspace(10, 1000, 25)
    y = 2.0 * t**-0.5 * np.exp(rng.normal(0, 0.1, t.size))
    f = loglog_fit(t, y)
    assert abs(f.slope + 0.5) <= 3 * f.slope_se
    assert 0 <= f.r_squared <= 1 and f.slope_se >= 0


def test_loglog_errors():
    with pytest.raises(DomainError):
        loglog_fit([1.0, 2.0, 3.0], [1.0, 0.0, 0.5])
    with pytest.raises(DomainError):
        loglog_fit([-1.0, 2.0, 3.0], [1.0, 1.0, 0.5])
    with pytest.raises(ValueError):
        loglog_fit([1.0, 2.0], [1.0, 0.5])


def test_linear_fit_against_scipy():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 10, 50)
    y = 3 * x - 2 + rng.normal(size=50)
    f = linear_fit(x, y)
    ref = sps.linregress(x, y)
    assert f.slope == pytest.approx(ref.slope, rel=1e-12)
    assert f.intercept == pytest.approx(ref.intercept, rel=1e-12)
    assert f.r_squared == pytest.approx(ref.rvalue**2, rel=1e-12)
    assert f.slope_se == pytest.approx(ref.stderr, rel=1e-10)
    lo, hi = f.slope_interval()
    assert lo < f.slope < hi


def test_weighted_fit():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    f = weighted_fit(x, 2 * x + 1, np.ones(4))
    assert f.slope == pytest.approx(2.0) and f.intercept == pytest.approx(1.0)
    assert f.slope_se == pytest.approx(1 / math.sqrt(5))
    # a point with a huge SE barely moves the fit
    g = weighted_fit(np.append(x, 4.0), np.append(2 * x + 1, 100.0), [1, 1, 1, 1, 1e6])
    assert g.slope == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(ValueError):
        weighted_fit(x, x, [1.0, 0.0, 1.0, 1.0])


def test_ks_calibration():
    passed = 0
    for seed in range(100):
        x = np.random.default_rng(seed).normal(size=500)
        passed += ks_test(x, normal_cdf).pvalue > 0.01
    assert passed >= 98


def test_ks_gross_mismatch():
    x = np.random.default_rng(0).normal(size=500) + 5.0
    assert ks_test(x, normal_cdf).pvalue < 1e-6
    y = np.random.default_rng(1).normal(size=500)
    assert ks_test(x, y).pvalue < 1e-6


def test_ks_identical_samples():
    x = np.random.default_rng(0).normal(size=100)
    r = ks_test(x, x.copy())
    assert r.statistic == 0.0 and r.pvalue == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_ks_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=300), rng.normal(0.1, 1.0, size=400)
    one = ks_test(x, normal_cdf)
    ref = sps.kstest(x, "norm")
    assert one.statistic == pytest.approx(ref.statistic, rel=1e-9)
    two = ks_test(x, y)
    ref2 = sps.ks_2samp(x, y, method="asymp")
    assert two.statistic == pytest.approx(ref2.statistic, rel=1e-12)
    assert two.pvalue == pytest.approx(ref2.pvalue, rel=0.05, abs=1e-3)


def test_ks_small_samples():
    with pytest.raises(ValueError):
        ks_test(np.zeros(19), normal_cdf)
    with pytest.raises(ValueError):
        ks_test(np.zeros(30), np.zeros(19))


@pytest.mark.parametrize("z", [0.05, 0.1, 0.19, 0.2, 0.5, 0.8, 1.0, 1.36, 2.0, 3.0])
def test_kolmogorov_sf_against_scipy(z):
    assert kolmogorov_sf(z) == pytest.approx(special.kolmogorov(z), abs=1e-12)


def test_kolmogorov_sf_edges():
    assert kolmogorov_sf(0.0) == 1.0 and kolmogorov_sf(-1.0) == 1.0
    assert 0.0 < kolmogorov_sf(10.0) < 1e-80


def test_symmetry_test():
    rng = np.random.default_rng(0)
    assert symmetry_test(rng.normal(size=2000)).pvalue > 0.01
    assert symmetry_test(rng.exponential(size=2000)).pvalue < 1e-6
    with pytest.raises(ValueError):
        symmetry_test(np.zeros(39))


def test_normal_cdf():
    x = np.linspace(-5, 5, 41)
    assert np.allclose(normal_cdf(x), special.ndtr(x), atol=1e-15)


_vals = st.lists(st.floats(-1e3, 1e3), min_size=0, max_size=40)


@given(_vals, _vals, st.randoms(use_true_random=False))
def test_moments_merge_order_independent(a, b, rnd):
    ma, mb = Moments(), Moments()
    ma.extend(a)
    mb.extend(b)
    ab, ba = ma.merge(mb), mb.merge(ma)
    perm = a + b
    rnd.shuffle(perm)
    mp = Moments()
    mp.extend(perm)
    assert ab == ba == mp
    if mp.n > 1:
        assert (ab.mean, ab.variance, ab.mean_abs3) == (mp.mean, mp.variance, mp.mean_abs3)


def test_moments_values():
    m = Moments()
    assert math.isnan(m.mean) and math.isnan(m.variance)
    m.extend([1.0, -2.0, 3.0, 4.0])
    assert m.n == 4 and m.mean == 1.5
    assert m.variance == pytest.approx(np.var([1, -2, 3, 4], ddof=1), rel=1e-15)
    assert m.mean_square == 7.5 and m.mean_abs3 == 25.0
    assert m.sem == pytest.approx(m.std / 2)


def test_survival_and_tail_fits():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert survival(x, [0.0, 2.0, 4.0]).tolist() == [1.0, 0.5, 0.0]
    rng = np.random.default_rng(0)
    pareto = rng.pareto(0.5, 20_000) + 1
    assert tail_fit(pareto).slope == pytest.approx(-0.5, abs=0.05)
    expo = rng.exponential(2.0, 20_000)
    f = exp_tail_fit(expo)
    assert f.slope == pytest.approx(-0.5, abs=0.05) and f.r_squared > 0.99


def test_intervals():
    rng = np.random.default_rng(0)
    data = rng.normal(3.0, 1.0, 400)
    lo, hi = bootstrap_ci(data, np.mean, rng=1)
    assert lo < 3.0 < hi and hi - lo == pytest.approx(2 * 1.96 / 20, rel=0.2)
    x = rng.normal(size=500)
    r, lo, hi = pearson_ci(x, x + rng.normal(size=500))
    assert lo < r < hi and lo < 1 / math.sqrt(2) < hi
    assert upper_bound(1.0, 0.1) == pytest.approx(1.0 + 1.6448536 * 0.1, abs=1e-7)
