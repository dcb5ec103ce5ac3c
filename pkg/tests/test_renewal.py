from __future__ import annotations

import math

import numpy as np
import pytest

from dsfsim.errors import ContractError, RenewalTimeoutError
from dsfsim.explore import ExplorationState, initial_state, step
from dsfsim.geom import HistorySet, SemiBall, in_semiball
from dsfsim.ppp import Point, SlabStore
from dsfsim.renewal import (
    check_renewal_event,
    event_log_bounds,
    original_vertices,
    renewal_chain,
    renewal_sequence,
    run_to_renewal,
    steps_to_level,
)
from dsfsim.stats import linear_fit, symmetry_test

# at unit intensity the renewal event is out of reach (see event_log_bounds);
# its statistics are exercised where the event is frequent
LAM = 0.01
KAPPA = 6


def _at_level(positions, W=0.0):
    pos = tuple(Point(*p) for p in positions)
    return ExplorationState(pos, HistorySet.empty(W), (), 2, W - KAPPA - 1, KAPPA)


def test_event_with_single_point_above_each_projection():
    st0 = _at_level([(0.0, 0.0)])
    s = SlabStore.from_points([(0.2, 6.5), (0.0, 30.0)])
    assert check_renewal_event(st0, s) == [Point(0.2, 6.5)]


def test_stray_point_blocks_event():
    st0 = _at_level([(0.0, 0.0)])
    s = SlabStore.from_points([(0.2, 6.5), (3.0, 1.0)])
    assert check_renewal_event(st0, s) is None


def test_empty_small_ball_blocks_event():
    st0 = _at_level([(0.0, 0.0)])
    assert check_renewal_event(st0, SlabStore.from_points([(0.0, 30.0)])) is None


def test_shared_point_for_overlapping_balls():
    st0 = _at_level([(0.0, 0.0), (0.5, 0.0)])
    s = SlabStore.from_points([(0.25, 6.5)])
    assert check_renewal_event(st0, s) == [Point(0.25, 6.5), Point(0.25, 6.5)]


def test_points_inside_history_are_ignored():
    pos = (Point(0.0, 0.0),)
    H = HistorySet(0.0, (SemiBall(Point(3.0, 0.0), 1.5),))
    st0 = ExplorationState(pos, H, (), 2, -10.0, KAPPA)
    s = SlabStore.from_points([(0.2, 6.5), (3.0, 1.0)])
    assert check_renewal_event(st0, s) == [Point(0.2, 6.5)]


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("k", [1, 2])
def test_run_to_renewal_record(seed, k):
    s = SlabStore(LAM, seed=seed)
    st0 = initial_state([(15.0 * j, 0.0) for j in range(k)], KAPPA)
    rec, st1 = run_to_renewal(st0, s)
    assert rec.beta % k == 0 and rec.beta > 0
    assert rec.varrho == rec.beta and rec.ell == 1
    ys = {p.y for p in rec.u_new}
    assert len(ys) == 1
    assert rec.block_size >= 0
    for U in rec.extra_new:
        assert any(in_semiball(U, SemiBall(u, 1.0)) for u in rec.u_new)
    assert all(b.radius == KAPPA + 1 for b in rec.h0_balls)
    W = rec.h0_balls[0].center.y
    assert rec.level == W + KAPPA
    assert st1.step == 0 and st1.positions == rec.u_new
    assert st1.history.clip_level == rec.level


def test_timeout():
    s = SlabStore(1.0, seed=0)
    with pytest.raises(RenewalTimeoutError):
        run_to_renewal(initial_state([(0.0, 0.0)]), s, step_cap=50)


@pytest.mark.parametrize("seed", range(10))
def test_sequence_properties(seed):
    recs = renewal_sequence([(0.0, 0.0), (15.0, 0.0)], SlabStore(LAM, seed=seed), 6)
    assert recs[0].varrho == recs[0].beta
    assert all(a.varrho < b.varrho for a, b in zip(recs, recs[1:]))
    for a, b in zip(recs, recs[1:]):
        assert b.level - a.level >= KAPPA + 1
        assert b.varrho - a.varrho == b.beta
    with pytest.raises(ContractError):
        renewal_sequence([(0.0, 0.0)], SlabStore(LAM, seed=seed), 0)


def test_chain_matches_stepwise_records():
    s1, s2 = SlabStore(LAM, seed=5), SlabStore(LAM, seed=5)
    chain = renewal_chain([(0.0, 0.0), (15.0, 0.0)], s1, 3).records()
    st0 = initial_state([(0.0, 0.0), (15.0, 0.0)])
    varrho = 0
    for ell in range(1, 4):
        rec, st0 = run_to_renewal(st0, s2, ell=ell, varrho_before=varrho)
        varrho = rec.varrho
        c = chain[ell - 1]
        assert (rec.beta, rec.varrho, rec.u_new) == (c.beta, c.varrho, c.u_new)
        assert rec.block_size == pytest.approx(c.block_size)


@pytest.mark.parametrize("seed", range(200))
def test_original_paths_contained_in_regenerated(seed):
    s = SlabStore(LAM, seed=seed)
    starts = [(0.0, 0.0), (15.0, 0.0)]
    ch = renewal_chain(starts, s, 3, record_vertices=True)
    assert len(ch) == 3
    low, top = ch.u_new[0, 0, 1], ch.move_levels[-1]
    orig = original_vertices(starts, s, top)
    after = {tuple(v) for v in orig if low <= v[1] <= top}
    assert after <= {tuple(v) for v in ch.vertices}


@pytest.mark.parametrize("seed", range(100))
def test_segment_depends_only_on_local_points(seed):
    s = SlabStore(LAM, seed=seed)
    ch = renewal_chain([(0.0, 0.0)], s, 1, record_vertices=True)
    W = float(ch.block_sizes[0])
    # the renewal check looks up to κ+1 above the moving level
    m = W + KAPPA + 1
    other = SlabStore(LAM, seed=seed, splice_rects=[(-m, m, 0.0, m)], splice_seed=seed + 10_000)
    ch2 = renewal_chain([(0.0, 0.0)], other, 1, record_vertices=True)
    assert np.array_equal(ch.vertices, ch2.vertices)
    assert np.array_equal(ch.u_new, ch2.u_new)


def test_steps_to_level_examples():
    s = SlabStore(1.0, seed=3)
    one = initial_state([(0.0, 0.0)])
    first = step(one, s)
    assert steps_to_level(one, s, 0.0) == 0
    assert steps_to_level(one, s, np.nextafter(first.move_level, -np.inf)) == 0
    assert steps_to_level(one, s, first.move_level) == 1
    st0 = initial_state([(0.0, 0.0), (1.0, 0.0)])
    # the second walker still sits at the starting level after the first move
    assert steps_to_level(st0, s, 0.0) == 1
    counts = [steps_to_level(st0, s, t) for t in np.linspace(0.0, 50.0, 60)]
    assert all(a <= b for a, b in zip(counts, counts[1:]))
    with pytest.raises(ContractError):
        steps_to_level(st0, s, -1.0)


def test_steps_grow_at_least_linearly():
    n = np.array([
        steps_to_level(initial_state([(0.0, 0.0), (1.0, 0.0)]), SlabStore(1.0, seed=s), 200.0) for s in range(500)
    ])
    assert (n < 0.1 * 200).mean() <= 0.05


def test_event_log_bounds_unit_intensity_is_tiny():
    b, events, steps = event_log_bounds([(0.0, 0.0)], SlabStore(1.0, seed=1), 50)
    assert b.size == 50 and events == 0
    assert b.max() < -50


def test_event_log_bounds_are_bounds():
    # empty semi-ball area is at most the full semi-ball area minus nothing
    b, events, _ = event_log_bounds([(0.0, 0.0)], SlabStore(LAM, seed=2), 40)
    assert np.all(b <= 0) and np.all(b >= -LAM * math.pi * (KAPPA + 1) ** 2 / 2 - 1e-9)
    assert events > 0


def _chains(n, L=11, seed0=0):
    return [renewal_chain([(0.0, 0.0)], SlabStore(LAM, seed=seed0 + i), L) for i in range(n)]


@pytest.fixture(scope="module")
def k1_chains():
    return _chains(500)


def test_successive_betas_uncorrelated(k1_chains):
    pairs = np.array([(c.betas[j], c.betas[j + 1]) for c in k1_chains for j in range(1, len(c) - 1)], dtype=float)
    assert pairs.shape[0] >= 4500
    r = np.corrcoef(pairs[:, 0], pairs[:, 1])[0, 1]
    assert abs(r) <= 3 / math.sqrt(pairs.shape[0])


def test_increments_symmetric(k1_chains):
    inc = np.concatenate([np.diff(c.u_new[:, 0, 0]) for c in k1_chains])
    assert inc.size >= 5000
    assert symmetry_test(inc).pvalue > 0.01


def test_increment_ordinates_at_least_kappa_plus_one(k1_chains):
    for c in k1_chains:
        assert np.all(np.diff(c.u_new[:, 0, 1]) >= KAPPA + 1)


def test_beta_tail_log_linear(k1_chains):
    b = np.concatenate([c.betas[1:] for c in k1_chains]).astype(float)
    qs = np.unique(np.quantile(b, np.linspace(0, 0.999, 40)))
    s = np.array([(b >= q).mean() for q in qs])
    fit = linear_fit(qs, np.log(s))
    assert fit.slope < 0 and fit.r_squared > 0.9


def test_block_tail_against_sqrt(k1_chains):
    w = np.concatenate([c.block_sizes[1:] for c in k1_chains])
    qs = np.unique(np.quantile(w, np.linspace(0, 0.999, 40)))
    s = np.array([(w >= q).mean() for q in qs])
    fit = linear_fit(np.sqrt(qs), np.log(s))
    assert fit.slope < 0 and fit.r_squared > 0.85
