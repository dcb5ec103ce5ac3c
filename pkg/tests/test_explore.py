from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsfsim.errors import ContractError, SearchOverflowError
from dsfsim.explore import (
    ExplorationState,
    cone_avoids_history,
    cone_scan,
    initial_state,
    is_good_step,
    run_steps,
    select_mover,
    step,
    step_details,
    step_resampled,
    unexplored_apex,
    zeta,
)
from dsfsim.forest import ancestor
from dsfsim.geom import HistorySet, SemiBall, history_height
from dsfsim.ppp import Point, SlabStore
from dsfsim.stats import linear_fit


class BruteExploration:
    """The joint exploration rules re-evaluated from scratch on explicit point lists."""

    def __init__(self, points, starts):
        self.points = [tuple(map(float, p)) for p in points]
        self.pos = [tuple(map(float, u)) for u in starts]
        self.balls = []  # (cx, cy, r)
        self.clip = min(p[1] for p in self.pos)

    def in_hist(self, p):
        if p[1] < self.clip:
            return False
        return any(p[1] >= cy and math.hypot(p[0] - cx, p[1] - cy) <= r for cx, cy, r in self.balls)

    def step(self):
        i = min(range(len(self.pos)), key=lambda j: (self.pos[j][1], self.pos[j][0], j))
        m = self.pos[i]
        cands = [p for p in self.points if not self.in_hist(p)]
        cands += [p for p in self.pos if p != m]
        best = None
        for p in cands:
            if p[1] > m[1]:
                key = (math.hypot(p[0] - m[0], p[1] - m[1]), p[1], p[0])
                if best is None or key < best:
                    best = key
        if best is None:
            return False
        d, y, x = best
        self.pos = [(x, y) if p == m else p for p in self.pos]
        self.balls.append((m[0], m[1], d))
        self.clip = min(p[1] for p in self.pos)
        self.balls = [b for b in self.balls if b[1] + b[2] > self.clip]
        return True


def test_select_mover_examples():
    assert select_mover([(0.0, 0.0), (5.0, 0.0)]) == 0
    assert select_mover([(5.0, 0.0), (0.0, 0.0)]) == 1
    assert select_mover([(3.0, 1.0), (0.0, 0.5)]) == 1
    assert select_mover([(7.0, 7.0)]) == 0
    assert select_mover([(1.0, 1.0), (1.0, 1.0)]) == 0


def test_initial_state_contract():
    with pytest.raises(ContractError):
        initial_state([(0.0, 0.0)], kappa=5)
    with pytest.raises(ContractError):
        initial_state([(0.0, 0.0), (1.0, 7.0)], kappa=6)
    with pytest.raises(ContractError):
        initial_state([])
    H = HistorySet(0.0, (SemiBall(Point(0.0, 0.0), 1.0),))
    with pytest.raises(ContractError):
        initial_state([(0.0, 0.0)], history=H, extra=[(0.0, 3.0)])
    st0 = initial_state([(0.0, 0.0)], history=H, extra=[(0.2, 0.5)])
    assert st0.extra == (Point(0.2, 0.5),)


def test_k1_step_is_ancestor():
    s = SlabStore(1.0, seed=4)
    st0 = initial_state([(0.3, 0.0)])
    st1, i, d = step_details(st0, s)
    a = ancestor((0.3, 0.0), s)
    assert st1.positions == (a,) and i == 0
    assert d == pytest.approx(math.dist((0.3, 0.0), a))
    assert st1.step == 1 and st1.history.clip_level == a.y


def test_k2_coalescence_on_other_walker():
    s = SlabStore.from_points([(0.0, 10.0)])
    st0 = initial_state([(0.0, 0.0), (0.5, 0.5)])
    st1 = step(st0, s)
    assert st1.positions[0] == st1.positions[1] == Point(0.5, 0.5)
    st2 = step(st1, s)
    assert st2.positions[0] == st2.positions[1] == Point(0.0, 10.0)


def test_six_point_configuration_matches_brute_force():
    pts = [(0.2, 0.6), (1.1, 0.9), (-0.4, 1.5), (0.9, 2.1), (0.1, 2.8), (0.6, 3.9)]
    starts = [(0.0, 0.0), (1.0, 0.2)]
    brute = BruteExploration(pts, starts)
    s = SlabStore.from_points(pts)
    st0 = initial_state(starts)
    n = 0
    while brute.step():
        st0 = step(st0, s)
        n += 1
        assert list(st0.positions) == [Point(*p) for p in brute.pos]
        assert st0.history.clip_level == brute.clip
        assert sorted(b.center + (b.radius,) for b in st0.history.balls) == pytest.approx(sorted(brute.balls))
    assert n >= 4
    with pytest.raises(SearchOverflowError):
        step(st0, s)


def _q(lo, hi):
    # quantized so that squared distances never underflow
    return st.floats(lo, hi).map(lambda v: round(v, 6))


coord = _q(-4, 4)
pts_st = st.lists(st.tuples(coord, _q(-1, 12)), min_size=3, max_size=25, unique=True)


@given(pts_st, st.lists(st.tuples(coord, _q(-1, 1)), min_size=1, max_size=3))
def test_exploration_matches_brute_force(points, starts):
    brute = BruteExploration(points, starts)
    s = SlabStore.from_points(points)
    state = initial_state(starts)
    for _ in range(40):
        ok = brute.step()
        if not ok:
            with pytest.raises(SearchOverflowError):
                step(state, s)
            break
        state = step(state, s)
        assert list(state.positions) == [Point(*p) for p in brute.pos]
        assert state.history.clip_level == brute.clip
        assert len(state.history.balls) == len(brute.balls)


def test_resampled_step_on_fixed_store_equals_step():
    pts = [(0.2, 0.6), (1.1, 0.9), (-0.4, 1.5), (0.9, 2.1)]
    s = SlabStore.from_points(pts)
    st0 = initial_state([(0.0, 0.0), (1.0, 0.0)])
    assert step(st0, s) == step_resampled(st0, SlabStore.from_points(pts))


def _state(positions, balls=(), clip=None, step_no=0, last_good=0.0, kappa=6):
    positions = tuple(Point(*p) for p in positions)
    clip = min(p.y for p in positions) if clip is None else clip
    return ExplorationState(positions, HistorySet(clip, tuple(balls)), (), step_no, last_good, kappa)


def test_is_good_step_examples():
    assert not is_good_step(_state([(0.0, 10.0), (1.0, 10.0)], step_no=3))
    tall = (SemiBall(Point(0.0, 4.0), 6.5 + 6.0),)
    assert not is_good_step(_state([(0.0, 10.0), (1.0, 10.0)], tall, step_no=4))
    assert is_good_step(_state([(0.0, 10.0), (1.0, 10.0)], step_no=4, last_good=3.0))
    # progress clause: needs at least kappa + 1 above the last good level
    assert not is_good_step(_state([(0.0, 10.0), (1.0, 10.0)], step_no=4, last_good=3.5))
    assert not is_good_step(_state([(0.0, 10.0)], step_no=0))


def test_zeta_examples():
    st0 = _state([(0.0, 0.0)])
    assert unexplored_apex(st0) == Point(0.0, 1.0)
    assert zeta(st0, SlabStore.from_points([(0.0, 2.0)])) == 1.0
    assert zeta(st0, SlabStore.from_points([(0.0, 2.0), (0.8, 1.1)])) == 1.0


def test_zeta_apex_uses_half_height():
    H = (SemiBall(Point(0.0, 0.0), 4.0),)
    st0 = _state([(0.0, 0.0)], H)
    assert unexplored_apex(st0) == Point(0.0, 2.0)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("k", [1, 2, 3])
def test_process_invariants(seed, k):
    s = SlabStore(1.0, seed=seed)
    state = initial_state([(2.0 * j, 0.0) for j in range(k)])
    level = state.move_level
    height = state.height
    merged: set = set()
    for _ in range(300):
        new, i, d = step_details(state, s)
        assert new.move_level >= level
        assert new.history.clip_level == min(p.y for p in new.positions)
        assert history_height(new.history) <= max(height, d) + 1e-9
        assert cone_avoids_history(new) is not False
        for a, b in merged:
            assert new.positions[a] == new.positions[b]
        merged |= {(a, b) for a in range(k) for b in range(a + 1, k) if new.positions[a] == new.positions[b]}
        state, level, height = new, new.move_level, new.height


def test_cone_scan_reports_no_hits():
    checked, hits = cone_scan([(0.0, 0.0), (1.0, 0.0)], SlabStore(1.0, seed=2), 5000)
    assert checked > 4000 and hits == 0


def test_run_steps_length():
    out = run_steps(initial_state([(0.0, 0.0)]), SlabStore(1.0, seed=0), 7)
    assert len(out) == 7 and out[-1].step == 7


def _good_gaps(seed, n_steps=240, kappa=6):
    """Step counts between successive good steps of a two-walker run."""
    s = SlabStore(1.0, seed=seed)
    state = initial_state([(0.0, 0.0), (1.0, 0.0)], kappa)
    last_level, last_step, gaps = state.move_level, 0, []
    for n in range(1, n_steps + 1):
        state = step(state, s)
        if n % 2 == 0 and state.height <= kappa and state.move_level >= last_level + kappa + 1:
            gaps.append(n - last_step)
            last_level, last_step = state.move_level, n
    return gaps


@pytest.mark.slow
def test_good_step_gaps_have_exponential_tail():
    gaps = np.concatenate([_good_gaps(seed) for seed in range(2000)])
    ns = np.arange(2, np.quantile(gaps, 0.999) + 1, 2)
    surv = np.array([(gaps >= n).mean() for n in ns])
    keep = surv > 0
    fit = linear_fit(ns[keep], np.log(surv[keep]))
    assert fit.slope < 0
    assert fit.r_squared > 0.9
