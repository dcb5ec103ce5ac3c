from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsfsim.errors import DomainError, SearchOverflowError
from dsfsim.forest import PathPolyline, ancestor, eval_path, trace_path
from dsfsim.geom import HistorySet, SemiBall, in_history
from dsfsim.ppp import Point, SlabStore

from oracles import brute_ancestor


def test_ancestor_examples():
    s = SlabStore.from_points([(0.5, 1.0), (-2.0, 0.1)])
    assert ancestor((0.0, 0.0), s) == Point(0.5, 1.0)
    s = SlabStore.from_points([(1.0, 0.0), (0.0, 3.0)])
    assert ancestor((0.0, 0.0), s) == Point(0.0, 3.0)
    s = SlabStore.from_points([(0.5, 1.0), (0.0, 2.0)])
    H = HistorySet(0.0, (SemiBall(Point(0.5, 0.5), 0.6),))
    assert in_history((0.5, 1.0), H)
    assert ancestor((0.0, 0.0), s, exclude=H) == brute_ancestor((0.0, 0.0), [(0.5, 1.0), (0.0, 2.0)], H)
    assert ancestor((0.0, 0.0), s, exclude=H) == Point(0.0, 2.0)


def test_extra_points_inside_exclusion_count():
    s = SlabStore.from_points([(0.0, 5.0)])
    H = HistorySet(0.0, (SemiBall(Point(0.0, 0.0), 2.0),))
    assert ancestor((0.0, 0.0), s, exclude=H, extra=[(0.3, 1.0)]) == Point(0.3, 1.0)


def test_tie_break_prefers_lower_then_left():
    s = SlabStore.from_points([(1.0, 1.0), (-1.0, 1.0)])
    assert ancestor((0.0, 0.0), s) == Point(-1.0, 1.0)
    s = SlabStore.from_points([(0.6, 0.8), (0.8, 0.6)])
    assert ancestor((0.0, 0.0), s) == Point(0.8, 0.6)


def test_search_overflow():
    s = SlabStore.from_points([(0.0, -1.0)])
    with pytest.raises(SearchOverflowError):
        ancestor((0.0, 0.0), s)


coord = st.one_of(st.floats(-6, 6), st.integers(-6, 6).map(lambda v: v / 2))
pts_st = st.lists(st.tuples(coord, coord), min_size=1, max_size=20, unique=True)


@given(pts_st, st.tuples(coord, coord))
def test_ancestor_matches_exhaustive_scan(points, x):
    expected = brute_ancestor(x, points)
    s = SlabStore.from_points(points)
    if expected is None:
        with pytest.raises(SearchOverflowError):
            ancestor(x, s)
    else:
        assert ancestor(x, s) == expected


@given(
    pts_st,
    st.tuples(coord, coord),
    st.lists(st.tuples(coord, st.floats(0.0, 3.0)), max_size=3),
    st.lists(st.tuples(coord, coord), max_size=3),
)
def test_ancestor_with_exclusion_and_extra(points, x, balls, extra):
    H = HistorySet(x[1], tuple(SemiBall(Point(bx, x[1]), r) for bx, r in balls))
    expected = brute_ancestor(x, points, H, extra)
    s = SlabStore.from_points(points)
    if expected is None:
        with pytest.raises(SearchOverflowError):
            ancestor(x, s, exclude=H, extra=extra)
    else:
        assert ancestor(x, s, exclude=H, extra=extra) == expected


@pytest.mark.parametrize("lam", [0.05, 1.0, 9.0])
@pytest.mark.parametrize("seed", range(5))
def test_ancestor_random_store_against_scan(lam, seed):
    s = SlabStore(lam, seed=seed)
    unit = 1 / math.sqrt(lam)
    pts = s.points_in((-40 * unit, 40 * unit, -40 * unit, 40 * unit))
    rng = np.random.default_rng(seed)
    for _ in range(50):
        x = rng.uniform(-10 * unit, 10 * unit, size=2)
        assert ancestor(x, s) == brute_ancestor(x, pts)


def test_trace_examples():
    s = SlabStore.from_points([(0.0, 1.0), (0.0, 2.0)])
    assert len(trace_path((0.0, 0.0), s, -1.0)) == 1
    p = trace_path((0.0, 0.0), s, 1.5)
    assert p.vertices.tolist() == [[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]]
    s1, s2 = SlabStore(1.0, seed=3), SlabStore(1.0, seed=3)
    a = trace_path((0.2, 0.1), s1, 200.0)
    b = trace_path((0.2, 0.1), s2, 200.0)
    assert a.vertices.tobytes() == b.vertices.tobytes()


def test_eval_examples():
    p = PathPolyline([(0.0, 0.0), (2.0, 1.0)])
    assert eval_path(p, 0.5) == 1.0
    assert eval_path(p, 1.0) == 2.0
    q = PathPolyline([(0.0, 0.0), (2.0, 1.0), (2.0, 3.0)])
    assert q.eval(2.0) == 2.0
    with pytest.raises(DomainError):
        eval_path(q, 3.5)
    with pytest.raises(DomainError):
        eval_path(q, -0.1)


def test_polyline_requires_increasing_ordinates():
    with pytest.raises(ValueError):
        PathPolyline([(0.0, 0.0), (1.0, 0.0)])


def test_path_csv(tmp_path):
    p = trace_path((0.0, 0.0), SlabStore(1.0, seed=1), 10.0)
    f = tmp_path / "p.csv"
    p.to_csv(f)
    rows = f.read_text().splitlines()
    assert rows[0] == "x,y" and len(rows) == len(p) + 1


@pytest.mark.parametrize("seed", range(20))
def test_paths_progress_and_do_not_cross(seed):
    s = SlabStore(1.0, seed=seed)
    starts = [(x, 0.0) for x in np.linspace(-5, 5, 8)]
    paths = [trace_path(u, s, 60.0) for u in starts]
    for p in paths:
        assert np.all(np.diff(p.vertices[:, 1]) > 0)
    t = np.arange(0.0, 60.0, 1e-2)
    vals = np.array([eval_path(p, t) for p in paths])
    for i in range(len(paths) - 1):
        d = vals[i + 1] - vals[i]
        # ordered starts stay weakly ordered; once equal, equal forever
        assert np.all(d >= -1e-12)
        hit = np.flatnonzero(d == 0)
        if hit.size:
            assert np.all(d[hit[0]:] == 0)
    # once two paths share a vertex their remaining vertices agree
    for i in range(len(paths) - 1):
        a = {tuple(v) for v in paths[i].vertices}
        b = paths[i + 1].vertices
        shared = [k for k, v in enumerate(b) if tuple(v) in a]
        if shared:
            tail = b[shared[0]:]
            ia = [tuple(v) for v in paths[i].vertices].index(tuple(tail[0]))
            n = min(len(tail), len(paths[i].vertices) - ia)
            assert np.array_equal(paths[i].vertices[ia:ia + n], tail[:n])
