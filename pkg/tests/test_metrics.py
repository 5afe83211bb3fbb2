import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from survsr import metrics
from survsr.metrics import FrontPoint, HVConfig, ParetoFront

from oracles import mc_hypervolume

seeds = st.integers(0, 2**32 - 1)


def front(pairs, d=10):
    return ParetoFront.from_candidates([FrontPoint(dims, ci) for dims, ci in pairs])


def test_hv_examples():
    assert metrics.hypervolume_points([[0.0, 0.0]]) == 1.0
    assert metrics.hypervolume2d(ParetoFront([FrontPoint(0, 1.0)]), HVConfig(10)) == 100.0
    assert metrics.hypervolume2d(ParetoFront([FrontPoint(5, 0.5)]), HVConfig(10)) == 25.0
    assert metrics.hypervolume2d(ParetoFront([]), HVConfig(10)) == 0.0
    assert metrics.hypervolume2d(ParetoFront([FrontPoint(10, 0.0)]), HVConfig(10)) == 0.0


def test_hv_matches_monte_carlo():
    rng = np.random.default_rng(0)
    for _ in range(5):
        pts = rng.random((20, 2))
        exact = 100 * metrics.hypervolume_points(pts)
        assert exact == pytest.approx(mc_hypervolume(pts, 10**6, rng), abs=0.5)


@given(seeds)
def test_hv_monotone_under_new_point(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((8, 2))
    base = metrics.hypervolume_points(pts)
    assert metrics.hypervolume_points(np.vstack([pts, rng.random((1, 2))])) >= base - 1e-15


@given(seeds)
def test_hv_dominance(seed):
    rng = np.random.default_rng(seed)
    b = rng.random((10, 2))
    a = b - rng.random((10, 2)) * b  # every point of a weakly dominates its partner in b
    assert metrics.hypervolume_points(a) >= metrics.hypervolume_points(b) - 1e-15


def test_filters():
    f = front([(1, 0.6), (3, 0.7), (5, 0.8)])
    assert [p.dims for p in metrics.filter_up_to_k(f, 3)] == [1, 3]
    assert metrics.select_exactly_k(f, 4) is None
    assert metrics.select_exactly_k(f, 3).ci == 0.7
    assert metrics.select_max(f).dims == 5
    assert metrics.filter_up_to_k(f, math.inf).points == f.points
    with pytest.raises(ValueError):
        metrics.select_max(ParetoFront([]))


def test_front_filters_dominated_but_keeps_raw():
    f = front([(1, 0.7), (2, 0.65), (3, 0.8)])
    assert [p.dims for p in f.points] == [1, 3]
    assert metrics.select_exactly_k(f, 2).ci == 0.65
    assert metrics.select_exactly_k(f, 2, use_raw=False) is None


def test_nondominated_filter_property():
    rng = np.random.default_rng(1)
    pts = [FrontPoint(int(rng.integers(6)), float(rng.random())) for _ in range(40)]
    kept = metrics.filter_nondominated(pts)
    for p in kept:
        assert not any(metrics.dominates(q, p) for q in pts)
    for p in pts:
        assert p in kept or any(metrics.dominates(q, p) or (q.dims, q.ci) == (p.dims, p.ci) for q in kept)


def test_aggregate_examples():
    s = metrics.aggregate_repetitions([1, 2, 3])
    assert s.median == 2
    one = metrics.aggregate_repetitions([0.7])
    assert one.median == 0.7 and one.iqr == 0
    const = metrics.aggregate_repetitions([0.123456789] * 50)
    assert const.median == 0.123456789
    assert metrics.aggregate_repetitions([1, 2, 3, 4]).median == 2
    with pytest.raises(ValueError):
        metrics.aggregate_repetitions([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), seeds)
def test_aggregate_permutation_invariant(values, seed):
    perm = list(np.random.default_rng(seed).permutation(values))
    a, b = metrics.aggregate_repetitions(values), metrics.aggregate_repetitions(perm)
    assert a == b
    assert a.q1 <= a.median <= a.q3


def test_pearson():
    assert metrics.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert math.isnan(metrics.pearson([1, 1, 1], [1, 2, 3]))
