import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from walksim.metrics import (MetricsReport, aggregate, binomial_bounds,
                             binomial_test, tv_distance)


def test_tv_distance_known_values():
    assert tv_distance({0: 1.0}, {0: 1.0}) == 0.0
    assert tv_distance({0: 1.0, 1: 0.0}, {0: 0.0, 1: 1.0}) == pytest.approx(1.0)
    assert tv_distance({0: 0.5, 1: 0.5}, {0: 0.75, 1: 0.25}) == pytest.approx(0.25)


def test_tv_distance_requires_shared_support():
    with pytest.raises(ValueError):
        tv_distance({0: 1.0}, {1: 1.0})


@given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=8),
       st.lists(st.floats(0.001, 1.0), min_size=2, max_size=8))
@settings(max_examples=50, deadline=None)
def test_tv_distance_properties(ws1, ws2):
    k = min(len(ws1), len(ws2))
    p = {i: w / sum(ws1[:k]) for i, w in enumerate(ws1[:k])}
    q = {i: w / sum(ws2[:k]) for i, w in enumerate(ws2[:k])}
    d = tv_distance(p, q)
    assert 0.0 <= d <= 1.0 + 1e-12
    assert d == pytest.approx(tv_distance(q, p))
    assert tv_distance(p, p) == pytest.approx(0.0, abs=1e-12)


def test_binomial_test_agrees_with_scipy_pvalue():
    # 60/100 at p=0.5: p-value ~0.057 -> consistent at alpha=0.01, not at 0.10
    assert binomial_test(60, 100, 0.5, alpha=0.01)
    assert not binomial_test(60, 100, 0.5, alpha=0.10)
    assert not binomial_test(90, 100, 0.5, alpha=0.01)
    assert binomial_test(50, 100, 0.5, alpha=0.01)


def test_binomial_test_rejects_bad_counts():
    with pytest.raises(ValueError):
        binomial_test(11, 10, 0.5, alpha=0.01)


def test_binomial_bounds_cover_mean_exactly():
    lo, hi = binomial_bounds(1000, 0.5, 0.01)
    assert lo < 500 < hi
    mass = stats.binom.cdf(hi, 1000, 0.5) - stats.binom.cdf(lo - 1, 1000, 0.5)
    assert mass >= 0.99


def test_binomial_bounds_widen_with_smaller_alpha():
    lo1, hi1 = binomial_bounds(1000, 0.5, 0.01)
    lo2, hi2 = binomial_bounds(1000, 0.5, 0.10)
    assert lo1 <= lo2 and hi2 <= hi1


def test_aggregate_merges_reports():
    reps = [MetricsReport(config_hash="h", seed=s, tv_distance=0.1 * s)
            for s in range(1, 5)]
    agg = aggregate(reps)
    assert agg["runs"] == 4
    assert agg["tv_distance"]["mean"] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate([MetricsReport("a", 0), MetricsReport("b", 0)])
