import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from replgp.replication import (CompactedDesign, RawData, compact, empirical_moments,
                                empirical_quantiles)


def test_compact_small_example():
    d = compact(RawData([[0.5], [0.5], [0.7]], [1.0, 3.0, 5.0]))
    assert d.n == 2
    assert d.counts.tolist() == [2, 1]
    assert d.means.tolist() == [2.0, 5.0]
    assert d.emp_vars[0] == 2.0
    assert np.isnan(d.emp_vars[1])


def test_all_distinct_and_all_equal():
    d = compact(RawData(np.arange(5.0)[:, None], np.arange(5.0)))
    assert d.n == 5 and np.all(d.counts == 1) and np.all(np.isnan(d.emp_vars))
    d = compact(RawData([[0.2]] * 3, [1.0, 1.0, 1.0]))
    assert d.n == 1 and d.means[0] == 1.0 and d.emp_vars[0] == 0.0


def test_raw_validation():
    with pytest.raises(ValueError):
        RawData(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        RawData(np.zeros((0, 1)), np.zeros(0))


def test_near_duplicates_merge():
    x = 0.1 + 3e-17
    d = compact(RawData([[0.1], [x], [0.1 + 1e-6]], [0.0, 2.0, 5.0]))
    assert d.counts.tolist() == [2, 1]


def test_moments_examples():
    m, v, s = empirical_moments([0.0, 2.0])
    assert (m, v, s) == (1.0, 2.0, None)
    m, v, s = empirical_moments([-1.0, 0.0, 1.0])
    assert m == 0.0 and v == 1.0 and s == 0.0
    assert empirical_moments([4.0]) == (4.0, None, None)
    assert empirical_moments([2.0, 2.0, 2.0])[2] is None


def test_moments_monte_carlo():
    # seed 7 realizes variance 0.988682, skewness 0.00681
    z = np.random.default_rng(7).standard_normal(10_000)
    _, v, s = empirical_moments(z)
    assert 0.9 <= v <= 1.1 and abs(s) < 0.1
    assert v == pytest.approx(0.988682, abs=1e-6)


def test_quantiles_examples():
    assert empirical_quantiles(np.arange(1.0, 101.0), [0.5])[0] == 50.5
    u = np.random.default_rng(11).uniform(size=10_000)
    q = empirical_quantiles(u, [0.9])[0]
    assert abs(q - 0.9) < 0.02
    with pytest.raises(ValueError):
        empirical_quantiles([], [0.5])
    with pytest.raises(ValueError):
        empirical_quantiles([1.0], [1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30),
       st.lists(st.floats(0.001, 0.999), min_size=1, max_size=6))
def test_quantiles_sorted(values, levels):
    q = empirical_quantiles(values, sorted(levels))
    assert np.all(np.diff(q) >= 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_compaction_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    Xu = rng.integers(0, 5, size=(n, 2)) / 4.0
    a = rng.integers(1, 5, size=n)
    X = np.repeat(Xu, a, axis=0)
    y = rng.standard_normal(X.shape[0])
    d = compact(RawData(X, y))
    assert d.N == X.shape[0]
    # regrouping reproduces the means and the pooled mean
    for i in range(d.n):
        assert abs(d.group_values(i).mean() - d.means[i]) <= 1e-12
        assert np.all(d.Xu[i] == X[d.group_index == i])
    assert abs(d.counts @ d.means / d.N - y.mean()) <= 1e-12
    assert np.array_equal(np.isfinite(d.emp_vars), d.counts >= 2)
    # order invariance
    perm = rng.permutation(X.shape[0])
    d2 = compact(RawData(X[perm], y[perm]))
    np.testing.assert_array_equal(d.Xu, d2.Xu)
    np.testing.assert_array_equal(d.counts, d2.counts)
    np.testing.assert_allclose(d.means, d2.means, rtol=0, atol=1e-12)


def test_from_summaries():
    d = CompactedDesign.from_summaries([[0.0], [1.0]], [3, 1], [0.5, 2.0])
    assert d.N == 4 and d.y is None
    with pytest.raises(ValueError):
        d.group_values(0)
