import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_dataset
from qrfdensity import forest as F
from qrfdensity import qrf
from qrfdensity.errors import InvalidParameter


def weighted_indicator_sum(weights, targets, y):
    """Direct weighted indicator sum, correctly rounded."""
    return math.fsum(w for w, t in zip(weights, targets) if t <= y)


def linear_scan_quantile(cdf, tau):
    for s, c in zip(cdf.support, cdf.cum_weights):
        if c >= tau:
            return s
    return cdf.support[-1]


def const_forest(c, n=6):
    return F.fit(make_dataset(np.linspace(0, 1, n)[:, None], np.full(n, c)), F.ForestConfig(ntree=3))


def test_cdf_from_weights_example():
    cdf = qrf.cdf_from_weights([0.25, 0.25, 0.5], [1.0, 2.0, 3.0])
    assert cdf(1.5) == 0.25
    assert cdf(2.0) == 0.5
    assert cdf(3.0) == 1.0
    assert cdf(0.5) == 0.0
    assert qrf.quantile(cdf, 0.5) == 2.0
    assert qrf.quantile(cdf, 0.75) == 3.0
    assert qrf.quantile(cdf, 0.2) == 1.0


def test_ties_merge():
    cdf = qrf.cdf_from_weights([0.2, 0.3, 0.5], [2.0, 1.0, 2.0])
    np.testing.assert_array_equal(cdf.support, [1.0, 2.0])
    np.testing.assert_array_equal(cdf.cum_weights, [0.3, 1.0])


def test_point_mass():
    f = const_forest(1.4)
    cdf = qrf.conditional_cdf(f, [0.3])
    np.testing.assert_array_equal(cdf.support, [1.4])
    assert cdf.cum_weights[-1] == pytest.approx(1.0, abs=1e-12)
    assert qrf.predict_median(f, [0.3]) == 1.4
    pi = qrf.prediction_interval(f, [0.3], 0.9)
    assert (pi.lower, pi.upper) == (1.4, 1.4)
    assert all(q == 1.4 for _, q in qrf.quantile_curve(f, [0.3]))


def test_median_lower_point_on_even_split():
    cdf = qrf.cdf_from_weights([0.5, 0.5], [1.0, 3.0])
    assert qrf.quantile(cdf, 0.5) == 1.0


def test_interval_levels():
    cdf = qrf.cdf_from_weights(np.full(20, 0.05), np.arange(20.0))
    pi = qrf.interval_from_cdf(cdf, 0.9)
    assert pi.lower == qrf.quantile(cdf, 0.05)
    assert pi.upper == qrf.quantile(cdf, 0.95)
    assert pi.nominal_level == 0.9
    with pytest.raises(InvalidParameter):
        qrf.interval_from_cdf(cdf, 1.0)


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.2])
def test_tau_out_of_range(tau):
    cdf = qrf.cdf_from_weights([1.0], [1.0])
    with pytest.raises(InvalidParameter):
        qrf.quantile(cdf, tau)


def test_quantile_curve_rejects_unsorted(small_forest):
    with pytest.raises(InvalidParameter):
        qrf.quantile_curve(small_forest, [0.5, 0.5, 0.5], [0.5, 0.2])


def test_quantile_curve_matches_single_calls(small_forest, rng):
    taus = qrf.default_taus(99)
    assert taus[0] == pytest.approx(0.01) and taus[-1] == pytest.approx(0.99)
    for x in rng.uniform(size=(5, 3)):
        cdf = qrf.conditional_cdf(small_forest, x)
        curve = qrf.quantile_curve(small_forest, x, taus)
        assert [q for _, q in curve] == [qrf.quantile(cdf, t) for t in taus]
        qs = [q for _, q in curve]
        assert all(a <= b for a, b in zip(qs, qs[1:]))


def test_cdf_equals_direct_sum_small_forest(rng):
    X = rng.uniform(size=(10, 2))
    y = np.round(rng.normal(size=10), 1)  # some ties
    f = F.fit(make_dataset(X, y), F.ForestConfig(ntree=7, min_node_size=1, seed=8))
    for x in rng.uniform(size=(20, 2)):
        w = F.forest_weights(f, x)
        cdf = qrf.conditional_cdf(f, x)
        for s, c in zip(cdf.support, cdf.cum_weights):
            assert c == weighted_indicator_sum(w, y, s)


def test_quantile_is_a_training_target(small_forest, rng):
    targets = set(small_forest.train_targets.tolist())
    for x in rng.uniform(size=(10, 3)):
        cdf = qrf.conditional_cdf(small_forest, x)
        for tau in (0.05, 0.3, 0.5, 0.95):
            assert qrf.quantile(cdf, tau) in targets


@st.composite
def cdfs(draw):
    n = draw(st.integers(1, 12))
    w = np.array(draw(st.lists(st.floats(0, 1), min_size=n, max_size=n)))
    if w.sum() == 0:
        w[0] = 1.0
    y = np.array(draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n)))
    return w / w.sum(), y


@settings(max_examples=200, deadline=None)
@given(cdfs(), st.floats(0.001, 0.999), st.floats(0.001, 0.999))
def test_quantile_monotone_and_cdf_valid(wy, t1, t2):
    w, y = wy
    cdf = qrf.cdf_from_weights(w, y)
    assert np.all(np.diff(cdf.support) > 0)
    assert np.all(np.diff(cdf.cum_weights) >= 0)
    assert cdf.cum_weights[-1] == pytest.approx(1.0, abs=1e-9)
    lo, hi = sorted((t1, t2))
    assert qrf.quantile(cdf, lo) <= qrf.quantile(cdf, hi)
    assert qrf.quantile(cdf, lo) == linear_scan_quantile(cdf, lo)


@settings(max_examples=100, deadline=None)
@given(cdfs(), st.floats(0.01, 0.98), st.floats(0.01, 0.98))
def test_interval_nesting(wy, l1, l2):
    cdf = qrf.cdf_from_weights(*wy)
    a, b = sorted((l1, l2))
    narrow, wide = qrf.interval_from_cdf(cdf, a), qrf.interval_from_cdf(cdf, b)
    assert wide.lower <= narrow.lower <= narrow.upper <= wide.upper


@pytest.mark.slow
def test_conditional_median_tracks_normal_location():
    # y | x ~ Normal(x, 1); leaves of >= 100 rows keep the local sample large
    # enough that the median's sampling error stays well under 0.15
    r = np.random.default_rng(3)
    x = r.uniform(0, 1, size=2000)
    y = x + r.normal(size=2000)
    f = F.fit(make_dataset(x[:, None], y), F.ForestConfig(ntree=200, min_node_size=100, seed=1))
    central = np.linspace(0.3, 0.7, 9)
    errors = [qrf.predict_median(f, [q]) - q for q in central]
    assert np.mean(np.abs(errors)) < 0.15
