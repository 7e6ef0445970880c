import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from critlab.errors import TooFewPoints, TooFewSamples
from critlab.stats import empirical_moments_ci, kolmogorov_survival, ks_vs_exponential, sequence_trend


def _exp_quantiles(m):
    return -np.log1p(-(np.arange(1, m + 1) - 0.5) / m)


# -- KS ------------------------------------------------------------------------


def test_quantile_sample_distance():
    res = ks_vs_exponential(_exp_quantiles(1000))
    assert res.distance <= 5e-4 + 1e-12
    assert res.p_value == 1.0


def test_constant_sample_distance():
    res = ks_vs_exponential(np.ones(50))
    assert res.distance == pytest.approx(max(1 - math.exp(-1), math.exp(-1)), abs=1e-15)


def test_too_few_samples():
    with pytest.raises(TooFewSamples):
        ks_vs_exponential(np.ones(7))


def test_agrees_with_scipy():
    x = np.random.default_rng(3).gamma(1.3, 1.0, 700)
    ours = ks_vs_exponential(x)
    ref = sps.kstest(x, "expon", method="asymp")
    assert ours.distance == pytest.approx(ref.statistic, abs=1e-14)
    assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-6, abs=1e-12)


def test_kolmogorov_series_against_scipy():
    for lam in (0.3, 0.5, 1.0, 1.36, 2.0, 3.0):
        assert kolmogorov_survival(lam) == pytest.approx(sps.kstwobign.sf(lam), rel=1e-10, abs=1e-15)


@given(st.permutations(list(_exp_quantiles(40) * 1.1)))
def test_ks_is_permutation_invariant(perm):
    assert ks_vs_exponential(perm).distance == ks_vs_exponential(_exp_quantiles(40) * 1.1).distance


def test_critical_value_calibration():
    m = 10_000
    rng = np.random.default_rng(20240601)
    exceed = sum(ks_vs_exponential(rng.exponential(size=m)).distance > 1.63 / math.sqrt(m) for _ in range(200))
    # 1% level: expect two exceedances out of 200
    assert exceed <= 4


# -- moments -------------------------------------------------------------------


def test_constant_sample_moments():
    tab = empirical_moments_ci(np.ones(40), 3)
    np.testing.assert_allclose(tab["moment"], 1.0)
    np.testing.assert_allclose(tab["half_width"], 0.0)


def test_quantile_sample_moments():
    tab = empirical_moments_ci(_exp_quantiles(100_000), 3)
    assert 1.9 <= tab.at(2, "moment") <= 2.1
    assert 5.4 <= tab.at(3, "moment") <= 6.6
    np.testing.assert_allclose(tab["factorial"], [1, 2, 6])
    assert np.all(tab["lower"] <= tab["moment"]) and np.all(tab["moment"] <= tab["upper"])


def test_moment_argument_checks():
    with pytest.raises(TooFewSamples):
        empirical_moments_ci(np.ones(29))
    with pytest.raises(ValueError):
        empirical_moments_ci(np.ones(40), 7)


# -- trends --------------------------------------------------------------------


def test_harmonic_gamma_diverges():
    n = np.arange(1, 10_001)
    gamma = 0.5 * (np.cumsum(1.0 / n) - 1)
    assert sequence_trend(gamma, n).kind == "diverging"


def test_mean_sequence_converges_to_one():
    n = np.arange(1, 10_001, dtype=float)
    verdict = sequence_trend((n + 1) / n, n)
    assert verdict.kind == "converging"
    assert verdict.limit == pytest.approx(1.0, abs=1e-3)


def test_alternating_is_inconclusive():
    verdict = sequence_trend((-1.0) ** np.arange(200))
    assert verdict.kind == "inconclusive"
    assert math.isnan(verdict.limit)
    assert verdict.to_dict()["limit"] is None


def test_power_law_limit_extrapolation():
    # blocks are geometric in n, so a power-law tail has a constant increment ratio
    n = np.arange(1, 3001, dtype=float)
    verdict = sequence_trend(2.5 - 3 / np.sqrt(n), n)
    assert verdict.kind == "converging"
    assert verdict.limit == pytest.approx(2.5, abs=1e-2)


def test_constant_sequence_converges():
    assert sequence_trend(np.full(30, 4.0)).kind == "converging"


def test_trend_needs_points():
    with pytest.raises(TooFewPoints):
        sequence_trend(np.arange(15.0))
    with pytest.raises(ValueError):
        sequence_trend(np.arange(20.0), np.arange(19.0))


def test_non_finite_is_inconclusive():
    x = np.arange(40.0)
    x[-1] = np.inf
    assert sequence_trend(x).kind == "inconclusive"


@settings(max_examples=40)
@given(st.floats(0.1, 3.0), st.floats(0.2, 2.0))
def test_power_growth_diverges(scale, power):
    n = np.arange(1, 2001, dtype=float)
    assert sequence_trend(scale * n**power, n).kind == "diverging"


def test_quantile_sample_intervals_contain_factorials():
    tab = empirical_moments_ci(_exp_quantiles(100_000), 3)
    for r in (1, 2, 3):
        assert tab.at(r, "lower") <= math.factorial(r) <= tab.at(r, "upper")
