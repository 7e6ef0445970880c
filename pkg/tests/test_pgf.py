import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critlab.errors import DegenerateMean, OverflowToLog
from critlab.model import OffspringSchedule
from critlab.pgf import (
    survival_bounds,
    discrete_curves,
    exact_distribution_oracle,
    factorial_moment_curve,
    geometric_checkpoints,
    oracle_factorial_moments,
    raw_moments_from_factorial,
    sandwich_curve,
    survival_profile,
)

BINARY = OffspringSchedule.constant([0.5, 0, 0.5])
UNIT = OffspringSchedule.constant([0, 1.0])
EXAMPLE = OffspringSchedule.paper_example()


def _exact_pgf(schedule, n):
    """Coefficients of f_n = g_0 o ... o g_{n-1} in exact rationals."""
    table = schedule.table(max(n, 1))
    f = [Fraction(0), Fraction(1)]
    for j in range(n - 1, -1, -1):
        g = [Fraction(p).limit_denominator(10**6) for p in table[j]]
        out = [Fraction(0)]
        for c in reversed(g):
            prod = [Fraction(0)] * (len(out) + len(f) - 1)
            for a, x in enumerate(out):
                for b, y in enumerate(f):
                    prod[a + b] += x * y
            prod[0] += c
            out = prod
        f = out
    return f


def _exact_extinction(schedule, n):
    """f_n(0) = g_0(g_1(...g_{n-1}(0))) in exact rationals."""
    table = schedule.table(max(n, 1))
    x = Fraction(0)
    for j in range(n - 1, -1, -1):
        g = [Fraction(p).limit_denominator(10**6) for p in table[j]]
        x = sum(c * x**k for k, c in enumerate(g))
    return x


def _fact_moment(poly, r):
    return sum(Fraction(math.perm(k, r)) * c for k, c in enumerate(poly))


# -- survival profiles -----------------------------------------------------------


def test_binary_two_generation_profile():
    prof = survival_profile(BINARY, 2)
    np.testing.assert_allclose(prof.values, [0.375, 0.5, 1.0], rtol=0, atol=1e-16)


def test_binary_three_generations():
    phi = 1.0
    for _ in range(3):
        phi -= phi * phi / 2
    assert survival_profile(BINARY, 3).phi == phi == 0.3046875


def test_unit_law_survives():
    assert np.all(survival_profile(UNIT, 40).values == 1.0)


@pytest.mark.parametrize("sch", [BINARY, EXAMPLE, OffspringSchedule("polynomial_mean", {"alpha": -1.0})])
@pytest.mark.parametrize("n", [1, 3, 8, 12])
def test_survival_agrees_with_exact_rationals(sch, n):
    assert survival_profile(sch, n).phi == pytest.approx(float(1 - _exact_extinction(sch, n)), rel=1e-13)


# -- curves ----------------------------------------------------------------------


def test_example_curve_closed_forms():
    curve = discrete_curves(EXAMPLE, 10)
    assert curve.at(10, "m") == pytest.approx(10.0, rel=1e-14)
    harmonic = math.fsum(1 / k for k in range(1, 11))
    assert curve.at(10, "Gamma") == pytest.approx(0.5 * (harmonic - 1), rel=1e-14)
    assert curve.at(10, "Gamma") == pytest.approx(0.96448, abs=1e-5)


def test_binary_curve_closed_forms():
    curve = discrete_curves(BINARY, 10)
    assert curve.at(10, "Gamma") == 5.0
    assert curve.at(10, "m") == 1.0
    assert curve.at(10, "phi") == pytest.approx(float(1 - _exact_extinction(BINARY, 10)), rel=1e-14)
    assert curve.at(10, "phi") == pytest.approx(0.138902, abs=1e-6)


def test_unit_curve():
    curve = discrete_curves(UNIT, 5)
    assert curve.at(5, "Gamma") == 0.0
    assert curve.at(5, "phi") == 1.0


def test_long_horizon_uses_geometric_rows():
    curve = discrete_curves(BINARY, 50_000)
    assert curve.index[-1] == 50_000
    assert len(curve) < 2000
    assert curve.at(50_000, "phiGamma") == pytest.approx(1.0, abs=2e-3)


def test_geometric_checkpoints_cover_ends():
    cps = geometric_checkpoints(10**6)
    assert cps[0] == 0 and cps[-1] == 10**6
    assert np.all(np.diff(cps) > 0)
    assert set(range(101)) <= set(cps.tolist())


def test_zero_mean_truncates_with_warning():
    sch = OffspringSchedule("table", {"pmfs": [[0, 0, 1], [1.0], [0.5, 0, 0.5]]})
    with pytest.warns(DegenerateMean):
        curve = discrete_curves(sch, 6)
    assert curve.index[-1] == 1


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.95), st.integers(1, 60))
def test_survival_is_monotone_in_n(p0, n):
    sch = OffspringSchedule.constant([p0, 0, 1 - p0])
    phi = discrete_curves(sch, n)["phi"]
    assert np.all(np.diff(phi) <= 1e-15)
    assert np.all((phi >= 0) & (phi <= 1))


# -- bounds ---------------------------------------------------------------------


def test_binary_sandwich_values():
    out = survival_bounds(BINARY, 10)
    assert out["gamma_bound"] == pytest.approx(1 / 6, rel=1e-14)
    assert out["exact_phi"] == pytest.approx(0.138902, abs=1e-6)
    # g'' is constant, so every variant of the sharp sum agrees with Gamma
    assert out["sharp_bound"] == pytest.approx(out["gamma_bound"], rel=1e-14)


def test_unit_sandwich_is_exact():
    out = survival_bounds(UNIT, 5)
    assert out["gamma_bound"] == out["sharp_bound"] == out["exact_phi"] == 1.0


def test_example_gamma_side_at_thousand():
    out = survival_bounds(EXAMPLE, 1000)
    assert 0.99 <= out["Gamma"] * out["gamma_bound"] <= 1.0


def test_sharp_sum_between_its_endpoint_variants():
    sch = OffspringSchedule.constant([0.3, 0.3, 0.1, 0.3])
    for n in (5, 50, 300):
        out = survival_bounds(sch, n)
        assert out["g2_zero_sum"] <= out["sharp_sum"] <= out["Gamma"]


def test_sandwich_with_nonzero_argument():
    sch = OffspringSchedule.constant([0.3, 0.3, 0.1, 0.3])
    out = survival_bounds(sch, 40, s=0.5)
    f = _exact_pgf(sch, 4)
    assert out["exact"] <= out["exact_phi"]
    small = survival_bounds(sch, 4, s=0.5)
    value = sum(float(c) * 0.5**k for k, c in enumerate(f))
    assert small["exact"] == pytest.approx(1 - value, rel=1e-12)
    with pytest.raises(ValueError):
        survival_bounds(sch, 5, s=1.0)


@pytest.mark.parametrize("sch", [EXAMPLE, OffspringSchedule.constant([0.3, 0.3, 0.1, 0.3])])
def test_sandwich_curve_matches_pointwise(sch):
    curve = sandwich_curve(sch, 60)
    for n in (1, 2, 17, 60):
        point = survival_bounds(sch, n)
        assert curve.at(n, "gamma_bound") == pytest.approx(point["gamma_bound"], rel=1e-14)
        assert curve.at(n, "sharp_bound") == pytest.approx(point["sharp_bound"], rel=1e-14)
        assert curve.at(n, "phi") == pytest.approx(point["exact_phi"], rel=1e-14)


# -- factorial moments -----------------------------------------------------------


def test_binary_second_factorial_moment_is_n():
    fm = factorial_moment_curve(BINARY, 10, 2)
    np.testing.assert_allclose(fm["F_2"], np.arange(11), rtol=1e-14)


def test_unit_law_has_no_higher_factorial_moments():
    fm = factorial_moment_curve(UNIT, 30, 4)
    for r in (2, 3, 4):
        assert np.all(fm[f"F_{r}"] == 0)
    assert np.all(fm["F_1"] == 1)


@pytest.mark.parametrize("sch", [EXAMPLE, BINARY, OffspringSchedule("polynomial_mean", {"alpha": -1.0}),
                                 OffspringSchedule.constant([0.3, 0.3, 0.1, 0.3])])
def test_factorial_moments_against_exact_rationals(sch):
    n = 5
    f = _exact_pgf(sch, n)
    fm = factorial_moment_curve(sch, n, 4)
    for r in range(1, 5):
        assert fm.at(n, f"F_{r}") == pytest.approx(float(_fact_moment(f, r)), rel=1e-12)


def test_factorial_moments_against_convolution_oracle():
    dist, leak = exact_distribution_oracle(EXAMPLE, 10)
    assert leak < 1e-15
    fm = factorial_moment_curve(EXAMPLE, 10, 4)
    np.testing.assert_allclose([fm.at(10, f"F_{r}") for r in range(1, 5)], oracle_factorial_moments(dist, 4),
                               rtol=1e-11)


def test_example_second_moment_ratio_long_horizon():
    fm = factorial_moment_curve(EXAMPLE, 10_000, 3)
    assert 1.9 <= fm.last("ratio_2") <= 2.1
    assert 5.5 <= fm.last("ratio_3") <= 6.5


def test_overflow_switches_to_log_scale():
    sch = OffspringSchedule.constant([0, 0, 0, 1.0])
    with pytest.warns(OverflowToLog):
        fm = factorial_moment_curve(sch, 700, 2)
    assert fm.meta["scale"] == "log"
    assert fm.last("logF_1") == pytest.approx(700 * math.log(3), rel=1e-12)


def test_factorial_order_limits():
    with pytest.raises(ValueError):
        factorial_moment_curve(BINARY, 5, 13)


# -- raw moments and oracle -------------------------------------------------------


def test_raw_from_factorial():
    np.testing.assert_allclose(raw_moments_from_factorial([1, 1]), [1, 2])
    np.testing.assert_allclose(raw_moments_from_factorial([1, 0, 0]), [1, 1, 1])
    np.testing.assert_allclose(raw_moments_from_factorial([2, 2]), [2, 4])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=6).filter(lambda v: sum(v) > 1e-2))
def test_raw_from_factorial_matches_direct_sums(weights):
    p = np.array(weights) / math.fsum(weights)
    k = np.arange(len(p), dtype=float)
    fact = oracle_factorial_moments(p, 4)
    raw = [np.dot(k**r, p) for r in range(1, 5)]
    np.testing.assert_allclose(raw_moments_from_factorial(fact), raw, rtol=1e-10, atol=1e-12)


def test_oracle_binary_two_generations():
    dist, _ = exact_distribution_oracle(BINARY, 2)
    assert dist[0] == 0.625
    assert dist[0] == pytest.approx(1 - survival_profile(BINARY, 2).phi, abs=1e-16)


def test_oracle_unit_law():
    dist, _ = exact_distribution_oracle(UNIT, 8)
    assert dist[1] == 1.0 and dist.sum() == 1.0


def test_oracle_example_mean():
    dist, _ = exact_distribution_oracle(EXAMPLE, 3)
    assert np.dot(np.arange(len(dist)), dist) == pytest.approx(3.0, rel=1e-14)


def test_oracle_limits():
    with pytest.raises(ValueError):
        exact_distribution_oracle(BINARY, 17)


@pytest.mark.parametrize("sch", [EXAMPLE, OffspringSchedule.constant([0.3, 0.3, 0.1, 0.3])])
def test_second_factorial_moment_recursion(sch):
    # f_{n+1} = f_n o g_n gives F_{n+1,2} = mu_n^2 F_{n,2} + g_n''(1) m_n
    N = 40
    fm = factorial_moment_curve(sch, N, 2)
    tab = sch.table(N)
    k = np.arange(tab.shape[1], dtype=float)
    mu, g2 = tab @ k, tab @ (k * (k - 1))
    F2, m = fm["F_2"], fm["m"]
    np.testing.assert_allclose(F2[1:], mu**2 * F2[:-1] + g2 * m[:-1], rtol=1e-12)
