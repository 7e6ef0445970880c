import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from critlab import montecarlo
from critlab.errors import CapExceeded, EnvelopeViolation, NoSurvivors
from critlab.model import OffspringSchedule, RateSchedule
from critlab.montecarlo import (
    SimConfig,
    attach_normalizers,
    binomial_inverse,
    conditioned_scaled_samples,
    simulate_continuous,
    simulate_discrete,
)
from critlab.pgf import discrete_curves, factorial_moment_curve

BINARY = OffspringSchedule.constant([0.5, 0, 0.5])
UNIT = OffspringSchedule.constant([0, 1.0])
LINEAR = RateSchedule(1, {-1: 1, 1: 1})


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(1, 0, (1,))
    with pytest.raises(ValueError):
        SimConfig(1, 10, ())
    with pytest.raises(ValueError):
        SimConfig(1, 10, (5, 5))
    with pytest.raises(ValueError):
        SimConfig(-1, 10, (5,))
    with pytest.raises(ValueError):
        simulate_discrete(BINARY, SimConfig(1, 10, (1.5,)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5000), st.floats(0.01, 0.99), st.integers(0, 2**32))
def test_binomial_inverse_matches_quantile_function(n, p, seed):
    rng = np.random.default_rng(seed)
    u = rng.uniform(1e-12, 1 - 1e-12, 200)
    k = binomial_inverse(u, np.full(200, n), p)
    expected = sps.binom.ppf(u, n, p)
    # away from exact cdf ties the two definitions coincide
    cdf = sps.binom.cdf(expected, n, p)
    safe = np.abs(cdf - u) > 1e-9
    assert np.array_equal(k[safe], expected[safe])


def test_binomial_inverse_degenerate_probabilities():
    n = np.array([3, 7])
    assert binomial_inverse([0.4, 0.9], n, 0.0).tolist() == [0, 0]
    assert binomial_inverse([0.4, 0.9], n, 1.0).tolist() == [3, 7]


def test_unit_law_stays_at_one():
    batch = attach_normalizers(simulate_discrete(UNIT, SimConfig(5, 100, (50,))), UNIT)
    assert np.all(batch.Z == 1)
    assert np.all(conditioned_scaled_samples(batch, 50) == 1.0)


def test_binary_survivor_fraction():
    batch = simulate_discrete(BINARY, SimConfig(11, 100_000, (10,)))
    phi = discrete_curves(BINARY, 10).at(10, "phi")
    sigma = math.sqrt(phi * (1 - phi) / 100_000)
    assert abs(batch.survivor_fraction(10) - phi) <= 3 * sigma
    assert abs(phi - 0.1389) < 1e-4


def test_example_schedule_mean():
    sch = OffspringSchedule.paper_example()
    batch = simulate_discrete(sch, SimConfig(12, 10_000, (10,)))
    fm = factorial_moment_curve(sch, 10, 2)
    mean = fm.at(10, "F_1")
    var = fm.at(10, "F_2") + mean - mean**2
    assert abs(batch.Z[0].mean() - mean) <= 3 * math.sqrt(var / 10_000)


def test_fast_and_generic_paths_agree_in_law():
    cfg = SimConfig(13, 100_000, (12,))
    fast = simulate_discrete(BINARY, cfg).Z[0]
    slow = simulate_discrete(BINARY, SimConfig(14, 100_000, (12,)), generic=True).Z[0]
    # two-sample KS on the full law, atom at zero included
    assert sps.ks_2samp(fast, slow).statistic < 0.01
    assert abs(np.mean(fast == 0) - np.mean(slow == 0)) < 0.01


def test_generic_path_on_three_atom_law():
    sch = OffspringSchedule.constant([0.3, 0.3, 0.1, 0.3])
    batch = simulate_discrete(sch, SimConfig(15, 50_000, (6,)))
    phi = discrete_curves(sch, 6).at(6, "phi")
    assert abs(batch.survivor_fraction(6) - phi) <= 4 * math.sqrt(phi * (1 - phi) / 50_000)


def test_reproducible_and_thread_independent(monkeypatch):
    monkeypatch.setattr(montecarlo, "BLOCK", 512)
    one = simulate_discrete(BINARY, SimConfig(99, 3000, (5, 20), workers=1))
    many = simulate_discrete(BINARY, SimConfig(99, 3000, (5, 20), workers=4))
    assert np.array_equal(one.Z, many.Z)
    monkeypatch.setattr(montecarlo, "BLOCK", 1 << 15)
    again = simulate_discrete(BINARY, SimConfig(99, 3000, (5, 20)))
    assert np.array_equal(one.Z, again.Z)
    other = simulate_discrete(BINARY, SimConfig(100, 3000, (5, 20)))
    assert not np.array_equal(one.Z, other.Z)


def test_continuous_thread_independent(monkeypatch):
    monkeypatch.setattr(montecarlo, "BLOCK", 256)
    cfg = dict(master_seed=7, replicates=1000, checkpoints=(1.0, 3.0))
    a = simulate_continuous(LINEAR, SimConfig(**cfg, workers=1))
    b = simulate_continuous(LINEAR, SimConfig(**cfg, workers=3))
    assert np.array_equal(a.Z, b.Z)


def test_population_cap_excludes_replicates():
    sch = OffspringSchedule.constant([0.2, 0, 0.8])
    with pytest.warns(CapExceeded):
        batch = simulate_discrete(sch, SimConfig(3, 500, (40,), population_cap=1000))
    assert batch.excluded > 0
    assert batch.replicates == 500 - batch.excluded


def test_frozen_rates_keep_everyone():
    frozen = RateSchedule(1, {})
    batch = simulate_continuous(frozen, SimConfig(1, 200, (1.0, 5.0, 10.0)))
    assert np.all(batch.Z == 1)


def test_continuous_linear_survival_and_conditioned_mean():
    batch = attach_normalizers(simulate_continuous(LINEAR, SimConfig(21, 100_000, (5.0, 10.0))), LINEAR)
    for t, phi in ((5.0, 1 / 6), (10.0, 1 / 11)):
        sigma = math.sqrt(phi * (1 - phi) / 100_000)
        assert abs(batch.survivor_fraction(t) - phi) <= 3 * sigma
    alive = batch.Z[batch.row(5.0)]
    alive = alive[alive > 0]
    # Z_5 given survival is geometric with mean 6 and variance 30
    assert abs(alive.mean() - 6.0) <= 3 * math.sqrt(30.0 / alive.size)
    assert batch.normalizers[5.0] == pytest.approx(6.0, rel=1e-7)
    assert conditioned_scaled_samples(batch, 5.0).mean() == pytest.approx(alive.mean() / 6.0)


def test_continuous_pure_death():
    death = RateSchedule(1, {-1: 0.5})
    batch = simulate_continuous(death, SimConfig(4, 40_000, (2.0,)))
    phi = math.exp(-1.0)
    assert abs(batch.survivor_fraction(2.0) - phi) <= 4 * math.sqrt(phi * (1 - phi) / 40_000)


def test_envelope_violation_is_raised(monkeypatch):
    monkeypatch.setattr(montecarlo, "ENVELOPE_SAFETY", 0.5)
    with pytest.raises(EnvelopeViolation):
        simulate_continuous(LINEAR, SimConfig(1, 100, (1.0,)))


def test_no_survivors_and_missing_normalizer():
    dead = OffspringSchedule.constant([1.0])
    batch = simulate_discrete(dead, SimConfig(1, 50, (3,)))
    with pytest.raises(KeyError):
        conditioned_scaled_samples(batch, 3)
    attach_normalizers(batch, dead)
    with pytest.raises(NoSurvivors):
        conditioned_scaled_samples(batch, 3)


def test_summary_rows():
    batch = attach_normalizers(simulate_discrete(BINARY, SimConfig(2, 2000, (1, 4))), BINARY)
    rows = batch.summary()
    assert [r["checkpoint"] for r in rows] == [1.0, 4.0]
    assert rows[0]["normalizer"] == pytest.approx(2.0)
    assert all(set(r) >= {"survivor_fraction", "survivors", "mean", "conditioned_mean"} for r in rows)


def test_continuous_against_master_equation():
    from critlab.bd import master_equation_oracle

    rates = RateSchedule(2, {-1: 1, 1: 0.6, 2: 0.2})
    batch = simulate_continuous(rates, SimConfig(31, 50_000, (5.0, 10.0)))
    probs, _ = master_equation_oracle(rates, 10.0, cap=1500, times=[5.0, 10.0])
    for t, p in zip((5.0, 10.0), probs):
        z = np.arange(len(p), dtype=float)
        alive = p[1:] / p[1:].sum()
        m1, m2, m4 = (np.dot(z[1:] ** r, alive) for r in (1, 2, 4))
        sample = batch.Z[batch.row(t)]
        sample = sample[sample > 0].astype(float)
        n = sample.size
        assert abs(n / batch.replicates - (1 - p[0])) <= 4 * math.sqrt(p[0] * (1 - p[0]) / batch.replicates)
        assert abs(sample.mean() - m1) <= 4 * math.sqrt((m2 - m1**2) / n)
        assert abs(np.mean(sample**2) - m2) <= 4 * math.sqrt((m4 - m2**2) / n)
