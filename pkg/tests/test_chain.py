import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from attack_surface.chain import (
    CovarianceCurve,
    analytic_autocovariance,
    analytic_curve,
    breach_and_defense_rates,
    empirical_autocovariance,
    local_slopes,
    lrd_verdict,
    realized_defense_rate,
    stationary_distribution,
    tail_exponent_estimate,
)
from attack_surface.errors import (
    DivergingIntegralError,
    InsufficientDataError,
    TruncationError,
    WindowError,
)
from attack_surface.queue import simulate_mginf
from attack_surface.stochastics import RandomStream, exponential, pareto


def test_empty_system():
    pmf = stationary_distribution(0.0, 1.0, 0.1)
    assert list(pmf.probs) == [1.0]


def test_mm_infinity_is_poisson():
    pmf = stationary_distribution(1.0, 0.0, 1.0, lam_ref=1.0)
    assert pmf.probs[0] == pytest.approx(math.exp(-1))
    k = np.arange(pmf.probs.size)
    assert np.allclose(pmf.probs, stats.poisson.pmf(k, 1.0), atol=1e-14)


def test_mm1_is_geometric():
    pmf = stationary_distribution(1.0, 2.0, 0.0)
    k = np.arange(pmf.probs.size)
    assert np.allclose(pmf.probs, 0.5 * 0.5 ** k, atol=1e-14)
    assert pmf.tail_bound < 1e-12


def test_unstable_configurations():
    with pytest.raises(TruncationError):
        stationary_distribution(1.0, 0.0, 0.0)
    with pytest.raises(TruncationError):
        stationary_distribution(2.0, 1.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 200), st.floats(0, 200), st.floats(1e-4, 1.0))
def test_pmf_normalized_and_conserving(lam, mu_d, kappa):
    pmf = stationary_distribution(lam, mu_d, kappa, lam_ref=1.0)
    assert pmf.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(pmf.probs >= 0)
    breach, defense = breach_and_defense_rates(pmf, lam, mu_d, kappa, 1.0)
    assert breach + defense == pytest.approx(lam, rel=1e-12)
    # the second route to the defense rate: mu_d * P(N > 0)
    assert realized_defense_rate(pmf, mu_d) == pytest.approx(defense, rel=1e-8, abs=1e-9)


def test_no_attack_means_no_breach():
    pmf = stationary_distribution(1.0, 2.0, 0.0)
    assert breach_and_defense_rates(pmf, 1.0, 2.0, 0.0) == (0.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 50), st.floats(0, 50), st.floats(1e-3, 0.5), st.floats(1.0, 10.0))
def test_symmetric_scaling_invariance(lam, mu_d, kappa, a):
    base = stationary_distribution(lam, mu_d, kappa, 1.0)
    amp = stationary_distribution(a * lam, a * mu_d, a * kappa, 1.0)
    n = min(base.probs.size, amp.probs.size)
    assert np.allclose(base.probs[:n], amp.probs[:n], atol=1e-12)
    b0, _ = breach_and_defense_rates(base, lam, mu_d, kappa, 1.0)
    b1, _ = breach_and_defense_rates(amp, a * lam, a * mu_d, a * kappa, 1.0)
    assert b1 == pytest.approx(a * b0, rel=1e-9)


def test_pmf_csv():
    text = stationary_distribution(1.0, 2.0, 0.0).to_csv()
    assert text.splitlines()[0] == "N,probability"


def test_analytic_covariance_closed_forms():
    mu, lam = 0.7, 3.0
    for h in (0.0, 0.5, 4.0):
        assert analytic_autocovariance(lam, exponential(mu), h) == pytest.approx(lam * math.exp(-mu * h) / mu)
    assert analytic_autocovariance(lam, pareto(1.0, 1.5), 0.0) == pytest.approx(lam * 3.0)
    for h in (1.0, 10.0, 100.0):
        assert analytic_autocovariance(10.0, pareto(1.0, 1.5), h) == pytest.approx(20.0 * h ** -0.5)


def test_analytic_curve_nonincreasing():
    c = analytic_curve(2.0, pareto(1.0, 1.5), np.arange(0, 200))
    assert np.all(np.diff(c.values) <= 0)
    assert c.values[0] > 0


def test_infinite_mean_service():
    with pytest.raises(DivergingIntegralError):
        analytic_autocovariance(1.0, pareto(1.0, 0.8), 1.0)


def test_non_summable_for_heavy_tail():
    # partial sums of lam * 2 h^-0.5 grow like h^0.5
    c = analytic_curve(1.0, pareto(1.0, 1.5), np.arange(1, 10**6 + 1, dtype=float))
    s = np.cumsum(c.values)
    ratio = s[10**6 - 1] / s[10**4 - 1]
    assert ratio == pytest.approx(10.0, rel=0.02)


def test_empirical_constant_series():
    c = empirical_autocovariance(np.full(1000, 3.0), 20)
    assert np.allclose(c.values, 0.0)


def test_empirical_iid_poisson():
    x = RandomStream(0).generator.poisson(5.0, 100_000)
    c = empirical_autocovariance(x, 30)
    se = 5.0 / math.sqrt(x.size)
    assert c.values[0] == pytest.approx(5.0, rel=0.03)
    assert np.all(np.abs(c.values[1:]) < 4 * se)


def test_empirical_matches_direct_formula():
    x = RandomStream(1).generator.normal(size=500)
    c = empirical_autocovariance(x, 10)
    y = x - x.mean()
    direct = [np.dot(y[: y.size - h], y[h:]) / y.size for h in range(11)]
    assert np.allclose(c.values, direct)


def test_empirical_too_short():
    with pytest.raises(InsufficientDataError):
        empirical_autocovariance(np.arange(50.0), 10)


def test_slope_exact_power_law():
    c = analytic_curve(10.0, pareto(1.0, 1.5), np.arange(10, 101, dtype=float))
    assert tail_exponent_estimate(c, (10, 100)) == pytest.approx(-0.5, abs=1e-6)


def test_exponential_curve_steepens():
    c = analytic_curve(10.0, exponential(1.0), np.arange(1, 101, dtype=float))
    loc = local_slopes(c)
    assert np.all(np.diff(loc) < 0)
    verdict = lrd_verdict(c, (10, 100))
    assert verdict["end_local_slope"] < -2 and not verdict["lrd"]
    assert lrd_verdict(analytic_curve(10.0, pareto(1.0, 1.5), np.arange(1, 101.0)), (10, 100))["lrd"]


def test_window_error():
    c = CovarianceCurve(np.arange(5.0), np.array([1.0, 0.5, -0.1, 0.2, 0.1]))
    with pytest.raises(WindowError):
        tail_exponent_estimate(c, (1, 4))


def test_mginf_empirical_covariance_short():
    # modest-length version of the heavy-tail check; the full one lives in the acceptance suite
    n = simulate_mginf(10.0, exponential(0.2), 200_000, rng=4)
    c = empirical_autocovariance(n, 10)
    ref = analytic_curve(10.0, exponential(0.2), np.arange(11.0))
    assert np.allclose(c.values, ref.values, rtol=0.1)
