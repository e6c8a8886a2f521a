import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from lenskisim.params import ParameterError
from lenskisim.yule import (DayClock, StoppingRule, YuleLaw, day_length, growth_factor,
                            sample_hitting_time, sample_yule_size, sample_yule_sizes, sigma_k)


def draws(law, n, rng):
    return np.array([sample_yule_size(law, rng) for _ in range(n)])


def test_zero_time_returns_founders(rng):
    law = YuleLaw(5, 1.0, 0.0)
    assert all(sample_yule_size(law, rng) == 5 for _ in range(100))


@pytest.mark.parametrize("bad", [(0, 1.0, 1.0), (2, 0.0, 1.0), (2, 1.0, -1.0), (1.5, 1.0, 1.0)])
def test_law_validation(bad):
    with pytest.raises(ParameterError):
        YuleLaw(*bad)


def test_single_founder_is_geometric_half(rng):
    law = YuleLaw(1, 1.0, math.log(2))
    x = draws(law, 100_000, rng)
    assert x.min() >= 1
    kmax = 14
    observed = np.array([np.sum(x == k) for k in range(1, kmax + 1)] + [np.sum(x > kmax)])
    probs = np.array([0.5**k for k in range(1, kmax + 1)] + [0.5**kmax])
    chi = stats.chisquare(observed, probs * x.size)
    assert chi.pvalue > 0.01


def test_pmf_matches_geometric():
    law = YuleLaw(1, 1.0, math.log(2))
    k = np.arange(1, 20)
    np.testing.assert_allclose(law.pmf(k), 0.5**k, rtol=1e-12)


@pytest.mark.parametrize("n0,rate,t", [(1000, 1.0, math.log(10)), (3, 2.0, 0.7), (200, 0.5, 1.3)])
def test_mean_and_variance_within_5se(n0, rate, t, rng):
    law = YuleLaw(n0, rate, t)
    x = draws(law, 100_000, rng).astype(float)
    n = x.size
    assert abs(x.mean() - law.mean) <= 5 * x.std() / math.sqrt(n)
    dev2 = (x - x.mean()) ** 2
    assert abs(dev2.mean() - law.variance) <= 5 * dev2.std() / math.sqrt(n)


def test_large_founder_count_mean(rng):
    law = YuleLaw(5_000_000, 1.0, math.log(2))
    x = draws(law, 2000, rng).astype(float)
    assert x.min() >= law.founders
    assert abs(x.mean() - law.mean) <= 5 * math.sqrt(law.variance / x.size)


def test_vector_sizes_keep_empty_classes_empty(rng):
    out = sample_yule_sizes([0, 4, 0, 10], 0.5, rng)
    assert out[0] == 0 and out[2] == 0
    assert out[1] >= 4 and out[3] >= 10


def test_hitting_time_rejects_threshold_at_start(rng):
    with pytest.raises(ParameterError):
        sample_hitting_time([(20, 1.0)], 20, rng)


def test_hitting_time_single_birth_is_exponential(rng):
    t = np.array([sample_hitting_time([(1, 1.0)], 2, rng)[0] for _ in range(20_000)])
    assert abs(t.mean() - 1.0) <= 5 / math.sqrt(t.size)
    assert stats.kstest(t, "expon").pvalue > 0.01


def test_hitting_time_sizes_sum_to_threshold(rng):
    for _ in range(50):
        t, sizes = sample_hitting_time([(30, 1.0), (5, 1.3), (0, 2.0), (12, 0.4)], 100, rng)
        assert sum(sizes) == 100
        assert sizes[2] == 0
        assert sizes[0] >= 30 and sizes[1] >= 5 and sizes[3] >= 12
        assert t > 0


def test_hitting_time_close_to_day_length(rng):
    t = np.array([sample_hitting_time([(10_000, 1.0)], 20_000, rng)[0] for _ in range(1000)])
    assert abs(t.mean() - math.log(2)) <= 0.01 * math.log(2)


def test_hitting_class_split_matches_yule_growth(rng):
    # two equal-rate classes: the first class's share at the hitting time averages its start share
    shares = [sample_hitting_time([(10, 1.0), (30, 1.0)], 400, rng)[1][0] / 400 for _ in range(4000)]
    assert abs(np.mean(shares) - 0.25) <= 4 * np.std(shares) / math.sqrt(len(shares))


def test_day_clock_homogeneous_is_exact():
    clock = DayClock(day_length([1000], [1.7], 3.0), StoppingRule.EXPECTATION)
    assert clock.sigma == math.log(3.0) / 1.7


def test_sigma_k_endpoints():
    N, r, rho, gamma = 1000, 1.0, 0.05, 5.0
    assert sigma_k(N, 0, r, rho, gamma) == math.log(gamma) / r
    assert sigma_k(N, N, r, rho, gamma) == math.log(gamma) / (r + rho)


def test_sigma_k_expansion():
    N, k, r, rho, gamma = 10**6, 10**5, 1.0, 1e-3, 100.0
    approx = math.log(gamma) / (r + k * rho / N)
    assert abs(sigma_k(N, k, r, rho, gamma) - approx) <= rho**2 * math.log(gamma)


def test_sigma_k_strictly_decreasing():
    ks = np.arange(0, 1001, 10)
    s = sigma_k(1000, ks, 1.0, 0.2, 2.0)
    assert np.all(np.diff(s) < 0)


@settings(max_examples=200, deadline=None)
@given(N=st.integers(1, 10**7), frac=st.floats(0, 1), r=st.floats(0.05, 20),
       rho=st.floats(0, 5), gamma=st.floats(1.001, 1e4))
def test_sigma_k_root_property(N, frac, r, rho, gamma):
    k = int(frac * N)
    s = sigma_k(N, k, r, rho, gamma)
    lo, hi = math.log(gamma) / (r + rho), math.log(gamma) / r
    assert lo * (1 - 1e-14) <= s <= hi * (1 + 1e-14)
    x = k / N
    # residual in log form so that huge growth factors do not overflow
    terms = [np.log(x) + (r + rho) * s if x > 0 else -np.inf,
             np.log1p(-x) + r * s if x < 1 else -np.inf]
    assert abs(np.logaddexp(*terms) - math.log(gamma)) <= 1e-12


def test_growth_factor_examples():
    assert growth_factor(123, 1000, 1.0, 0.0, 7.0) == pytest.approx(7.0, rel=1e-15)
    assert growth_factor(1000, 1000, 1.0, 0.3, 7.0) == pytest.approx(7.0, rel=1e-14)
    g = growth_factor(0, 10**6, 1.0, 1e-2, math.e)
    assert abs(g / (math.e * 1.01) - 1) <= 1e-3


def test_multiclass_day_length_residual():
    counts = np.array([500, 300, 200])
    rates = np.array([1.0, 1.1, 1.5])
    s = day_length(counts, rates, 4.0)
    assert abs(np.dot(counts, np.exp(rates * s)) / (4.0 * counts.sum()) - 1) <= 1e-12
