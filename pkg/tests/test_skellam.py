import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ppbridge.errors import DomainError
from ppbridge.skellam import (SkellamParams, bessel_i_scaled, log_bessel_i_scaled, log_pmf_grid,
                              poisson_time_matrix, sample_noise_jumps, skellam_cdf, skellam_log_pmf,
                              skellam_pmf, skellam_quantile, skellam_survival)

mpmath.mp.dps = 50


def mp_ive(n, x):
    return float(mpmath.besseli(n, x) * mpmath.exp(-x))


def conv_pmf(k, mu, n_max=None):
    # double-Poisson convolution: P(A - B = k) = sum_n Pois(n + k) Pois(n)
    k = abs(k)
    n_max = n_max or int(mu + 40 * math.sqrt(mu) + 80)
    n = np.arange(n_max)
    return float(np.sum(stats.poisson.pmf(n + k, mu) * stats.poisson.pmf(n, mu)))


def tail_oracle(k, mu, k_max=80):
    return math.fsum(mp_ive(j, 2 * mu) for j in range(k, k_max + 1))


def test_bessel_at_zero():
    assert bessel_i_scaled(0, 0.0) == 1.0
    for k in (1, 2, 7, 50):
        assert bessel_i_scaled(k, 0.0) == 0.0


def test_bessel_power_series_oracle():
    # I_1(2) e^{-2} = e^{-2} sum_m 1 / (m! (m+1)!)
    ref = math.exp(-2.0) * math.fsum(1.0 / (math.factorial(m) * math.factorial(m + 1)) for m in range(60))
    assert abs(bessel_i_scaled(1, 2.0) - ref) <= 1e-13


@pytest.mark.parametrize("x", [1e-6, 0.3, 5.0, 29.9, 30.1, 75.0, 400.0, 1e4, 1e6, 1e8])
@pytest.mark.parametrize("n", [0, 1, 2, 17, 120, 1000])
def test_scaled_bessel_matches_mpmath(n, x):
    ref = mp_ive(n, x)
    got = bessel_i_scaled(n, x)
    if ref < 1e-300:
        assert got == pytest.approx(ref, abs=1e-300)
        ref_log = float(mpmath.log(mpmath.besseli(n, x)) - x)
        assert log_bessel_i_scaled(n, x) == pytest.approx(ref_log, rel=1e-12)
    else:
        assert got == pytest.approx(ref, rel=1e-11)


def test_scaled_bessel_no_overflow_to_1e8():
    for x in np.geomspace(1e-3, 1e8, 40):
        for n in (0, 1, 10, 1000, 100_000):
            v = log_bessel_i_scaled(n, float(x))
            assert math.isfinite(v) and v <= 0.0


def test_pmf_degenerate_and_symmetric():
    assert skellam_pmf(0, SkellamParams(0.0)) == 1.0
    assert skellam_pmf(3, SkellamParams(0.0)) == 0.0
    for mu in (0.1, 2.5, 40.0):
        p = SkellamParams(mu)
        for k in range(1, 30):
            assert skellam_pmf(k, p) == skellam_pmf(-k, p)


def test_pmf_convolution_example():
    assert abs(skellam_pmf(1, SkellamParams(0.5)) - conv_pmf(1, 0.5, 61)) <= 1e-12


@pytest.mark.parametrize("mu", [0.01, 0.5, 1.0, 7.3, 20.0, 50.0])
def test_pmf_convolution_oracle_grid(mu):
    lp, _ = log_pmf_grid(mu, 30)
    for k in range(31):
        ref = conv_pmf(k, mu)
        assert abs(skellam_pmf(k, SkellamParams(mu)) - ref) <= 1e-10
        assert abs(math.exp(lp[0, k]) - ref) <= 1e-10


@pytest.mark.parametrize("mu", [0.1, 1.0, 10.0, 1e3])
def test_total_mass_within_tail_bound(mu):
    span = int(math.ceil(12 * math.sqrt(2 * mu + 1) + 40))
    lp, _ = log_pmf_grid(mu, span)
    pmf = np.exp(lp[0])
    assert math.fsum(pmf) * 2 - pmf[0] >= 1 - 1e-12


def test_log_and_linear_pmf_agree():
    for mu in (0.2, 3.0, 90.0):
        p = SkellamParams(mu)
        for k in (0, 1, 5, 25):
            assert math.exp(skellam_log_pmf(k, p)) == pytest.approx(skellam_pmf(k, p), rel=1e-12)


def test_survival_examples():
    assert abs(skellam_survival(-10, SkellamParams(0.01)) - 1.0) <= 1e-12
    for mu in (0.3, 1.0, 12.0):
        p = SkellamParams(mu)
        assert skellam_survival(1, p) == pytest.approx((1 - skellam_pmf(0, p)) / 2, rel=1e-13)
    assert abs(skellam_survival(1, SkellamParams(1.0)) - tail_oracle(1, 1.0)) <= 1e-12


def test_survival_matches_scipy_skellam():
    for mu in (0.5, 4.0, 60.0):
        dist = stats.skellam(mu, mu)
        for k in range(-20, 21, 3):
            assert skellam_survival(k, SkellamParams(mu)) == pytest.approx(dist.sf(k - 1), rel=1e-8, abs=1e-15)


def test_quantile_examples():
    for mu in (0.01, 1.0, 33.0):
        assert skellam_quantile(0.5, SkellamParams(mu)) == 0
    for q in (1e-9, 0.3, 0.999):
        assert skellam_quantile(q, SkellamParams(0.0)) == 0
    # linear scan of the tail-sum cdf oracle
    cdf, k = 0.0, -40
    while True:
        cdf = 1.0 - tail_oracle(k + 1, 1.0)
        if cdf >= 0.975:
            break
        k += 1
    assert skellam_quantile(0.975, SkellamParams(1.0)) == k


@pytest.mark.parametrize("mu", [0.1, 1.0, 10.0, 100.0])
def test_quantile_cdf_galois_exhaustive(mu):
    p = SkellamParams(mu)
    for k in range(-200, 201):
        c = skellam_cdf(k, p)
        if 0.0 < c < 1.0:
            assert skellam_quantile(c, p) <= k
            assert skellam_cdf(skellam_quantile(c, p), p) >= c


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(1e-3, 500.0), q=st.floats(1e-6, 1 - 1e-6))
def test_quantile_is_smallest_with_cdf_at_least_q(mu, q):
    p = SkellamParams(mu)
    k = skellam_quantile(q, p)
    assert skellam_cdf(k, p) >= q
    assert skellam_cdf(k - 1, p) < q


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(1e-3, 1e4), k=st.integers(-60, 60))
def test_pmf_is_a_probability_and_survival_is_monotone(mu, k):
    p = SkellamParams(mu)
    assert 0.0 <= skellam_pmf(k, p) <= 1.0
    assert skellam_survival(k, p) >= skellam_survival(k + 1, p)
    assert skellam_survival(k, p) - skellam_survival(k + 1, p) == pytest.approx(skellam_pmf(k, p), abs=1e-14)


def test_domain_errors():
    with pytest.raises(DomainError):
        SkellamParams(-1.0)
    with pytest.raises(DomainError):
        SkellamParams(math.nan)
    for q in (0.0, 1.0, 1.5):
        with pytest.raises(DomainError):
            skellam_quantile(q, SkellamParams(1.0))
    with pytest.raises(DomainError):
        sample_noise_jumps(20.0, 1.5, np.random.default_rng(0))


def test_noise_jumps_small_rate_mostly_empty():
    rng = np.random.default_rng(1)
    empty = sum(not (j.buys.size or j.sells.size) for j in (sample_noise_jumps(1e-4, 1.0, rng) for _ in range(2000)))
    assert empty >= 1990


def test_noise_jumps_deterministic():
    a = sample_noise_jumps(20.0, 1.0, np.random.default_rng(42))
    b = sample_noise_jumps(20.0, 1.0, np.random.default_rng(42))
    assert np.array_equal(a.buys, b.buys) and np.array_equal(a.sells, b.sells)


def test_noise_jump_mean_count():
    rng = np.random.default_rng(7)
    counts = np.array([sample_noise_jumps(20.0, 1.0, rng).buys.size for _ in range(10_000)])
    assert abs(counts.mean() - 20.0) <= 3 * math.sqrt(20.0 / 10_000)


def test_poisson_time_matrix_rows():
    t = poisson_time_matrix(20.0, 5000, np.random.default_rng(3))
    finite = np.isfinite(t)
    assert np.all(t[finite] < 1.0)
    both = finite[:, 1:] & finite[:, :-1]
    with np.errstate(invalid="ignore"):  # inf - inf in the padding
        gaps = np.diff(t, axis=1)
    assert np.all(gaps[both] > 0)
    assert np.all(finite[:, 1:] <= finite[:, :-1])  # padding only at the end
    counts = finite.sum(axis=1)
    assert abs(counts.mean() - 20.0) <= 3 * math.sqrt(20.0 / 5000)
