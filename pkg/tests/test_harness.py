import json
import math
import pathlib
import re

import numpy as np
import pytest
from scipy import stats

from ppbridge.errors import InsufficientSample
from ppbridge.harness import (TRACEABILITY, TestReport, binomial_ci, chi_square_skellam,
                              filter_identity_test, independence_poisson_components, martingale_probe,
                              pooled_bins, traceability_matrix)
from ppbridge.law import BridgeLawParams, log_h
from ppbridge.simulator import batch_likelihood_ratio, simulate_batch
from ppbridge.skellam import SkellamParams

PARAMS = BridgeLawParams(20.0, 1)


@pytest.fixture(scope="module")
def bridge():
    return simulate_batch(PARAMS, 10_000, seed=123)


def skellam_draws(rng, mu, n):
    return rng.poisson(mu, n) - rng.poisson(mu, n)


def test_pooled_bins_cover_range():
    exp = np.array([0.1, 0.2, 3.0, 10.0, 9.0, 2.0, 1.0, 0.5])
    bins = pooled_bins(exp)
    assert bins[0][0] == 0 and bins[-1][1] == exp.size - 1
    assert all(b[0] == a[1] + 1 for a, b in zip(bins, bins[1:]))
    assert all(exp[a:b + 1].sum() >= 5 for a, b in bins)


def test_chi_square_null_pvalues_are_uniform():
    rng = np.random.default_rng(3)
    p = [chi_square_skellam(skellam_draws(rng, 5.0, 2000), SkellamParams(5.0)).p_value for _ in range(300)]
    assert stats.kstest(p, "uniform").pvalue > 0.001
    r = chi_square_skellam(skellam_draws(rng, 5.0, 2000), SkellamParams(5.0), seed=9)
    assert r.n == 2000 and r.seed == 9 and r.details["bins"] >= 5


@pytest.mark.slow
def test_chi_square_detects_wrong_intensity():
    rng = np.random.default_rng(4)
    rejections = sum(not chi_square_skellam(skellam_draws(rng, 22.0, 100_000), SkellamParams(20.0)).passed
                     for _ in range(20))
    assert rejections >= 18


def test_chi_square_needs_enough_samples():
    with pytest.raises(InsufficientSample):
        chi_square_skellam(np.zeros(999, dtype=int), SkellamParams(1.0))


def test_independence_null_and_correlated_alternative():
    rng = np.random.default_rng(5)
    n, w, rate = 5000, 4, 5.0
    buys, sells = rng.poisson(rate, (n, w)), rng.poisson(rate, (n, w))
    assert independence_poisson_components(buys, sells, rate).passed
    common = rng.poisson(1.0, (n, w))
    corr_b = rng.poisson(rate - 1.0, (n, w)) + common
    corr_s = rng.poisson(rate - 1.0, (n, w)) + common
    r = independence_poisson_components(corr_b, corr_s, rate)
    assert not r.passed and r.statistic > 10
    with pytest.raises(InsufficientSample):
        independence_poisson_components(buys[:, :3], sells[:, :3], rate)


def test_independence_on_bridge_counts(bridge):
    edges = np.linspace(0, 1, 5)
    buys = np.stack([bridge.buy_counts(a, b) for a, b in zip(edges[:-1], edges[1:])], axis=1)
    sells = np.stack([bridge.sell_counts(a, b) for a, b in zip(edges[:-1], edges[1:])], axis=1)
    assert independence_poisson_components(buys, sells, 20.0 * 0.25).passed


def test_binomial_ci_brackets_frequency():
    lo, hi = binomial_ci(30, 100)
    assert lo < 0.3 < hi and 0 <= lo and hi <= 1


def test_filter_identity_true_and_wrong_target(bridge):
    times = (0.25, 0.5, 0.75)
    ys = {t: bridge.y_at(t) for t in times}
    good = lambda y, t: math.exp(log_h(y, t, 20.0, 1))
    wrong = lambda y, t: math.exp(log_h(y, t, 20.0, 2))
    assert filter_identity_test(ys, bridge.member_high, good).passed
    assert not filter_identity_test(ys, bridge.member_high, wrong).passed
    with pytest.raises(InsufficientSample):
        filter_identity_test(ys, bridge.member_high, good, min_bin=10**6)


def test_martingale_probe_on_bridge(bridge):
    start = batch_likelihood_ratio(bridge, 0.0)
    assert np.allclose(start, 1.0, rtol=1e-12)
    vals = {t: batch_likelihood_ratio(bridge, t) for t in (0.25, 0.5, 0.75)}
    assert martingale_probe(vals, conditional=False).passed
    # h for the wrong target breaks the mean-one property
    y0 = log_h(0, 0.0, 20.0, 4)
    bad = {}
    for t in (0.25, 0.5, 0.75):
        y = bridge.y_at(t)
        hi = np.exp(y0 - log_h(y, t, 20.0, 4))
        bad[t] = np.where(bridge.member_high, hi, vals[t])
    assert not martingale_probe(bad, conditional=False).passed


def test_martingale_probe_conditional_bins():
    rng = np.random.default_rng(8)
    steps = rng.choice([-0.1, 0.1], size=(20_000, 3))
    walk = 1 + np.cumsum(steps, axis=1)
    assert martingale_probe({t: walk[:, i] for i, t in enumerate((0.25, 0.5, 0.75))}).passed
    # mean reversion keeps every mean at 1 but breaks the conditional means
    rev = walk.copy()
    rev[:, 2] = 1 + 0.5 * (walk[:, 1] - 1) + rng.choice([-0.1, 0.1], 20_000)
    r = martingale_probe({t: rev[:, i] for i, t in enumerate((0.25, 0.5, 0.75))})
    assert not r.passed and max(abs(z) for z in r.details["z"].values()) < 3


def test_martingale_probe_constant_cases():
    assert martingale_probe({0.0: np.ones(50)}).passed
    assert not martingale_probe({0.0: np.full(50, 1.1)}).passed


def test_report_json_round_trip():
    r = TestReport("x", "anchor", np.float64(1.5), None, np.bool_(True), 0.01, np.int64(10),
                   details={"arr": np.arange(3), 2: np.float32(0.5)})
    d = json.loads(r.to_json())
    assert d["statistic"] == 1.5 and d["passed"] is True and d["details"] == {"arr": [0, 1, 2], "2": 0.5}
    assert r.line().startswith("[PASS] x:")


def test_traceability_points_at_existing_tests():
    root = pathlib.Path(__file__).resolve().parents[1]
    table = traceability_matrix()
    assert table.count("\n") == len(TRACEABILITY) + 2
    for _, target in TRACEABILITY:
        path, _, func = target.partition("::")
        text = (root / path).read_text()
        if func:
            assert re.search(rf"^def {func}\(", text, re.M), target
