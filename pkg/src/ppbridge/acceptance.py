"""Acceptance checks shared by the test suite and the command line.

Each function runs one experiment at fixed sizes and seeds and returns a
list of :class:`~ppbridge.harness.TestReport`; a criterion holds when every
report in its list passes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import (ExperimentConfig, build_surface, hjb_residuals, optimality_mc, price,
                          terminal_H, terminal_L)
from .harness import (TestReport, chi_square_skellam, filter_identity_test,
                      independence_poisson_components, martingale_probe)
from .kyle import _nonincreasing_in_delta, convergence_report, deterministic_errors, order_fit
from .law import BridgeLawParams, log_h
from .simulator import batch_likelihood_ratio, simulate_batch
from .skellam import SkellamParams, bessel_i_scaled, log_bessel_i_scaled, log_pmf_grid, skellam_cdf, skellam_quantile

LEVEL = 0.01


@dataclass
class AcceptanceSettings:
    """Sizes and seeds for the acceptance run; ``fast`` shrinks sample sizes for smoke runs."""

    seed: int = 20240611
    delta: float = 1.0
    beta: float = 20.0
    y_target: int = 1
    constraint_paths: int = 100_000
    law_paths: int = 10_000
    profit_paths: int = 10_000
    rational_paths: int = 100_000
    rational_delta: float = 0.2
    deltas: tuple = (0.2, 0.1, 0.05)
    prior: float = 0.5
    ks_samples: int = 5000
    strategies: tuple = ("equilibrium", "never_cancel", "bluffing(2)", "constant_rate(0)",
                         "constant_rate(5)")
    fast: bool = False
    cache: dict = field(default_factory=dict, repr=False)

    def scaled(self, n: int) -> int:
        return max(2000, n // 10) if self.fast else n


def _report(name, anchor, passed, statistic=math.nan, details=None, n=0, seed=None, p=None) -> TestReport:
    return TestReport(name, anchor, float(statistic), p, bool(passed), LEVEL, int(n), seed,
                      details=details or {})


def _bridge_batch(s: AcceptanceSettings):
    # cheap enough to keep at full size in every tier; the filter check needs the bins
    key = ("bridge", s.constraint_paths)
    if key not in s.cache:
        params = BridgeLawParams(s.beta, s.y_target)
        t0 = time.perf_counter()
        batch = simulate_batch(params, key[1], s.seed)
        s.cache[key] = (batch, time.perf_counter() - t0)
    return s.cache[key]


def bridge_constraint(s: AcceptanceSettings) -> list[TestReport]:
    batch, elapsed = _bridge_batch(s)
    bad = int(batch.violations().size)
    return [_report("bridge constraint", "terminal event equals insider type",
                    bad == 0 and elapsed < 120.0, bad, n=batch.n_paths, seed=s.seed,
                    details={"violations": bad, "seconds": elapsed,
                             "guard_resolutions": batch.guard_resolutions,
                             "mean_insider_orders": float(batch.insider_counts().mean())})]


def law_preservation(s: AcceptanceSettings) -> list[TestReport]:
    params = BridgeLawParams(s.beta, s.y_target)
    batch = simulate_batch(params, s.scaled(s.law_paths), s.seed + 1)
    times = (0.25, 0.5, 0.75, 1.0)
    out = []
    for t in times:
        r = chi_square_skellam(batch.y_at(t), SkellamParams(s.beta * t), level=LEVEL / len(times),
                               seed=s.seed + 1, name=f"law preservation t={t}")
        out.append(r)
    return out


def component_independence(s: AcceptanceSettings) -> list[TestReport]:
    params = BridgeLawParams(s.beta, s.y_target)
    batch = simulate_batch(params, s.scaled(s.law_paths), s.seed + 2)
    edges = np.linspace(0.0, 1.0, 5)
    buys = np.stack([batch.buy_counts(a, b) for a, b in zip(edges[:-1], edges[1:])], axis=1)
    sells = np.stack([batch.sell_counts(a, b) for a, b in zip(edges[:-1], edges[1:])], axis=1)
    r = independence_poisson_components(buys, sells, s.beta * np.diff(edges), level=LEVEL, seed=s.seed + 2)
    simultaneous = batch.simultaneous_jumps()
    r.details["simultaneous_jumps"] = simultaneous
    r.passed = r.passed and simultaneous == 0
    return [r]


def filter_identity(s: AcceptanceSettings) -> list[TestReport]:
    batch, _ = _bridge_batch(s)
    times = (0.25, 0.5, 0.75)
    prob = lambda y, t: math.exp(log_h(y, t, s.beta, s.y_target))
    return [filter_identity_test({t: batch.y_at(t) for t in times}, batch.member_high, prob,
                                 seed=s.seed)]


def martingale(s: AcceptanceSettings) -> list[TestReport]:
    params = BridgeLawParams(s.beta, s.y_target)
    batch = simulate_batch(params, s.scaled(s.law_paths), s.seed + 3)
    vals = {t: batch_likelihood_ratio(batch, t) for t in (0.25, 0.5, 0.75)}
    return [martingale_probe(vals, conditional=False, seed=s.seed + 3, name="likelihood ratio mean")]


def value_identities(s: AcceptanceSettings) -> list[TestReport]:
    cfg = ExperimentConfig(delta=1.0, beta=s.beta, y_target=s.y_target, t_grid=(0.1, 0.3, 0.5, 0.7, 0.9))
    surface = build_surface(cfg)
    res = hjb_residuals(surface, cfg)
    eq = max(res["equality_H_max"], res["equality_L_max"])
    ratios = res["time_residual_ratios"]
    quad_ok = all(3.5 <= r <= 4.5 for r in ratios)
    # direct lattice sums against the hinge closed forms; dyadic deltas keep both exact
    term_ok, n_term = True, 0
    for d in (1.0, 0.5, 0.25):
        z = s.y_target * d
        for k in surface.ks:
            y = int(k) * d
            term_ok &= terminal_H(y, z, d) == max(z - d - y, 0.0)
            term_ok &= terminal_L(y, z, d) == max(y - z, 0.0)
            n_term += 2
    return [
        _report("value equality constraint", "value functions solve their linear system", eq <= 1e-8, eq,
                details=res, n=surface.H.size),
        _report("value time equation", "value functions solve their linear system", quad_ok,
                ratios[-1] if ratios else math.nan, details={"max": res["time_residual_max"], "ratios": ratios},
                n=surface.H.size),
        _report("terminal closed forms", "terminal values are hinge functions", term_ok, 0.0,
                n=n_term),
    ]


def optimality(s: AcceptanceSettings) -> list[TestReport]:
    cfg = ExperimentConfig(delta=s.delta, beta=s.beta, y_target=s.y_target, seed=s.seed + 4)
    n = s.scaled(s.profit_paths)
    runs = {name: optimality_mc(name, cfg, n) for name in s.strategies}
    out = []
    for name, r in runs.items():
        if name == "equilibrium":
            out.append(_report("equilibrium attains value", "equilibrium strategy is optimal", r["within_ci"],
                               (r["mean"] - r["value"]) / r["se"], details=r, n=n, seed=cfg.seed))
        elif name.startswith(("never_cancel", "bluffing")):
            out.append(_report(f"{name} strictly below value", "deviations do not improve profit",
                               r["p_below"] < LEVEL, r["z_below"], details=r, n=n, seed=cfg.seed,
                               p=r["p_below"]))
    worst = max(runs.values(), key=lambda r: r["mean"] - r["value"] - 3 * r["se"])
    out.append(_report("no variant above value", "value function bounds every strategy",
                       all(r["not_above"] for r in runs.values()),
                       worst["mean"] - worst["value"], details=runs, n=n, seed=cfg.seed))
    return out


def pricing_rationality(s: AcceptanceSettings) -> list[TestReport]:
    cfg = ExperimentConfig(delta=s.rational_delta, prior_high=s.prior)
    params = cfg.law_params()
    batch = simulate_batch(params, s.scaled(s.rational_paths), s.seed + 5)
    times = (0.25, 0.5, 0.75)
    prob = lambda k, t: float(price(k, t, params.beta, params.y_target))
    r = filter_identity_test({t: batch.y_at(t) for t in times}, batch.member_high, prob, seed=s.seed + 5,
                             name="pricing rationality")
    r.anchor = "price equals the conditional expectation of the value"
    return [r]


def _deterministic_rows(s: AcceptanceSettings):
    key = ("det", s.deltas, s.prior)
    if key not in s.cache:
        s.cache[key] = [deterministic_errors(d, s.prior) for d in s.deltas]
    return s.cache[key]


def depth_convergence(s: AcceptanceSettings) -> list[TestReport]:
    rows = _deterministic_rows(s)
    errs = [r.depth_err for r in rows]
    order = order_fit(s.deltas, errs)
    strictly = bool(np.all(np.diff([errs[i] for i in np.argsort(-np.asarray(s.deltas))]) < 0))
    return [_report("depth convergence", "normalised depth converges to the normal density",
                    strictly and 0.7 <= order <= 1.3, order,
                    details={"deltas": list(s.deltas), "depth_err": errs, "order": order})]


def price_quantile_convergence(s: AcceptanceSettings) -> list[TestReport]:
    rows = _deterministic_rows(s)
    price_err = [r.price_err for r in rows]
    q_err = [r.quantile_err for r in rows]
    alt = [deterministic_errors(d, 0.3) for d in s.deltas]
    return [
        _report("price convergence", "prices converge to the diffusion price",
                _nonincreasing_in_delta(s.deltas, price_err), price_err[-1],
                details={"deltas": list(s.deltas), "price_err": price_err, "order": order_fit(s.deltas, price_err)}),
        _report("threshold convergence", "lattice threshold converges to y0",
                _nonincreasing_in_delta(s.deltas, q_err), q_err[-1],
                details={"deltas": list(s.deltas), "quantile_err": q_err, "prior": s.prior}),
        _report("threshold convergence (prior 0.3)", "lattice threshold converges to y0",
                _nonincreasing_in_delta(s.deltas, [r.quantile_err for r in alt]), alt[-1].quantile_err,
                details={"deltas": list(s.deltas), "quantile_err": [r.quantile_err for r in alt]}),
    ]


def weak_convergence(s: AcceptanceSettings) -> list[TestReport]:
    n = s.scaled(s.ks_samples)
    t0 = time.perf_counter()
    rep = convergence_report(s.deltas, s.prior, n, seed=s.seed + 6)
    elapsed = time.perf_counter() - t0
    rows = rep["rows"]
    series_ok = True
    for kind in ("ks_H", "ks_L"):
        for t in rows[0][kind]:
            series_ok &= _nonincreasing_in_delta(s.deltas, [r[kind][t] for r in rows])
    finest = rows[int(np.argmin(s.deltas))]
    below = finest["ks_max"] < 0.05
    return [_report("weak convergence", "bridge marginals converge to the conditioned diffusion",
                    series_ok and below and elapsed < 600.0, finest["ks_max"], n=n, seed=s.seed + 6,
                    details={"report": rep, "seconds": elapsed, "nonincreasing": series_ok,
                             "finest_below_0.05": below})]


def numeric_kernel(s: AcceptanceSettings) -> list[TestReport]:
    from scipy import stats as st
    worst = 0.0
    for mu in (0.01, 0.5, 1.0, 5.0, 10.0, 25.0, 50.0):
        n = np.arange(0, int(mu + 40 * math.sqrt(mu) + 60))
        pa = st.poisson.pmf(n, mu)
        lp, _ = log_pmf_grid(mu, 30)
        for k in range(0, 31):
            conv = float(np.sum(pa[k:] * pa[: pa.size - k]))
            worst = max(worst, abs(math.exp(lp[0, k]) - conv), abs(bessel_i_scaled(k, 2 * mu) - conv))
    # scaled Bessel against scipy's ive where the latter is representable, and a finite log form
    from scipy import special
    stable, rel = True, 0.0
    for x in (1e-3, 1.0, 1e2, 1e4, 1e6, 1e8):
        for order in (0, 1, 10, 1000, 10_000):
            ref = float(special.ive(order, x))
            got = bessel_i_scaled(order, x)
            stable &= math.isfinite(log_bessel_i_scaled(order, x)) and math.isfinite(got)
            if ref > 1e-290:
                rel = max(rel, abs(got - ref) / ref)
    stable &= rel <= 1e-10
    galois = True
    for mu in (0.1, 1.0, 10.0, 100.0):
        p = SkellamParams(mu)
        for k in range(-200, 201):
            c = skellam_cdf(k, p)
            if 0.0 < c < 1.0:
                galois &= skellam_quantile(c, p) <= k
                galois &= skellam_cdf(skellam_quantile(c, p), p) >= c
    return [
        _report("pmf vs convolution", "Skellam pmf accuracy", worst <= 1e-10, worst),
        _report("scaled Bessel stability", "Skellam pmf accuracy", stable, rel),
        _report("quantile/cdf Galois relations", "Skellam quantile consistency", galois, 0.0),
    ]


CRITERIA = [
    (1, "bridge constraint", bridge_constraint),
    (2, "law preservation", law_preservation),
    (3, "component independence", component_independence),
    (4, "filter identity", filter_identity),
    (5, "martingale probe", martingale),
    (6, "value-function identities", value_identities),
    (7, "optimality", optimality),
    (8, "pricing rationality", pricing_rationality),
    (9, "depth convergence", depth_convergence),
    (10, "price and quantile convergence", price_quantile_convergence),
    (11, "weak convergence", weak_convergence),
    (12, "numeric kernel", numeric_kernel),
]
