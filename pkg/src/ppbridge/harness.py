"""Statistical checks that bind simulated paths to the properties they should have.

Every check returns a :class:`TestReport`.  Thresholds are fixed by the caller
before the sample is drawn; nothing here adapts the level to the data.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import InsufficientSample
from .skellam import SkellamParams, log_pmf_grid


@dataclass
class TestReport:
    """Outcome of one statistical check.

    ``anchor`` names the property under test in words, e.g.
    ``"terminal event equals insider type"``.
    """

    __test__ = False  # not a pytest class

    name: str
    anchor: str
    statistic: float
    p_value: float | None
    passed: bool
    level: float
    n: int
    seed: int | None = None
    ci: tuple | None = None
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_plain(asdict(self)), sort_keys=True)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        p = "" if self.p_value is None else f" p={self.p_value:.3g}"
        return f"[{tag}] {self.name}: stat={self.statistic:.4g}{p} n={self.n}"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def pooled_bins(expected: np.ndarray, min_count: float = 5.0) -> list[tuple[int, int]]:
    """Contiguous index ranges whose expected counts each reach ``min_count``."""
    bins, start, acc = [], 0, 0.0
    for i, e in enumerate(expected):
        acc += e
        if acc >= min_count:
            bins.append((start, i))
            start, acc = i + 1, 0.0
    if start < len(expected):
        if bins:
            bins[-1] = (bins[-1][0], len(expected) - 1)
        else:
            bins.append((0, len(expected) - 1))
    return bins


def chi_square_skellam(samples, params: SkellamParams, level: float = 0.01, seed: int | None = None,
                       name: str = "skellam marginal") -> TestReport:
    """Pearson chi-square of integer samples against ``Skellam(mu)``, tails pooled to count >= 5."""
    x = np.asarray(samples, dtype=np.int64)
    n = x.size
    if n < 1000:
        raise InsufficientSample(f"need at least 1000 samples, got {n}")
    span = int(max(np.abs(x).max(initial=0), 10 + 10 * math.sqrt(2 * params.mu + 1)))
    lp, _ = log_pmf_grid(params.mu, span)
    half = np.exp(lp[0])
    pmf = np.concatenate([half[:0:-1], half])
    ks = np.arange(-span, span + 1)
    # open-ended tails so the expected total is n
    pmf[0] += max(0.0, (1.0 - pmf.sum()) / 2)
    pmf[-1] = max(0.0, 1.0 - pmf[:-1].sum())
    observed = np.bincount(x - ks[0], minlength=ks.size).astype(float)
    expected = n * pmf
    bins = pooled_bins(expected)
    obs = np.array([observed[a:b + 1].sum() for a, b in bins])
    exp = np.array([expected[a:b + 1].sum() for a, b in bins])
    exp *= obs.sum() / exp.sum()
    stat, p = stats.chisquare(obs, exp)
    return TestReport(name, "marginal law equals the noise law", float(stat), float(p), bool(p > level),
                      level, int(n), seed, details={"bins": len(bins), "mu": params.mu})


def _poisson_cells(rate: float, n_cells: int = 4) -> np.ndarray:
    # integer cut points giving roughly equal Poisson mass per cell
    qs = stats.poisson.ppf(np.linspace(0, 1, n_cells + 1)[1:-1], rate)
    return np.unique(qs.astype(np.int64))


def independence_poisson_components(buys: np.ndarray, sells: np.ndarray, rates, level: float = 0.01,
                                    seed: int | None = None, z_max: float = 3.0) -> TestReport:
    """Independence and Poisson marginals of up- and down-jump counts on disjoint windows.

    ``buys`` and ``sells`` are ``(n_paths, n_windows)`` count arrays and
    ``rates`` the expected count per window.  The check passes when every
    buy/sell cross-covariance z-score (all window pairs) stays below
    ``z_max`` and every chi-square p-value (marginal Poisson fits and
    contingency factorisation on a coarse grid) exceeds ``level`` divided by
    the number of such tests.  Same-side covariances are reported only.
    """
    buys, sells = np.asarray(buys), np.asarray(sells)
    n, w = buys.shape
    if w < 4:
        raise InsufficientSample("need at least 4 disjoint windows")
    if n < 200:
        raise InsufficientSample("need at least 200 paths")
    rates = np.broadcast_to(np.asarray(rates, dtype=float), (w,))
    z_scores = {}
    series = {f"B{i}": buys[:, i] for i in range(w)} | {f"S{i}": sells[:, i] for i in range(w)}
    names = list(series)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            u = (series[a] - series[a].mean()) * (series[b] - series[b].mean())
            sd = u.std(ddof=1)
            z_scores[f"{a}-{b}"] = float(u.mean() / (sd / math.sqrt(n))) if sd > 0 else 0.0
    p_values = {}
    for i in range(w):
        for label, arr in (("B", buys[:, i]), ("S", sells[:, i])):
            cuts = _poisson_cells(rates[i], 6)
            cells = np.searchsorted(cuts, arr, side="right")
            obs = np.bincount(cells, minlength=cuts.size + 1).astype(float)
            cdf = stats.poisson.cdf(cuts - 1, rates[i])
            probs = np.diff(np.concatenate([[0.0], cdf, [1.0]]))
            p_values[f"poisson {label}{i}"] = float(stats.chisquare(obs, n * probs).pvalue)
        cb, cs = _poisson_cells(rates[i]), _poisson_cells(rates[i])
        table = np.zeros((cb.size + 1, cs.size + 1))
        np.add.at(table, (np.searchsorted(cb, buys[:, i], side="right"),
                          np.searchsorted(cs, sells[:, i], side="right")), 1)
        table = table[table.sum(1) > 0][:, table.sum(0) > 0]
        p_values[f"factorisation {i}"] = float(stats.chi2_contingency(table)[1])
    alpha = level / len(p_values)
    zmax = max(abs(z) for key, z in z_scores.items() if key[0] != key[key.index("-") + 1])
    pmin = min(p_values.values())
    passed = zmax < z_max and pmin > alpha
    return TestReport("component independence", "up and down jumps are independent Poisson processes",
                      float(zmax), float(pmin), bool(passed), level, int(n), seed,
                      details={"z_scores": z_scores, "p_values": p_values, "bonferroni_alpha": alpha})


def binomial_ci(k: int, n: int, conf: float = 0.99) -> tuple[float, float]:
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=conf, method="exact")
    return float(ci.low), float(ci.high)


def filter_identity_test(y_by_time: dict, member: np.ndarray, prob, min_bin: int = 200,
                         coverage: float = 0.97, conf: float = 0.99, seed: int | None = None,
                         name: str = "filter identity") -> TestReport:
    """Binned membership frequency against a predicted conditional probability.

    ``y_by_time`` maps ``t`` to the per-path values ``Y_t``; ``prob(y, t)``
    returns the predicted ``P(member | Y_t = y)``.  Every ``(t, y)`` bin with at
    least ``min_bin`` paths contributes an exact binomial CI; the check passes
    when at least ``coverage`` of those intervals contain the prediction.
    """
    member = np.asarray(member, dtype=bool)
    rows = []
    for t, ys in y_by_time.items():
        ys = np.asarray(ys)
        vals, counts = np.unique(ys, return_counts=True)
        for y, c in zip(vals, counts):
            if c < min_bin:
                continue
            k = int(member[ys == y].sum())
            lo, hi = binomial_ci(k, int(c), conf)
            pred = float(prob(int(y), float(t)))
            rows.append({"t": float(t), "y": int(y), "n": int(c), "freq": k / c, "pred": pred,
                         "lo": lo, "hi": hi, "covered": bool(lo <= pred <= hi)})
    if not rows:
        raise InsufficientSample(f"no bin reaches {min_bin} samples")
    frac = float(np.mean([r["covered"] for r in rows]))
    return TestReport(name, "membership frequency given Y_t equals h(Y_t, t)", frac, None,
                      bool(frac >= coverage), 1 - conf, int(member.size), seed,
                      details={"bins": rows, "n_bins": len(rows), "coverage_required": coverage})


def martingale_probe(values_at_times: dict, level_se: float = 3.0, n_bins: int = 5,
                     seed: int | None = None, name: str = "likelihood-ratio martingale",
                     conditional: bool = True) -> TestReport:
    """Mean-one and conditional-mean checks for a positive martingale started at 1.

    ``values_at_times`` maps increasing times to per-path samples.  Passes when
    every sample mean is within ``level_se`` standard errors of 1 and, for each
    consecutive pair of times, the later mean within quantile bins of the
    earlier value matches the earlier bin mean within ``level_se`` standard
    errors.  ``conditional=False`` keeps only the mean-one checks.
    """
    times = sorted(values_at_times)
    means, zs = {}, {}
    for t in times:
        v = np.asarray(values_at_times[t], dtype=float)
        se = v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else 0.0
        means[str(t)] = float(v.mean())
        zs[str(t)] = 0.0 if se == 0 else float((v.mean() - 1.0) / se)
        if se == 0 and abs(v.mean() - 1.0) > 1e-12:
            zs[str(t)] = math.inf
    cond = {}
    for t1, t2 in zip(times[:-1], times[1:]) if conditional else ():
        a = np.asarray(values_at_times[t1], dtype=float)
        b = np.asarray(values_at_times[t2], dtype=float)
        edges = np.unique(np.quantile(a, np.linspace(0, 1, n_bins + 1)))
        if edges.size < 3:
            continue
        cell = np.clip(np.searchsorted(edges, a, side="right") - 1, 0, edges.size - 2)
        for c in np.unique(cell):
            m = cell == c
            if m.sum() < 30:
                continue
            diff = b[m] - a[m]
            se = diff.std(ddof=1) / math.sqrt(m.sum())
            cond[f"{t1}->{t2} bin {int(c)}"] = 0.0 if se == 0 else float(diff.mean() / se)
    worst = max([abs(z) for z in zs.values()] + [abs(z) for z in cond.values()] + [0.0])
    n = int(min(len(values_at_times[t]) for t in times)) if times else 0
    return TestReport(name, "likelihood ratio is a mean-one martingale", worst, None,
                      bool(worst <= level_se), level_se, n, seed,
                      details={"means": means, "z": zs, "conditional_z": cond})


TRACEABILITY = [
    ("terminal event equals insider type", "tests/test_acceptance.py::test_bridge_constraint"),
    ("marginal law of Y_t is the noise law", "tests/test_acceptance.py::test_law_preservation"),
    ("up and down jumps are independent Poisson", "tests/test_acceptance.py::test_component_independence"),
    ("P(I | Y_t) = h(Y_t, t)", "tests/test_acceptance.py::test_filter_identity"),
    ("likelihood ratio is a mean-one martingale", "tests/test_acceptance.py::test_martingale_probe"),
    ("value functions solve their linear system", "tests/test_acceptance.py::test_value_function_identities"),
    ("equilibrium strategy is optimal", "tests/test_acceptance.py::test_optimality"),
    ("pricing rule is rational", "tests/test_acceptance.py::test_pricing_rationality"),
    ("normalised depth converges to the normal density", "tests/test_acceptance.py::test_depth_convergence"),
    ("prices and thresholds converge", "tests/test_acceptance.py::test_price_quantile_convergence"),
    ("bridge marginals converge to the conditioned diffusion",
     "tests/test_acceptance.py::test_weak_convergence"),
    ("Skellam kernel accuracy", "tests/test_acceptance.py::test_numeric_kernel"),
    ("h solves the backward equation", "tests/test_law.py"),
    ("lone-order clock inversion", "tests/test_clock.py"),
    ("enlarged intensities compensate the jumps", "tests/test_simulator.py"),
]


def traceability_matrix() -> str:
    """Markdown table mapping each verified property to the tests that bind it."""
    lines = ["| property | test |", "| --- | --- |"]
    lines += [f"| {prop} | `{test}` |" for prop, test in TRACEABILITY]
    return "\n".join(lines) + "\n"
