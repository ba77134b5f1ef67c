"""Diffusion limit of the lattice equilibrium and the small-``delta`` sweep.

With ``beta = 1 / (2 delta^2)`` the scaled noise ``delta * Z`` has unit
variance per unit time and the lattice objects approach their Brownian
counterparts:

* price ``p0(y, t) = Phi((y - y0) / sqrt(1 - t))`` with ``y0 = Phi^{-1}(1 - prior)``;
* depth ``d p0 / dy``, the normal density with variance ``1 - t``;
* high-type demand ``dY = (d_y p0 / p0) dt + dW`` and low-type demand
  ``dY = -(d_y p0 / (1 - p0)) dt + dW`` (Brownian motion conditioned on
  ``[W_1 >= y0]`` or its complement).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats
from scipy.special import log_ndtr, ndtr, ndtri

from .errors import StepInstability
from .equilibrium import ExperimentConfig, select_y_delta
from .law import BridgeLawParams
from .rng import RngStreams
from .simulator import EventKind, simulate_batch
from .skellam import SkellamParams, log_sf_table, skellam_pmf

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KyleParams:
    prior_high: float

    def __post_init__(self):
        if not 0.0 < self.prior_high < 1.0:
            raise ValueError("prior_high must lie in (0, 1)")

    @property
    def y0(self) -> float:
        return float(ndtri(1.0 - self.prior_high))


def p0(y, t, params: KyleParams):
    """``Phi((y - y0) / sqrt(1 - t))`` for ``t < 1``."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= 1.0):
        raise ValueError("p0 is evaluated for t < 1")
    return ndtr((np.asarray(y, dtype=float) - params.y0) / np.sqrt(1.0 - t))


def depth0(y, t, params: KyleParams):
    """``d p0 / dy``: normal density of ``y - y0`` with variance ``1 - t``."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= 1.0):
        raise ValueError("depth0 is evaluated for t < 1")
    s = np.sqrt(1.0 - t)
    return stats.norm.pdf((np.asarray(y, dtype=float) - params.y0) / s) / s


def kb_drift(kind: str, y, t, params: KyleParams) -> np.ndarray:
    """h-transform drift: ``d_y p0 / p0`` (``"H"``) or ``-d_y p0 / (1 - p0)`` (``"L"``).

    Evaluated as ``exp(log phi - log Phi)`` so that it stays finite deep in the tails.
    """
    s = np.sqrt(1.0 - np.asarray(t, dtype=float))
    x = (np.asarray(y, dtype=float) - params.y0) / s
    log_phi = -0.5 * x * x - _LOG_SQRT_2PI
    if kind == "H":
        return np.exp(log_phi - log_ndtr(x)) / s
    if kind == "L":
        return -np.exp(log_phi - log_ndtr(-x)) / s
    raise ValueError("kind must be 'H' or 'L'")


@dataclass
class DiffusionPath:
    """Euler-Maruyama paths of one type, stored at ``times``.

    ``values[i, j]`` is ``Y`` of path ``i`` at ``times[j]``; ``drift_integral``
    holds the accumulated ``|drift| dt`` (``B0`` for the high type, ``S0`` for
    the low type) at the same times.  The last column is ``t = 1 - eps_term``.
    """

    kind: str
    times: np.ndarray
    values: np.ndarray
    drift_integral: np.ndarray
    n_steps: int
    halvings: int = 0


def _time_grid(step: float, refine: float, t_end: float, marks) -> np.ndarray:
    pts = [0.0]
    t = 0.0
    while t < t_end:
        t = min(t + min(step, refine * (1.0 - t)), t_end)
        pts.append(t)
    grid = np.union1d(np.asarray(pts), np.asarray([m for m in marks if m < t_end]))
    return grid


def simulate_kb(kind: str, params: KyleParams, step: float, rng: np.random.Generator,
                n_paths: int = 1, record=(0.25, 0.5, 0.75), eps_term: float = 1e-9,
                refine: float = 0.02, y_start: float = 0.0, max_halvings: int = 20) -> DiffusionPath:
    """Simulate the limit demand of one insider type on ``[0, 1 - eps_term]``.

    Steps are ``min(step, refine * (1 - t))``, so they shrink geometrically
    near ``t = 1`` where the drift blows up.  A step whose largest
    ``|drift| * dt`` exceeds 0.5 is split in halves, at most ``max_halvings``
    times; beyond that :class:`StepInstability` is raised.
    """
    if not 0 < step <= 1e-3:
        raise ValueError("step must lie in (0, 1e-3]")
    t_end = 1.0 - eps_term
    grid = _time_grid(step, refine, t_end, record)
    rec_times = np.append(np.asarray([m for m in record if m < t_end], dtype=float), t_end)
    rec_idx = {float(t): j for j, t in enumerate(rec_times)}
    y = np.full(n_paths, float(y_start))
    acc = np.zeros(n_paths)
    values = np.empty((n_paths, rec_times.size))
    drifts = np.empty_like(values)
    halvings = 0
    n_steps = 0
    for t0, t1 in zip(grid[:-1], grid[1:]):
        dt = t1 - t0
        level = 0
        while True:
            d = kb_drift(kind, y, t0, params)
            if np.max(np.abs(d)) * dt / 2 ** level <= 0.5:
                break
            level += 1
            if level > max_halvings:
                raise StepInstability(f"drift too large at t={t0:.3e} after {max_halvings} halvings")
        halvings += level
        h = dt / 2 ** level
        t = t0
        for sub in range(2 ** level):
            if sub:
                d = kb_drift(kind, y, t, params)
            y = y + d * h + math.sqrt(h) * rng.standard_normal(n_paths)
            acc += np.abs(d) * h
            t += h
            n_steps += 1
        j = rec_idx.get(float(t1))
        if j is not None:
            values[:, j] = y
            drifts[:, j] = acc
    return DiffusionPath(kind, rec_times, values, drifts, n_steps, halvings)


def conditioned_bm_cdf(y: float, t: float, params: KyleParams, kind: str = "H") -> float:
    """CDF at ``y`` of ``W_t`` given ``W_1 >= y0`` (``"H"``) or ``W_1 < y0`` (``"L"``), by Bayes."""
    st, sr = math.sqrt(t), math.sqrt(1.0 - t)
    y0 = params.y0
    if kind == "H":
        like, norm = (lambda u: ndtr((u - y0) / sr)), 1.0 - ndtr(y0)
    else:
        like, norm = (lambda u: ndtr((y0 - u) / sr)), ndtr(y0)
    f = lambda u: stats.norm.pdf(u / st) / st * like(u)
    val, _ = integrate.quad(f, -np.inf, y, epsabs=1e-12, limit=400)
    return val / norm


# ---------------------------------------------------------------------------
# lattice quantities in continuum units


@dataclass(frozen=True)
class DepthQuote:
    """Normalised depth at the lattice point nearest to the requested ``y``."""

    k: int
    offset: float
    ask_bessel: float
    ask_survival: float
    bid: float
    spread: float


def depth_gm(y: float, t: float, config: ExperimentConfig) -> DepthQuote:
    """``(a - p) / delta`` by the Bessel and by the survival-difference route, plus bid side.

    ``(a - p)(y, t) / delta = pmf(k_z - k - 1; mu) / delta`` with
    ``mu = beta (1 - t)``; the bid analogue uses ``pmf(k_z - k)`` and the
    spread is ``(a - b) / delta``.
    """
    d = config.delta
    k = int(round(y / d))
    kz = config.target_index()
    mu = config.beta_eff * (1.0 - t)
    n = kz - k - 1
    bessel = skellam_pmf(n, SkellamParams(mu)) / d
    sf = np.exp(log_sf_table(mu, [kz - k - 1, kz - k, kz - k + 1])[0])
    ask = (sf[0] - sf[1]) / d
    bid = skellam_pmf(kz - k, SkellamParams(mu)) / d
    return DepthQuote(k, k * d - y, bessel, float(ask), bid, float(sf[0] - sf[2]) / d)


@dataclass
class ConvergenceRow:
    delta: float
    beta: float
    y_delta: float
    y0: float
    quantile_err: float
    realized_prior: float
    price_err: float
    depth_err: float
    ks_H: dict = field(default_factory=dict)
    ks_L: dict = field(default_factory=dict)
    ks_max: float = math.nan
    ks_insider_H: float = math.nan
    ks_insider_L: float = math.nan
    n_samples: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def deterministic_errors(delta: float, prior: float, y_max: float = 3.0,
                         times=(0.0, 0.25, 0.5, 0.75)) -> ConvergenceRow:
    """Price, depth and threshold errors for one ``delta`` (no simulation)."""
    cfg = ExperimentConfig(delta=delta, prior_high=prior)
    kp = KyleParams(prior)
    y_d, kz, realized = select_y_delta(cfg)
    beta = cfg.beta_eff
    ks = np.arange(-int(math.floor(y_max / delta)), int(math.floor(y_max / delta)) + 1)
    y = ks * delta
    price_err = depth_err = 0.0
    for t in times:
        mu = beta * (1.0 - t)
        sf = np.exp(log_sf_table(mu, np.concatenate([kz - ks, [kz - ks[-1] - 1]]))[0])
        p_lat = sf[:-1]
        a_lat = sf[1:]
        price_err = max(price_err, float(np.max(np.abs(p_lat - p0(y, t, kp)))))
        depth_err = max(depth_err, float(np.max(np.abs((a_lat - p_lat) / delta - depth0(y, t, kp)))))
    return ConvergenceRow(delta, beta, y_d, kp.y0, abs(y_d - kp.y0), realized, price_err, depth_err)


def order_fit(deltas, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(delta)``."""
    x, y = np.log(np.asarray(deltas, float)), np.log(np.asarray(errors, float))
    return float(np.polyfit(x, y, 1)[0])


def convergence_report(deltas=(0.2, 0.1, 0.05), prior: float = 0.5, n_samples: int = 5000,
                       seed: int = 7, times=(0.25, 0.5, 0.75), kb_step: float = 1e-3,
                       simulate: bool = True) -> dict:
    """Sweep ``delta`` with ``beta = 1/(2 delta^2)`` and compare with the diffusion limit.

    Per ``delta``: price error, depth error, ``|y_delta - y0|`` on a grid, and,
    when ``simulate`` is set, two-sample KS distances between ``delta * Y_t``
    of the bridge and the limit SDE for each type and time, plus the KS
    distance between the scaled insider order count at ``t = 1`` and the
    accumulated limit drift.
    """
    kp = KyleParams(prior)
    master = RngStreams(seed)
    kb = {}
    if simulate:
        for j, kind in enumerate("HL"):
            kb[kind] = simulate_kb(kind, kp, kb_step, master.child(1000 + j)["diffusion"], n_samples,
                                   record=times)
    rows = []
    for i, d in enumerate(deltas):
        row = deterministic_errors(d, prior)
        if simulate:
            cfg = ExperimentConfig(delta=d, prior_high=prior)
            params = BridgeLawParams(cfg.beta_eff, cfg.target_index())
            tables = {}
            for j, kind in enumerate("HL"):
                member = "high" if kind == "H" else "low"
                seed_i = int(master.child(10 * i + j).master_seed % (2 ** 63))
                batch = simulate_batch(params, n_samples, seed_i, member=member, tables=tables)
                ks_t = {}
                for c, t in enumerate(times):
                    res = stats.ks_2samp(d * batch.y_at(t), kb[kind].values[:, c])
                    ks_t[str(t)] = float(res.statistic)
                if kind == "H":
                    row.ks_H = ks_t
                    x = d * batch.count((EventKind.INSIDER_LONE_BUY, EventKind.INSIDER_CANCEL_SELL))
                    row.ks_insider_H = float(stats.ks_2samp(x, kb[kind].drift_integral[:, -1]).statistic)
                else:
                    row.ks_L = ks_t
                    x = d * batch.count((EventKind.INSIDER_LONE_SELL, EventKind.INSIDER_CANCEL_BUY))
                    row.ks_insider_L = float(stats.ks_2samp(x, kb[kind].drift_integral[:, -1]).statistic)
            row.ks_max = max(list(row.ks_H.values()) + list(row.ks_L.values()))
            row.n_samples = n_samples
        rows.append(row)
    out = {
        "prior_high": prior,
        "y0": kp.y0,
        "times": list(times),
        "rows": [r.as_dict() for r in rows],
        "depth_order": order_fit(deltas, [r.depth_err for r in rows]),
        "price_order": order_fit(deltas, [r.price_err for r in rows]),
    }
    return out


def _nonincreasing_in_delta(deltas, values) -> bool:
    # values listed along decreasing delta must not increase
    order = np.argsort(-np.asarray(deltas, float))
    v = np.asarray(values, float)[order]
    return bool(np.all(np.diff(v) <= 0.0))


def write_convergence(report: dict, out_dir: str) -> list[str]:
    """JSON report, CSV matrix keyed by ``delta`` and two-column plot files."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    path = os.path.join(out_dir, "convergence.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    written.append(path)
    cols = ["delta", "beta", "y_delta", "quantile_err", "realized_prior", "price_err", "depth_err",
            "ks_max", "ks_insider_H", "ks_insider_L"]
    path = os.path.join(out_dir, "convergence.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in report["rows"]:
            w.writerow([repr(float(r[c])) for c in cols])
    written.append(path)
    for name, col in (("price_convergence", "price_err"), ("depth_convergence", "depth_err"),
                      ("quantile_convergence", "quantile_err"), ("ks_decay", "ks_max")):
        path = os.path.join(out_dir, f"{name}.dat")
        with open(path, "w") as fh:
            fh.write(f"# delta {col}\n")
            for r in report["rows"]:
                fh.write(f"{r['delta']!r} {float(r[col])!r}\n")
        written.append(path)
    return written
