"""Insider value functions, pricing, threshold selection and profit accounting.

Prices live on the lattice ``y = k * delta``.  For a threshold ``z = k_z * delta``
the pricing rule is ``p(y, t) = P(Z_1 >= z | Z_t = y)``, with ask
``a(y, t) = p(y + delta, t)`` and bid ``b(y, t) = p(y - delta, t)``.  The value
of the high (low) type is

    H(y, t) = (z - delta - y)^+ + delta * int_0^{beta (1 - t)} pmf(k_z - k - 1; mu) dmu
    L(y, t) = (y - z)^+         + delta * int_0^{beta (1 - t)} pmf(k_z - k; mu) dmu

where ``pmf`` is the Skellam pmf with common component mean ``mu``; these are
the time integrals of ``delta * beta * (p(y + delta) - p(y))`` and
``delta * beta * (p(y) - p(y - delta))`` rewritten in ``mu = beta (1 - u)``.
The same quantities equal ``E[(z - delta - Z_1)^+ | Z_t = y]`` and
``E[(Z_1 - z)^+ | Z_t = y]``, which the ``"sum"`` method evaluates directly.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, stats

from .clock import ConditioningTable
from .errors import ConfigInvalid, QuadratureError
from .law import BridgeLawParams, log_h
from .simulator import STEP, BridgePath, EventKind, PathBatch, Strategy, simulate_batch
from .skellam import SkellamParams, log_pmf_grid, skellam_pmf, skellam_quantile, skellam_survival


@dataclass
class ExperimentConfig:
    """Parameters shared by every experiment.

    ``beta=None`` selects convergence mode, ``beta = 1 / (2 delta^2)``, which
    gives ``delta * Z_1`` unit variance.  ``y_target`` (lattice units) fixes
    the threshold directly; otherwise it is the ``1 - prior_high`` quantile of
    ``Z_1 / delta``.
    """

    delta: float = 1.0
    beta: float | None = None
    prior_high: float = 0.5
    y_target_mode: str = "adjusted_prior"
    y_target: int | None = None
    seed: int = 20240611
    n_paths: int = 10_000
    y_points: int = 41
    t_grid: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    quad_tol: float = 1e-10
    strategies: tuple = ("equilibrium", "never_cancel", "constant_rate(0)", "bluffing(2)")
    deltas: tuple = (0.2, 0.1, 0.05)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.delta > 0:
            raise ConfigInvalid("equilibrium.delta must be positive")
        if self.beta is not None and not self.beta > 0:
            raise ConfigInvalid("equilibrium.beta must be positive")
        if not 0.0 < self.prior_high < 1.0:
            raise ConfigInvalid("equilibrium.prior_high must lie in (0, 1)")
        if self.y_target_mode not in ("exact_match", "adjusted_prior"):
            raise ConfigInvalid("equilibrium.y_target_mode must be exact_match or adjusted_prior")
        if self.n_paths < 1:
            raise ConfigInvalid("equilibrium.n_paths must be positive")
        if any(not 0.0 <= t <= 1.0 for t in self.t_grid):
            raise ConfigInvalid("equilibrium.t_grid entries must lie in [0, 1]")

    @property
    def convergence_mode(self) -> bool:
        return self.beta is None

    @property
    def beta_eff(self) -> float:
        return 1.0 / (2.0 * self.delta ** 2) if self.beta is None else float(self.beta)

    def target_index(self) -> int:
        if self.y_target is not None:
            return int(self.y_target)
        return select_y_delta(self)[1]

    def law_params(self) -> BridgeLawParams:
        return BridgeLawParams(self.beta_eff, self.target_index())

    def to_dict(self) -> dict:
        return asdict(self)


def select_y_delta(config: ExperimentConfig) -> tuple[float, int, float]:
    """Threshold ``y_delta`` as a real level, its lattice index and the realised prior.

    ``y_delta = delta * q`` with ``q`` the smallest integer such that
    ``P(Z_1 / delta <= q) >= 1 - prior_high``; the realised prior is
    ``P(Z_1 >= y_delta)``, generally not equal to the requested one on a lattice.
    """
    params = SkellamParams(config.beta_eff)
    k = skellam_quantile(1.0 - config.prior_high, params)
    return config.delta * k, int(k), skellam_survival(k, params)


# ---------------------------------------------------------------------------
# value functions


def _reversed_sum(m: int, n: int, term) -> float:
    # sum_{j=m}^{n} with sum_{j=m}^{n} = -sum_{j=n}^{m} when m > n
    if m <= n:
        return float(sum(term(j) for j in range(m, n + 1)))
    return 0.0 - float(sum(term(j) for j in range(n, m + 1)))


def terminal_H(y: float, z: float, delta: float) -> float:
    """``H(y, 1) = delta * sum_{j=y/delta}^{(z-delta)/delta} (1 - P^z(delta (j + 1)))``."""
    k, kz = int(round(y / delta)), int(round(z / delta))
    return delta * _reversed_sum(k, kz - 1, lambda j: 0.0 if j + 1 >= kz else 1.0)


def terminal_L(y: float, z: float, delta: float) -> float:
    """``L(y, 1) = delta * sum_{j=z/delta}^{y/delta} P^z(delta (j - 1))``."""
    k, kz = int(round(y / delta)), int(round(z / delta))
    return delta * _reversed_sum(kz, k, lambda j: 1.0 if j - 1 >= kz else 0.0)


def _pmf_integral(n: int, upper: float, tol: float) -> float:
    if upper <= 0.0:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err, *rest = integrate.quad(lambda mu: skellam_pmf(n, SkellamParams(mu)), 0.0, upper,
                                         epsabs=tol, epsrel=tol, limit=10_000, full_output=True)
    if len(rest) > 1 and rest[1].startswith("The maximum number of subdivisions"):
        raise QuadratureError(f"pmf integral did not converge (order {n}, upper {upper})")
    return val


def _hinge_expectation(offset: int, mu: float, sign: int) -> float:
    # E[(sign * (K - offset))^+] for K ~ Skellam(mu), by direct summation
    span = int(abs(offset) + 12 * math.sqrt(2 * mu + 1) + 40)
    lp, _ = log_pmf_grid(mu, span)
    pmf = np.exp(lp[0])
    ks = np.arange(-span, span + 1)
    full = np.concatenate([pmf[:0:-1], pmf])
    return float(np.sum(full * np.maximum(sign * (ks - offset), 0)))


def value_H(k: int, t: float, config: ExperimentConfig, kz: int | None = None,
            method: str = "quad") -> float:
    """High-type value at ``y = k * delta``.

    ``method="quad"`` integrates the pmf over ``mu``; ``"sum"`` evaluates
    ``delta * E[(k_z - 1 - k - K)^+]`` with ``K ~ Skellam(beta (1 - t))``.
    """
    kz = config.target_index() if kz is None else int(kz)
    d, beta = config.delta, config.beta_eff
    if method == "sum":
        return d * _hinge_expectation(kz - 1 - k, beta * (1.0 - t), -1)
    return terminal_H(k * d, kz * d, d) + d * _pmf_integral(kz - k - 1, beta * (1.0 - t), config.quad_tol)


def value_L(k: int, t: float, config: ExperimentConfig, kz: int | None = None,
            method: str = "quad") -> float:
    """Low-type value at ``y = k * delta``; see :func:`value_H`."""
    kz = config.target_index() if kz is None else int(kz)
    d, beta = config.delta, config.beta_eff
    if method == "sum":
        return d * _hinge_expectation(kz - k, beta * (1.0 - t), 1)
    return terminal_L(k * d, kz * d, d) + d * _pmf_integral(kz - k, beta * (1.0 - t), config.quad_tol)


def price(k, t, beta: float, kz: int):
    """``p(k delta, t)``; vectorised."""
    return np.exp(log_h(k, t, beta, kz))


@dataclass
class ValueSurface:
    """``H``, ``L``, ``p``, ``a``, ``b`` on lattice indices ``ks`` times ``times``."""

    delta: float
    beta: float
    kz: int
    ks: np.ndarray
    times: np.ndarray
    H: np.ndarray
    L: np.ndarray
    p: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return self.ks * self.delta

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "t", "H", "L", "p", "a", "b"])
        for i, k in enumerate(self.ks):
            for j, t in enumerate(self.times):
                w.writerow([repr(float(k * self.delta)), repr(float(t))]
                           + [repr(float(arr[i, j])) for arr in (self.H, self.L, self.p, self.a, self.b)])


def build_surface(config: ExperimentConfig, ks=None, times=None) -> ValueSurface:
    """Tabulate the value functions; default window is ``config.y_points`` indices centred on ``k_z``."""
    kz = config.target_index()
    if ks is None:
        half = config.y_points // 2
        ks = np.arange(kz - half, kz - half + config.y_points)
    ks = np.asarray(ks, dtype=np.int64)
    times = np.asarray(config.t_grid if times is None else times, dtype=float)
    beta = config.beta_eff
    H = np.array([[value_H(int(k), t, config, kz) for t in times] for k in ks])
    L = np.array([[value_L(int(k), t, config, kz) for t in times] for k in ks])
    kk, tt = np.meshgrid(ks, times, indexing="ij")
    return ValueSurface(config.delta, beta, kz, ks, times, H, L, price(kk, tt, beta, kz),
                        price(kk + 1, tt, beta, kz), price(kk - 1, tt, beta, kz))


def hjb_residuals(surface: ValueSurface, config: ExperimentConfig,
                  dts=(0.02, 0.01, 0.005)) -> dict:
    """Residuals of the value-function system on the surface grid.

    * ``time_residual``: ``|V_t + beta (V(y+d) - 2 V(y) + V(y-d))|`` with a
      central difference in ``t`` for each step in ``dts`` (interior times only),
      together with successive ratios (close to 4 for a second-order probe);
    * ``equality``: ``H(y+d) - H(y) + (1 - p(y+d)) d`` and ``L(y-d) - L(y) + p(y-d) d``;
    * ``wrong_side``: ``H(y-d) - H(y) - (1 - p(y-d)) d`` (high type selling) and
      ``L(y+d) - L(y) - p(y+d) d`` (low type buying); nonpositive when the
      opposite-side trade cannot help.
    """
    d, beta, kz = surface.delta, surface.beta, surface.kz
    eq_h, eq_l, ws_h, ws_l = [], [], [], []
    for i, k in enumerate(surface.ks):
        k = int(k)
        for j, t in enumerate(surface.times):
            Hm, H0, Hp = (value_H(k + s, t, config, kz) for s in (-1, 0, 1))
            Lm, L0, Lp = (value_L(k + s, t, config, kz) for s in (-1, 0, 1))
            pm, pp = price(k - 1, t, beta, kz), price(k + 1, t, beta, kz)
            eq_h.append(Hp - H0 + (1.0 - pp) * d)
            eq_l.append(Lm - L0 + pm * d)
            ws_h.append(Hm - H0 - (1.0 - pm) * d)
            ws_l.append(Lp - L0 - pp * d)
    interior = [t for t in surface.times if 0.0 < t < 1.0 and all(0 < t - h and t + h < 1 for h in dts)]
    time_max = []
    for h in dts:
        worst = 0.0
        for k in surface.ks:
            k = int(k)
            for t in interior:
                for fn in (value_H, value_L):
                    v = lambda kk, tt: fn(kk, tt, config, kz, method="sum")
                    vt = (v(k, t + h) - v(k, t - h)) / (2 * h)
                    lap = v(k + 1, t) - 2 * v(k, t) + v(k - 1, t)
                    worst = max(worst, abs(vt + beta * lap))
        time_max.append(worst)
    ratios = [a / b if b > 0 else math.inf for a, b in zip(time_max[:-1], time_max[1:])]
    return {
        "grid": {"n_y": int(surface.ks.size), "n_t": int(surface.times.size),
                 "interior_times": [float(t) for t in interior]},
        "equality_H_max": float(np.max(np.abs(eq_h))),
        "equality_L_max": float(np.max(np.abs(eq_l))),
        "wrong_side_H_max": float(np.max(ws_h)),
        "wrong_side_L_max": float(np.max(ws_l)),
        "time_residual_dts": [float(h) for h in dts],
        "time_residual_max": [float(r) for r in time_max],
        "time_residual_ratios": [float(r) for r in ratios],
        "nonnegative": bool(np.all(surface.H >= -1e-14) and np.all(surface.L >= -1e-14)),
    }


# ---------------------------------------------------------------------------
# profits


def realized_profit(path: BridgePath, surface: ValueSurface) -> float:
    """Insider profit ``sum (v - execution price) * delta`` over signed insider trades.

    Lone buys execute at the ask ``p(Y- + d)``, cancellations of noise sells at
    ``p(Y-)`` (a buy), lone sells at the bid ``p(Y- - d)`` and cancellations of
    noise buys at ``p(Y-)`` (a sell).
    """
    v = 1.0 if path.member_high else 0.0
    total = 0.0
    for ev in path.events:
        y_before = ev.y_after - int(STEP[ev.kind])
        if ev.kind == EventKind.INSIDER_LONE_BUY:
            total += v - float(price(y_before + 1, ev.time, surface.beta, surface.kz))
        elif ev.kind == EventKind.INSIDER_CANCEL_SELL:
            total += v - float(price(y_before, ev.time, surface.beta, surface.kz))
        elif ev.kind == EventKind.INSIDER_LONE_SELL:
            total -= v - float(price(y_before - 1, ev.time, surface.beta, surface.kz))
        elif ev.kind == EventKind.INSIDER_CANCEL_BUY:
            total -= v - float(price(y_before, ev.time, surface.beta, surface.kz))
    return total * surface.delta


# price offset relative to Y- and trade sign, per event kind
_EXEC = {EventKind.INSIDER_LONE_BUY: (1, 1.0), EventKind.INSIDER_CANCEL_SELL: (0, 1.0),
         EventKind.INSIDER_LONE_SELL: (-1, -1.0), EventKind.INSIDER_CANCEL_BUY: (0, -1.0)}


def batch_profit(batch: PathBatch, delta: float, table: ConditioningTable | None = None) -> np.ndarray:
    """Vectorised :func:`realized_profit` for every path of a batch."""
    table = table or ConditioningTable(batch.beta, batch.y_target)
    out = np.zeros(batch.n_paths)
    v = batch.member_high.astype(float)
    for kind, (shift, sign) in _EXEC.items():
        sel = np.flatnonzero(batch.kind == kind)
        if sel.size == 0:
            continue
        p = batch.path[sel]
        y_before = batch.y_after[sel] - STEP[kind]
        px = np.exp(table.log_h(y_before + shift, batch.time[sel]))
        np.add.at(out, p, sign * (v[p] - px))
    return out * delta


def optimality_mc(strategy: Strategy | str, config: ExperimentConfig, n_paths: int | None = None,
                  seed: int | None = None, member: str = "high") -> dict:
    """Monte Carlo profit of a strategy for one insider type against the equilibrium price.

    Returns the mean profit, its standard error, the value ``V(0, 0)`` and the
    one-sided p-value for ``mean < V(0, 0)``.
    """
    strategy = Strategy.parse(strategy) if isinstance(strategy, str) else strategy
    n_paths = config.n_paths if n_paths is None else n_paths
    seed = config.seed if seed is None else seed
    params = config.law_params()
    if member == "high":
        table = ConditioningTable(params.beta, params.y_target)
        value = value_H(0, 0.0, config)
    else:
        table = ConditioningTable(params.beta, params.y_target)
        value = value_L(0, 0.0, config)
    batch = simulate_batch(params, n_paths, seed, strategy, member=member)
    prof = batch_profit(batch, config.delta, table)
    mean = float(prof.mean())
    se = float(prof.std(ddof=1) / math.sqrt(n_paths))
    z = (value - mean) / se if se > 0 else (math.inf if value > mean else 0.0)
    return {
        "strategy": strategy.label(),
        "member": member,
        "n_paths": int(n_paths),
        "seed": int(seed),
        "mean": mean,
        "se": se,
        "value": float(value),
        "z_below": float(z),
        "p_below": float(stats.norm.sf(z)),
        "within_ci": bool(abs(mean - value) <= 3 * se) if se > 0 else bool(abs(mean - value) < 1e-12),
        "not_above": bool(mean <= value + 3 * se),
        "mean_insider_orders": float(batch.insider_counts().mean()),
        "constraint_violations": int(batch.violations().size),
        "guard_resolutions": int(batch.guard_resolutions),
    }
