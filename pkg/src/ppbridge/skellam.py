"""Skellam kernel for the difference of two independent Poisson(mu) counts.

The pmf is ``exp(-2 mu) I_|k|(2 mu)``, so everything here rests on the
exponentially scaled modified Bessel function of the first kind.  Two
independent routes are provided:

* :func:`log_bessel_i_scaled` evaluates a single order (power series for
  ``x <= 30``, Hankel or Debye asymptotics above, with a short Miller
  recurrence bridging the band where neither expansion is sharp);
* :func:`log_pmf_grid` / :func:`log_sf_table` run a backward ratio recurrence
  over a whole range of orders at once, normalised by the Skellam identity
  ``sum_k pmf(k) = 1``.  This is the workhorse for tabulating conditioning
  functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import ndtri

from .errors import DomainError

SERIES_LIMIT = 30.0
DEBYE_MIN_ORDER = 40
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SkellamParams:
    """Common Poisson mean ``mu`` of both components (``beta * horizon``)."""

    mu: float

    def __post_init__(self):
        if not (self.mu >= 0.0) or not math.isfinite(self.mu):
            raise DomainError(f"mu must be finite and >= 0, got {self.mu!r}")


@dataclass(frozen=True)
class JumpTimes:
    buys: np.ndarray
    sells: np.ndarray

    def __post_init__(self):
        for arr in (self.buys, self.sells):
            if arr.size > 1 and not np.all(np.diff(arr) > 0):
                raise ValueError("jump times must be strictly increasing")


# ---------------------------------------------------------------------------
# Bessel I, exponentially scaled


@lru_cache(maxsize=None)
def _debye_coefficients(n_terms: int = 12) -> tuple[np.ndarray, ...]:
    # u_{k+1}(p) = p^2 (1 - p^2) u_k'(p) / 2 + (1/8) int_0^p (1 - 5 t^2) u_k(t) dt
    polys = [[Fraction(1)]]
    for _ in range(n_terms - 1):
        u = polys[-1]
        nxt = [Fraction(0)] * (len(u) + 3)
        for j, c in enumerate(u):
            if c == 0:
                continue
            if j > 0:
                # p^2 (1 - p^2) * j c p^{j-1} / 2
                nxt[j + 1] += Fraction(j, 2) * c
                nxt[j + 3] -= Fraction(j, 2) * c
            # (1/8) * (c p^{j+1}/(j+1) - 5 c p^{j+3}/(j+3))
            nxt[j + 1] += c / (8 * (j + 1))
            nxt[j + 3] -= 5 * c / (8 * (j + 3))
        while nxt and nxt[-1] == 0:
            nxt.pop()
        polys.append(nxt)
    return tuple(np.array([float(c) for c in u]) for u in polys)


def _log_series(n: int, x: float) -> float:
    half = 0.5 * x
    log_first = n * math.log(half) - math.lgamma(n + 1.0)
    q = half * half
    term, total, m = 1.0, 1.0, 0
    while True:
        m += 1
        term *= q / (m * (m + n))
        total += term
        if term < 1e-17 * total:
            break
    return log_first + math.log(total) - x


def _log_hankel(n: int, x: float) -> float:
    mu4 = 4.0 * n * n
    term, total = 1.0, 1.0
    prev = math.inf
    for k in range(1, 200):
        term *= -(mu4 - (2 * k - 1) ** 2) / (8.0 * k * x)
        a = abs(term)
        if a < 1e-17 * abs(total) or a == 0.0:
            total += term
            break
        if a > prev:
            break
        total += term
        prev = a
    return math.log(total) - 0.5 * (_LOG_2PI + math.log(x))


def _log_debye(n: int, x: float) -> float:
    nu = float(n)
    z = x / nu
    sq = math.sqrt(1.0 + z * z)
    p = 1.0 / sq
    # nu * (eta - z), eta = sq + log(z / (1 + sq)), rearranged to avoid cancellation
    expo = nu / (sq + z) + nu * math.log(z / (1.0 + sq))
    total, scale = 0.0, 1.0
    for coeffs in _debye_coefficients():
        total += np.polynomial.polynomial.polyval(p, coeffs) * scale
        scale /= nu
    return expo - 0.5 * (_LOG_2PI + math.log(nu)) - 0.5 * math.log(sq) + math.log(total)


def _log_miller(n: int, x: float) -> float:
    start = n + int(math.ceil(13.6 * math.sqrt(x))) + 40
    r = 0.0
    log_ratio = 0.0
    for k in range(start, 0, -1):
        r = x / (2.0 * k + x * r)
        if k <= n:
            log_ratio += math.log(r)
    return _log_hankel(0, x) + log_ratio


def log_bessel_i_scaled(order: int, x: float) -> float:
    """``log(exp(-x) * I_order(x))`` for integer ``order >= 0`` and ``x >= 0``."""
    order = int(order)
    if order < 0:
        raise DomainError("order must be nonnegative")
    if not (x >= 0.0):
        raise DomainError(f"x must be >= 0, got {x!r}")
    if x == 0.0:
        return 0.0 if order == 0 else -math.inf
    if x <= SERIES_LIMIT:
        return _log_series(order, x)
    if 4.0 * order * order <= x:
        return _log_hankel(order, x)
    if order >= DEBYE_MIN_ORDER:
        return _log_debye(order, x)
    return _log_miller(order, x)


def bessel_i_scaled(order: int, x: float) -> float:
    """``exp(-x) * I_order(x)``; never overflows."""
    return math.exp(log_bessel_i_scaled(order, x))


# ---------------------------------------------------------------------------
# Skellam pmf / survival


def skellam_log_pmf(k: int, params: SkellamParams) -> float:
    return log_bessel_i_scaled(abs(int(k)), 2.0 * params.mu)


def skellam_pmf(k: int, params: SkellamParams) -> float:
    return math.exp(skellam_log_pmf(k, params))


def _start_index(xmax: float, kmax: int) -> int:
    return max(int(math.ceil(13.6 * math.sqrt(xmax))) + 256, kmax + 32)


def log_pmf_grid(mu, kmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Log pmf and log upper tail on ``k = 0..kmax`` for every mean in ``mu``.

    Returns ``(log_pmf, log_tail)`` of shape ``(m, kmax + 1)`` where
    ``log_tail[:, k] = log P(K >= k)``.  Uses the backward ratio recurrence
    ``r_k = I_k / I_{k-1} = x / (2k + x r_{k+1})`` together with running tail
    sums ``S_k = sum_{j >= k} I_j / I_k``, so the upper tail is accumulated
    from its small end and keeps full relative precision.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if np.any(mu < 0) or not np.all(np.isfinite(mu)):
        raise DomainError("mu must be finite and >= 0")
    requested = int(kmax)
    kmax = max(requested, 1)
    x = 2.0 * mu
    start = _start_index(float(x.max(initial=0.0)), kmax)
    m = x.size
    log_r = np.empty((m, kmax + 1))
    sums = np.empty((m, kmax + 1))
    r_next = np.zeros(m)
    s_next = np.ones(m)
    with np.errstate(divide="ignore"):
        for k in range(start, 0, -1):
            s_k = 1.0 + r_next * s_next
            r_k = x / (2.0 * k + x * r_next)
            if k <= kmax:
                log_r[:, k] = np.log(r_k)
                sums[:, k] = s_k
            r_next, s_next = r_k, s_k
        log_p0 = -np.log1p(2.0 * r_next * s_next)
        log_r[:, 0] = 0.0
        log_pmf = log_p0[:, None] + np.cumsum(log_r, axis=1)
        log_pmf[:, 0] = log_p0
        log_tail = np.empty_like(log_pmf)
        log_tail[:, 1:] = log_pmf[:, 1:] + np.log(sums[:, 1:])
        log_tail[:, 0] = np.logaddexp(log_p0, log_tail[:, 1])
    return log_pmf[:, : requested + 1], log_tail[:, : requested + 1]


def log_sf_table(mu, ks) -> np.ndarray:
    """``log P(K >= k)`` for every ``mu`` (rows) and integer ``k`` (columns)."""
    ks = np.atleast_1d(np.asarray(ks, dtype=np.int64))
    kmax = int(max(ks.max(initial=0), (1 - ks).max(initial=0), 1))
    _, log_tail = log_pmf_grid(mu, kmax)
    out = np.empty((log_tail.shape[0], ks.size))
    pos = ks >= 1
    out[:, pos] = log_tail[:, ks[pos]]
    with np.errstate(divide="ignore"):
        out[:, ~pos] = np.log1p(-np.exp(log_tail[:, 1 - ks[~pos]]))
    return out


def skellam_log_survival(k: int, params: SkellamParams) -> float:
    """``log P(K >= k)``, evaluated on the shorter tail."""
    return float(log_sf_table(params.mu, [int(k)])[0, 0])


def skellam_survival(k: int, params: SkellamParams) -> float:
    return math.exp(skellam_log_survival(k, params))


def skellam_cdf(k: int, params: SkellamParams) -> float:
    """``P(K <= k)``; via symmetry this is ``P(K >= -k)``."""
    return skellam_survival(-int(k), params)


def skellam_quantile(q: float, params: SkellamParams) -> int:
    """Smallest integer ``k`` with ``P(K <= k) >= q``."""
    if not (0.0 < q < 1.0):
        raise DomainError(f"q must lie in (0, 1), got {q!r}")
    if params.mu == 0.0:
        return 0
    sd = math.sqrt(2.0 * params.mu)
    span = int(math.ceil(abs(ndtri(q)) * sd * 1.5)) + 24
    while True:
        ks = np.arange(-span, span + 1)
        cdf = np.exp(log_sf_table(params.mu, -ks)[0])
        hit = np.flatnonzero(cdf >= q)
        if hit.size and hit[0] > 0:
            break
        span *= 2
    # settle ulp-level disagreement with the scalar cdf so q(u) <= k iff u <= F(k)
    k = int(ks[hit[0]])
    while skellam_cdf(k, params) < q:
        k += 1
    while skellam_cdf(k - 1, params) >= q:
        k -= 1
    return k


def sample_noise_jumps(beta: float, horizon: float, rng: np.random.Generator) -> JumpTimes:
    """Buy and sell arrival times of two independent rate-``beta`` Poisson processes."""
    if not beta > 0:
        raise DomainError("beta must be positive")
    if not 0 < horizon <= 1:
        raise DomainError("horizon must lie in (0, 1]")
    return JumpTimes(_poisson_times(beta, horizon, rng), _poisson_times(beta, horizon, rng))


def _poisson_times(rate: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    times = []
    t = rng.exponential(1.0 / rate)
    while t < horizon:
        times.append(t)
        t += rng.exponential(1.0 / rate)
    return np.asarray(times, dtype=float)


def poisson_time_matrix(rate: float, n_paths: int, rng: np.random.Generator,
                        horizon: float = 1.0) -> np.ndarray:
    """Arrival times for ``n_paths`` independent processes, padded with ``inf``.

    Built from exponential interarrivals; each row is strictly increasing and
    every finite entry is below ``horizon``.
    """
    width = int(rate * horizon + 6.0 * math.sqrt(rate * horizon + 1.0) + 8)
    gaps = rng.exponential(1.0 / rate, size=(n_paths, width))
    times = np.cumsum(gaps, axis=1)
    while n_paths and times[:, -1].min() < horizon:
        more = rng.exponential(1.0 / rate, size=(n_paths, width))
        times = np.concatenate([times, times[:, -1:] + np.cumsum(more, axis=1)], axis=1)
    times[times >= horizon] = np.inf
    n_cols = int(np.isfinite(times).sum(axis=1).max(initial=0)) + 1
    return times[:, :n_cols]
