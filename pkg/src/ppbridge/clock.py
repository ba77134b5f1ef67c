"""Lone-order clock of the conditioned process.

On the high branch, while the lattice position ``y`` is frozen, the insider's
next lone buy arrives with cumulative hazard

    G(y; t0, t) = beta * int_{t0}^{t} (h(y+1, u) - h(y, u)) / h(y, u) du,

so a lone-order time is ``G^{-1}(-log(1 - eta))`` for a uniform ``eta``.  The
integrand diverges as ``u -> 1`` when ``y`` is below the target, which is what
forces the threshold event.

Two implementations live here:

* :func:`clock_integral` / :func:`invert_clock_exact`: scalar reference built
  on adaptive quadrature and a bracketed root finder;
* :class:`ConditioningTable`: ``log h`` and ``G`` tabulated on a grid in
  ``s = -log(1 - t)`` with cubic Hermite interpolation, for batch use.

Working in ``s`` keeps the grid uniform in the log of the remaining time, so
resolution near ``t = 1`` comes for free.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate, optimize

from .errors import QuadratureError
from .skellam import log_sf_table

EPS_TERM = 1e-9


def s_of_t(t):
    return -np.log1p(-np.asarray(t, dtype=float))


def t_of_s(s):
    return -np.expm1(-np.asarray(s, dtype=float))


def _hazard_s(s: float, y: int, beta: float, y_target: int) -> float:
    # integrand in s: beta e^{-s} (h(y+1)/h(y) - 1)
    mu = beta * math.exp(-s)
    lo, hi = log_sf_table(mu, [y_target - y, y_target - y - 1])[0]
    return mu * math.expm1(hi - lo)


def clock_integral(y: int, t0: float, t1: float, beta: float, y_target: int,
                   tol: float = 1e-10, limit: int = 10_000) -> float:
    """``G(y; t0, t1)`` by adaptive Gauss-Kronrod quadrature in ``s``."""
    s0, s1 = float(s_of_t(t0)), float(s_of_t(t1))
    if s1 <= s0:
        return 0.0
    with warnings.catch_warnings():
        # roundoff notices are expected once the estimate is at machine level
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err, info, *rest = integrate.quad(_hazard_s, s0, s1, args=(y, beta, y_target),
                                               epsabs=tol, epsrel=tol, limit=limit,
                                               full_output=True)
    if rest and rest[0].startswith("The maximum number of subdivisions"):
        raise QuadratureError(f"no convergence after {limit} subdivisions (error estimate {err:.2e})")
    return val


def invert_clock_exact(t0: float, y: int, uniform: float, beta: float, y_target: int,
                       eps_term: float = EPS_TERM) -> float:
    """Smallest ``t`` with ``G(y; t0, t) = -log(1 - uniform)``; ``inf`` if beyond ``1 - eps_term``."""
    if not 0.0 <= uniform < 1.0:
        raise ValueError("uniform must lie in [0, 1)")
    target = -math.log1p(-uniform)
    if target == 0.0:
        return t0
    t_end = 1.0 - eps_term
    if t0 >= t_end or clock_integral(y, t0, t_end, beta, y_target) < target:
        return math.inf
    s0, s_end = float(s_of_t(t0)), float(s_of_t(t_end))

    def gap(s):
        return clock_integral(y, t0, float(t_of_s(s)), beta, y_target) - target

    s_star = optimize.brentq(gap, s0, s_end, xtol=1e-13, rtol=4 * np.finfo(float).eps)
    return float(t_of_s(s_star))


def _hermite(f0, f1, d0, d1, u, width):
    u2 = u * u
    u3 = u2 * u
    return ((2 * u3 - 3 * u2 + 1) * f0 + (u3 - 2 * u2 + u) * width * d0
            + (-2 * u3 + 3 * u2) * f1 + (u3 - u2) * width * d1)


class ConditioningTable:
    """Tabulated ``log h`` and lone-order clock for one ``(beta, y_target)``.

    Rows cover lattice positions ``y_lo .. y_hi``; queries outside that window
    trigger a rebuild with a wider window (see :meth:`ensure`).  Time is
    resolved on ``s in [0, -log(eps_term)]`` with step ``ds``; at and beyond
    ``t = 1 - eps_term`` :meth:`log_h` returns the terminal indicator.

    Parameters
    ----------
    beta, y_target : noise intensity and threshold on the unit lattice.
    y_lo, y_hi : initial lattice window (inclusive).
    ds : panel width in ``s``.
    n_gauss : Gauss-Legendre nodes per panel for the clock integral.
    """

    def __init__(self, beta: float, y_target: int, y_lo: int | None = None,
                 y_hi: int | None = None, eps_term: float = EPS_TERM, ds: float = 0.005,
                 n_gauss: int = 4):
        self.beta = float(beta)
        self.y_target = int(y_target)
        self.eps_term = eps_term
        self.t_end = 1.0 - eps_term
        self.s_end = float(s_of_t(self.t_end))
        self.n_panels = int(math.ceil(self.s_end / ds))
        self.ds = self.s_end / self.n_panels
        self.n_gauss = n_gauss
        half = int(math.ceil(10 + 6 * math.sqrt(self.beta)))
        lo = min(0, self.y_target) - half if y_lo is None else int(y_lo)
        hi = max(0, self.y_target) + half if y_hi is None else int(y_hi)
        self.rebuilds = 0
        self._build(lo, hi)

    def _build(self, y_lo: int, y_hi: int) -> None:
        self.y_lo, self.y_hi = y_lo, y_hi
        ext = np.arange(y_lo - 1, y_hi + 2)
        s_nodes = np.linspace(0.0, self.s_end, self.n_panels + 1)
        mu_nodes = self.beta * np.exp(-s_nodes)
        lh = log_sf_table(mu_nodes, self.y_target - ext).T
        up = lh[2:] - lh[1:-1]
        down = lh[:-2] - lh[1:-1]
        self.logh = np.ascontiguousarray(lh[1:-1])
        self.dlogh = np.ascontiguousarray(-mu_nodes * (np.expm1(up) + np.expm1(down)))
        self.rate = np.ascontiguousarray(mu_nodes * np.expm1(up))

        xg, wg = np.polynomial.legendre.leggauss(self.n_gauss)
        s_gauss = (s_nodes[:-1, None] + 0.5 * self.ds * (xg + 1.0)).ravel()
        mu_gauss = self.beta * np.exp(-s_gauss)
        lg = log_sf_table(mu_gauss, self.y_target - ext[1:]).T
        rate_gauss = (mu_gauss * np.expm1(lg[1:] - lg[:-1])).reshape(len(ext) - 2, self.n_panels, -1)
        panel = 0.5 * self.ds * rate_gauss @ wg
        self.cum = np.zeros((len(ext) - 2, self.n_panels + 1))
        np.cumsum(panel, axis=1, out=self.cum[:, 1:])

    def ensure(self, y_min: int, y_max: int) -> None:
        """Widen the window so that rows ``y_min .. y_max`` are tabulated."""
        if y_min >= self.y_lo and y_max <= self.y_hi:
            return
        pad = int(math.ceil(4 + 2 * math.sqrt(self.beta)))
        self.rebuilds += 1
        self._build(min(self.y_lo, int(y_min) - pad), max(self.y_hi, int(y_max) + pad))

    def _rows(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.int64)
        if y.size:
            self.ensure(int(y.min()), int(y.max()))
        return y - self.y_lo

    def _panel(self, s):
        x = s / self.ds
        j = np.clip(np.floor(x).astype(np.int64), 0, self.n_panels - 1)
        return j, x - j

    def _interp(self, vals, ders, rows, s):
        j, u = self._panel(s)
        return _hermite(vals[rows, j], vals[rows, j + 1], ders[rows, j], ders[rows, j + 1], u, self.ds)

    def log_h(self, y, t) -> np.ndarray:
        """``log h(y, t)``, elementwise over broadcast ``y`` and ``t``."""
        y, t = np.broadcast_arrays(np.asarray(y, dtype=np.int64), np.asarray(t, dtype=float))
        out = np.where(y >= self.y_target, 0.0, -np.inf)
        inner = t < self.t_end
        if np.any(inner):
            rows = self._rows(y[inner])
            out[inner] = np.minimum(self._interp(self.logh, self.dlogh, rows, s_of_t(t[inner])), 0.0)
        return out

    def log_ratio(self, y, t, step: int) -> np.ndarray:
        """``log(h(y + step, t) / h(y, t))`` with the terminal limit at ``t >= 1 - eps_term``."""
        return self.log_h(np.asarray(y) + step, t) - self.log_h(y, t)

    def clock(self, y, t) -> np.ndarray:
        """Cumulative clock ``G(y; 0, t)``, for ``t <= 1 - eps_term``."""
        rows = self._rows(y)
        return self._interp(self.cum, self.rate, rows, np.minimum(s_of_t(t), self.s_end))

    def invert(self, y, t0, exp_draw) -> np.ndarray:
        """Lone-order times from ``t0`` for unit-exponential draws; ``inf`` if past ``1 - eps_term``."""
        y, t0, e = np.broadcast_arrays(np.asarray(y, dtype=np.int64), np.asarray(t0, dtype=float),
                                       np.asarray(exp_draw, dtype=float))
        rows = self._rows(y).ravel()
        goal = (self.clock(y, t0) + e).ravel()
        t0 = t0.ravel()
        out = np.full(goal.shape, np.inf)
        live = goal < self.cum[rows, -1]
        rows, goal = rows[live], goal[live]
        lo = np.zeros(rows.size, dtype=np.int64)
        hi = np.full(rows.size, self.n_panels, dtype=np.int64)
        while np.any(hi - lo > 1):
            mid = (lo + hi) // 2
            below = self.cum[rows, mid] <= goal
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        f0, f1 = self.cum[rows, lo], self.cum[rows, lo + 1]
        d0, d1 = self.rate[rows, lo], self.rate[rows, lo + 1]
        a = np.zeros(rows.size)
        b = np.ones(rows.size)
        for _ in range(48):
            m = 0.5 * (a + b)
            below = _hermite(f0, f1, d0, d1, m, self.ds) <= goal
            a = np.where(below, m, a)
            b = np.where(below, b, m)
        t_hit = t_of_s((lo + 0.5 * (a + b)) * self.ds)
        out[live] = np.maximum(t_hit, t0[live])
        return out.reshape(y.shape)
