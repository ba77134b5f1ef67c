"""Conditioning function h, pricing rules, enlarged intensities, likelihood ratio.

Everything lives on the unit lattice.  ``h(y, t) = P(Z_1 >= y_target | Z_t = y)``
where ``Z`` is the difference of two rate-``beta`` Poisson processes, i.e. a
Skellam survival probability with mean ``beta * (1 - t)`` per component.
Probabilities are handled as logs throughout; ``log(1 - h)`` is obtained from
the mirrored survival ``P(K >= y - y_target + 1)`` rather than by subtraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DegenerateStateError
from .skellam import log_sf_table

LOG_UNDERFLOW = -745.0


@dataclass(frozen=True)
class BridgeLawParams:
    """Noise intensity, terminal threshold and prior of the high type.

    ``prior_high`` defaults to ``h(0, 0)``, the only prior for which the
    threshold event can be matched exactly.
    """

    beta: float
    y_target: int
    prior_high: float | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "y_target", int(self.y_target))
        if self.prior_high is None:
            object.__setattr__(self, "prior_high", self.h00)
        # 0 and 1 arise when h(0, 0) rounds off for a far-away threshold
        if not 0.0 <= self.prior_high <= 1.0:
            raise ValueError("prior_high must lie in [0, 1]")

    @property
    def h00(self) -> float:
        return float(np.exp(log_h(0, 0.0, self.beta, self.y_target)))

    def is_exact_match(self, tol: float = 1e-12) -> bool:
        return abs(self.prior_high - self.h00) <= tol


@dataclass(frozen=True)
class LatticeState:
    y: int
    t: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {self.t!r}")


def _log_sf_broadcast(k, mu) -> np.ndarray:
    k, mu = np.broadcast_arrays(np.asarray(k, dtype=np.int64), np.asarray(mu, dtype=float))
    shape = k.shape
    k, mu = k.ravel(), mu.ravel()
    mu_u, mu_inv = np.unique(mu, return_inverse=True)
    k_u, k_inv = np.unique(k, return_inverse=True)
    table = log_sf_table(mu_u, k_u)
    return table[mu_inv, k_inv].reshape(shape)


def log_h(y, t, beta: float, y_target: int):
    """``log h(y, t)``; vectorised over ``y`` and ``t``; at ``t = 1`` the indicator."""
    mu = beta * (1.0 - np.asarray(t, dtype=float))
    out = _log_sf_broadcast(int(y_target) - np.asarray(y, dtype=np.int64), np.maximum(mu, 0.0))
    return out if out.ndim else float(out)


def log_one_minus_h(y, t, beta: float, y_target: int):
    """``log(1 - h(y, t)) = log P(K >= y - y_target + 1)`` by symmetry of ``K``."""
    mu = beta * (1.0 - np.asarray(t, dtype=float))
    out = _log_sf_broadcast(np.asarray(y, dtype=np.int64) - int(y_target) + 1, np.maximum(mu, 0.0))
    return out if out.ndim else float(out)


def h(state: LatticeState, params: BridgeLawParams) -> float:
    """``P(Z_1 >= y_target | Z_t = y)``."""
    return math.exp(log_h(state.y, state.t, params.beta, params.y_target))


def pricing_p(z_level: int, state: LatticeState, params: BridgeLawParams) -> float:
    """``p^z(y, t) = E[1{Z_1 >= z} | Z_t = y]``: the kernel of ``h`` with target ``z``."""
    return math.exp(log_h(state.y, state.t, params.beta, z_level))


def h_pde_residual(state: LatticeState, params: BridgeLawParams, dt: float,
                   z_level: int | None = None) -> float:
    """Central-difference residual of ``h_t + beta (h(y+1) + h(y-1) - 2 h(y)) = 0``.

    With ``z_level`` the same probe is applied to ``p^z``.
    """
    if not (state.t - dt > 0.0 and state.t + dt < 1.0):
        raise ValueError("need 0 < t - dt and t + dt < 1")
    target = params.y_target if z_level is None else int(z_level)
    ys = np.array([state.y - 1, state.y, state.y + 1, state.y, state.y])
    ts = np.array([state.t, state.t, state.t, state.t + dt, state.t - dt])
    vals = np.exp(log_h(ys, ts, params.beta, target))
    h_t = (vals[3] - vals[4]) / (2.0 * dt)
    return float(h_t + params.beta * (vals[0] + vals[2] - 2.0 * vals[1]))


def _branch_logs(state: LatticeState, member_high: bool, params: BridgeLawParams) -> np.ndarray:
    ys = np.array([state.y - 1, state.y, state.y + 1])
    fn = log_h if member_high else log_one_minus_h
    return np.asarray(fn(ys, state.t, params.beta, params.y_target), dtype=float)


def enlarged_intensity(side: Literal["up", "down"], member_high: bool, state: LatticeState,
                       params: BridgeLawParams) -> float:
    """Intensity of the up/down jumps of ``Z`` once ``1{Z_1 >= y_target}`` is known.

    On the high branch this is ``beta h(y +- 1, t) / h(y, t)``; on the low
    branch ``h`` is replaced by ``1 - h``.
    """
    if state.t >= 1.0:
        raise ValueError("intensities are defined for t < 1 only")
    lo, mid, hi = _branch_logs(state, member_high, params)
    if mid < LOG_UNDERFLOW:
        raise DegenerateStateError(
            f"conditioning probability underflows at y={state.y}, t={state.t} (log={mid:.1f})")
    other = hi if side == "up" else lo
    if side not in ("up", "down"):
        raise ValueError("side must be 'up' or 'down'")
    return params.beta * math.exp(other - mid)


def likelihood_ratio(state: LatticeState, member_high: bool, params: BridgeLawParams) -> float:
    """``h(0,0)/h(Y_t,t)`` on the high branch, ``(1-h(0,0))/(1-h(Y_t,t))`` on the low one."""
    if state.t >= 1.0:
        raise ValueError("the likelihood ratio is defined for t < 1 only")
    fn = log_h if member_high else log_one_minus_h
    num = fn(0, 0.0, params.beta, params.y_target)
    den = fn(state.y, state.t, params.beta, params.y_target)
    if den < LOG_UNDERFLOW:
        raise DegenerateStateError(f"conditioning probability underflows at y={state.y}, t={state.t}")
    return math.exp(num - den)
