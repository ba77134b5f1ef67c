"""Event-driven construction of the Poisson bridge and of competing insider strategies.

Total demand is ``Y = Z + X^B 1_I - X^S 1_{I^c}``: noise flow ``Z`` plus insider
flow that makes ``[Y_1 >= y_target]`` coincide with the insider's private
event ``I``.  On ``I`` the insider

* buys alone at the times of the lone-order clock (see :mod:`ppbridge.clock`);
* cancels each noise sell with probability ``1 - h(y-1, t)/h(y, t)`` by
  submitting a simultaneous buy.

Low-type paths are generated by the same code on the reflected lattice
``y -> -y`` with target ``1 - y_target``; ``1 - h`` is exactly ``h`` of the
reflected problem.

Paths are advanced together as a wavefront: each iteration processes the next
event of every unfinished path, which keeps the work vectorised over paths.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from typing import Iterable

import numpy as np

from .clock import EPS_TERM, ConditioningTable, invert_clock_exact
from .errors import GuardViolation
from .law import BridgeLawParams, LatticeState, enlarged_intensity, log_h, log_one_minus_h
from .rng import RngStreams
from .skellam import poisson_time_matrix


class EventKind(IntEnum):
    NOISE_BUY = 0
    NOISE_SELL = 1
    INSIDER_LONE_BUY = 2
    INSIDER_CANCEL_SELL = 3
    INSIDER_LONE_SELL = 4
    INSIDER_CANCEL_BUY = 5


STEP = np.array([1, -1, 1, 0, -1, 0], dtype=np.int64)
INSIDER_KINDS = (EventKind.INSIDER_LONE_BUY, EventKind.INSIDER_CANCEL_SELL,
                 EventKind.INSIDER_LONE_SELL, EventKind.INSIDER_CANCEL_BUY)
# reflecting the lattice swaps buys and sells
MIRROR_KIND = np.array([1, 0, 4, 5, 2, 3], dtype=np.int8)


@dataclass(frozen=True)
class EventMark:
    kind: EventKind
    time: float
    y_after: int


@dataclass(frozen=True)
class Strategy:
    """Insider behaviour on the high branch (mirrored for the low branch).

    ``equilibrium``
        lone-order clock plus cancellations; produces the bridge.
    ``never_cancel``
        the same lone-order clock, every noise sell passes through.
    ``constant_rate``
        lone buys at Poisson rate ``rate``; no cancellations.
    ``bluffing``
        equilibrium plus lone sells at Poisson rate ``rate`` on ``[0, 1 - eps)``.
    """

    kind: str = "equilibrium"
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("equilibrium", "never_cancel", "constant_rate", "bluffing"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.rate < 0:
            raise ValueError("rate must be nonnegative")

    @property
    def uses_clock(self) -> bool:
        return self.kind != "constant_rate"

    @property
    def cancels(self) -> bool:
        return self.kind in ("equilibrium", "bluffing")

    def label(self) -> str:
        return self.kind if self.kind in ("equilibrium", "never_cancel") else f"{self.kind}({self.rate:g})"

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        text = text.strip()
        if "(" in text:
            name, arg = text.rstrip(")").split("(", 1)
            return cls(name.strip(), float(arg))
        return cls(text)


@dataclass
class BridgePath:
    """One simulated path: time-ordered insider and noise events and the type flag."""

    events: list[EventMark]
    member_high: bool
    terminal_y: int
    seed: list[int] = field(default_factory=list)

    def check(self, y_target: int) -> None:
        """Raise ``GuardViolation`` when a structural invariant fails."""
        y = 0
        last = -math.inf
        for ev in self.events:
            if ev.time < last:
                raise GuardViolation("events are not time ordered")
            last = ev.time
            y += int(STEP[ev.kind])
            if y != ev.y_after:
                raise GuardViolation(f"y_after mismatch at t={ev.time}")
            forbidden = ((EventKind.INSIDER_LONE_SELL, EventKind.INSIDER_CANCEL_BUY) if self.member_high
                         else (EventKind.INSIDER_LONE_BUY, EventKind.INSIDER_CANCEL_SELL))
            if ev.kind in forbidden:
                raise GuardViolation(f"{ev.kind.name} on the wrong branch")
        if y != self.terminal_y:
            raise GuardViolation("terminal_y differs from the net event count")

    def to_json(self) -> str:
        return json.dumps({
            "seed": list(self.seed),
            "member_high": bool(self.member_high),
            "terminal_y": int(self.terminal_y),
            "events": [{"t": float(e.time), "kind": e.kind.name, "y_after": int(e.y_after)}
                       for e in self.events],
        })

    @classmethod
    def from_json(cls, line: str) -> "BridgePath":
        rec = json.loads(line)
        events = [EventMark(EventKind[e["kind"]], float(e["t"]), int(e["y_after"])) for e in rec["events"]]
        return cls(events, bool(rec["member_high"]), int(rec["terminal_y"]), list(rec["seed"]))

    def y_at(self, t: float) -> int:
        y = 0
        for ev in self.events:
            if ev.time > t:
                break
            y = ev.y_after
        return y


@dataclass
class PathBatch:
    """Flat event arrays for many paths, sorted by path and then by time."""

    beta: float
    y_target: int
    member_high: np.ndarray
    terminal_y: np.ndarray
    path: np.ndarray
    time: np.ndarray
    kind: np.ndarray
    y_after: np.ndarray
    master_seed: int
    strategy: Strategy = Strategy()
    guard_resolutions: int = 0
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        counts = np.bincount(self.path, minlength=self.n_paths)
        self.offsets = np.concatenate([[0], np.cumsum(counts)])

    @property
    def n_paths(self) -> int:
        return int(self.member_high.size)

    def _count_where(self, mask: np.ndarray) -> np.ndarray:
        c = np.concatenate([[0], np.cumsum(mask, dtype=np.int64)])
        return c[self.offsets[1:]] - c[self.offsets[:-1]]

    def y_at(self, t: float) -> np.ndarray:
        """``Y_t`` for every path (right-continuous)."""
        n_before = self._count_where(self.time <= t)
        last = np.maximum(self.offsets[:-1] + n_before - 1, 0)
        if self.y_after.size == 0:
            return np.zeros(self.n_paths, dtype=np.int64)
        return np.where(n_before > 0, self.y_after[np.minimum(last, self.y_after.size - 1)], 0)

    def count(self, kinds: Iterable[int], t0: float = 0.0, t1: float = 1.0) -> np.ndarray:
        """Per-path number of events of the given kinds with ``t0 < time <= t1``."""
        mask = np.isin(self.kind, list(kinds)) & (self.time > t0) & (self.time <= t1)
        return self._count_where(mask)

    def buy_counts(self, t0: float = 0.0, t1: float = 1.0) -> np.ndarray:
        """Increments of the up-jump component ``Y^B``."""
        return self.count((EventKind.NOISE_BUY, EventKind.INSIDER_LONE_BUY), t0, t1)

    def sell_counts(self, t0: float = 0.0, t1: float = 1.0) -> np.ndarray:
        return self.count((EventKind.NOISE_SELL, EventKind.INSIDER_LONE_SELL), t0, t1)

    def insider_counts(self) -> np.ndarray:
        return self.count(INSIDER_KINDS)

    def violations(self) -> np.ndarray:
        """Paths where ``[Y_1 >= y_target]`` disagrees with the type flag."""
        return np.flatnonzero((self.terminal_y >= self.y_target) != self.member_high)

    def simultaneous_jumps(self) -> int:
        """Number of pairs of Y-changing events sharing a path and a time stamp."""
        moving = STEP[self.kind] != 0
        p, t = self.path[moving], self.time[moving]
        return int(np.sum((np.diff(p) == 0) & (np.diff(t) == 0)))

    def subset(self, mask: np.ndarray) -> "PathBatch":
        keep = np.flatnonzero(mask)
        remap = np.full(self.n_paths, -1, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        ev = remap[self.path] >= 0
        return PathBatch(self.beta, self.y_target, self.member_high[keep], self.terminal_y[keep],
                         remap[self.path[ev]], self.time[ev], self.kind[ev], self.y_after[ev],
                         self.master_seed, self.strategy, self.guard_resolutions)

    def path_record(self, i: int) -> BridgePath:
        sl = slice(self.offsets[i], self.offsets[i + 1])
        events = [EventMark(EventKind(int(k)), float(t), int(y))
                  for k, t, y in zip(self.kind[sl], self.time[sl], self.y_after[sl])]
        return BridgePath(events, bool(self.member_high[i]), int(self.terminal_y[i]),
                          [int(self.master_seed), int(i)])

    def to_paths(self) -> list[BridgePath]:
        return [self.path_record(i) for i in range(self.n_paths)]

    def write_jsonl(self, fh) -> None:
        for i in range(self.n_paths):
            fh.write(self.path_record(i).to_json())
            fh.write("\n")


def read_jsonl(fh) -> list[BridgePath]:
    return [BridgePath.from_json(line) for line in fh if line.strip()]


@lru_cache(maxsize=4096)
def _keep_log_ratio(y: int, t: float, member_high: bool, beta: float, y_target: int) -> float:
    if member_high:
        lo, mid = log_h([y - 1, y], t, beta, y_target)
    else:
        lo, mid = log_one_minus_h([y + 1, y], t, beta, y_target)
    return 0.0 if mid == -math.inf else float(lo - mid)


def cancellation_keep(state_before: LatticeState, uniform: float, member_high: bool,
                      params: BridgeLawParams) -> bool:
    """Whether an opposing noise order passes through (``True``) or is cancelled.

    High branch: a noise sell survives iff ``uniform <= h(y-1, t)/h(y, t)``.
    Low branch: a noise buy survives iff ``uniform <= (1-h(y+1, t))/(1-h(y, t))``.
    """
    ratio = _keep_log_ratio(int(state_before.y), float(state_before.t), bool(member_high),
                            params.beta, params.y_target)
    return bool(uniform <= math.exp(ratio))


def invert_clock(from_time: float, y_now: int, uniform: float, member_high: bool,
                 params: BridgeLawParams, eps_term: float = EPS_TERM) -> float:
    """Next lone-order time for a frozen position; ``inf`` when none is due before ``1 - eps_term``.

    Solves ``beta int_{from_time}^{t} (g(y', u) - g(y, u)) / g(y, u) du = -log(1 - uniform)``
    with ``g = h``, ``y' = y + 1`` on the high branch and ``g = 1 - h``,
    ``y' = y - 1`` on the low one.  Reference implementation: adaptive
    quadrature plus a bracketed root search.
    """
    if member_high:
        return invert_clock_exact(from_time, y_now, uniform, params.beta, params.y_target, eps_term)
    return invert_clock_exact(from_time, -y_now, uniform, params.beta, 1 - params.y_target, eps_term)


def intensity_trace(path: BridgePath, params: BridgeLawParams) -> list[tuple[float, float, float]]:
    """``(time, up_rate, down_rate)`` at ``t = 0`` and after every event before ``t = 1``.

    Rates are those of the enlarged filtration and stay constant in ``y``
    between events (they still move with ``t``).
    """
    out = []
    y = 0
    stamps = [(0.0, 0)] + [(e.time, e.y_after) for e in path.events]
    for t, y in stamps:
        if t >= 1.0:
            break
        st = LatticeState(int(y), float(t))
        out.append((float(t), enlarged_intensity("up", path.member_high, st, params),
                    enlarged_intensity("down", path.member_high, st, params)))
    return out


# ---------------------------------------------------------------------------
# batch simulation


@dataclass
class _Chunks:
    path: list = field(default_factory=list)
    time: list = field(default_factory=list)
    kind: list = field(default_factory=list)
    y_after: list = field(default_factory=list)

    def add(self, path, time, kind, y_after):
        if len(path):
            self.path.append(path)
            self.time.append(np.broadcast_to(time, path.shape).astype(float))
            self.kind.append(np.full(path.shape, int(kind), dtype=np.int8))
            self.y_after.append(y_after.astype(np.int64))

    def arrays(self):
        if not self.path:
            return (np.empty(0, np.int64), np.empty(0), np.empty(0, np.int8), np.empty(0, np.int64))
        path = np.concatenate(self.path)
        order = np.argsort(path, kind="stable")
        return (path[order], np.concatenate(self.time)[order], np.concatenate(self.kind)[order],
                np.concatenate(self.y_after)[order])


def simulate_frame(table: ConditioningTable, n: int, strategy: Strategy, streams: RngStreams,
                   y_start: int = 0):
    """Advance ``n`` high-branch paths against ``table``; returns events in frame coordinates."""
    beta = table.beta
    target = table.y_target
    t_end = table.t_end
    empty = np.full((n, 1), np.inf)
    buys = poisson_time_matrix(beta, n, streams["noise"])
    sells = poisson_time_matrix(beta, n, streams["noise"])
    zeta = streams["cancel"].random(sells.shape) if strategy.cancels else None
    if strategy.kind == "constant_rate" and strategy.rate > 0:
        lone_mat = poisson_time_matrix(strategy.rate, n, streams["strategy"])
    else:
        lone_mat = empty
    if strategy.kind == "bluffing" and strategy.rate > 0:
        bluff_mat = poisson_time_matrix(strategy.rate, n, streams["strategy"], horizon=t_end)
    else:
        bluff_mat = empty

    y = np.full(n, int(y_start), dtype=np.int64)
    ib = np.zeros(n, dtype=np.int64)
    isl = np.zeros(n, dtype=np.int64)
    il = np.zeros(n, dtype=np.int64)
    iq = np.zeros(n, dtype=np.int64)
    guarded = np.zeros(n, dtype=bool)
    lone_rng = streams["lone"]
    if strategy.uses_clock:
        nu = table.invert(y, np.zeros(n), lone_rng.standard_exponential(n))
    else:
        nu = np.full(n, np.inf)
    chunks = _Chunks()
    n_guard = 0

    act = np.arange(n)
    while act.size:
        tb = buys[act, ib[act]]
        ts = sells[act, isl[act]]
        tq = bluff_mat[act, iq[act]]
        tl = nu[act] if strategy.uses_clock else lone_mat[act, il[act]]
        t_next = np.minimum(np.minimum(tb, ts), np.minimum(tl, tq))

        # terminal guard: close the clock, force any unresolved constraint
        if strategy.uses_clock:
            hit = (t_next >= t_end) & ~guarded[act]
            if np.any(hit):
                p = act[hit]
                guarded[p] = True
                nu[p] = np.inf
                short = np.maximum(target - y[p], 0)
                n_guard += int(np.count_nonzero(short))
                for _ in range(int(short.max(initial=0))):
                    q = p[y[p] < target]
                    y[q] += 1
                    chunks.add(q, t_end, EventKind.INSIDER_LONE_BUY, y[q])
                keep = ~hit
                act, tb, ts, tq, t_next = act[keep], tb[keep], ts[keep], tq[keep], t_next[keep]
                tl = nu[act]
                # the guarded paths re-enter on the next iteration
                act_guarded = p
            else:
                act_guarded = np.empty(0, dtype=np.int64)
        else:
            act_guarded = np.empty(0, dtype=np.int64)

        alive = t_next < 1.0
        act, tb, ts, tq, tl, t_next = (a[alive] for a in (act, tb, ts, tq, tl, t_next))

        is_buy = tb == t_next
        is_lone = ~is_buy & (tl == t_next)
        is_bluff = ~is_buy & ~is_lone & (tq == t_next)
        is_sell = ~is_buy & ~is_lone & ~is_bluff
        moved = np.zeros(act.size, dtype=bool)

        p = act[is_buy]
        y[p] += 1
        ib[p] += 1
        chunks.add(p, tb[is_buy], EventKind.NOISE_BUY, y[p])
        moved |= is_buy

        p = act[is_lone]
        y[p] += 1
        if not strategy.uses_clock:
            il[p] += 1
        chunks.add(p, tl[is_lone], EventKind.INSIDER_LONE_BUY, y[p])
        moved |= is_lone

        p = act[is_bluff]
        y[p] -= 1
        iq[p] += 1
        chunks.add(p, tq[is_bluff], EventKind.INSIDER_LONE_SELL, y[p])
        moved |= is_bluff

        p = act[is_sell]
        t_s = ts[is_sell]
        if strategy.cancels and p.size:
            log_keep = table.log_ratio(y[p], t_s, -1)
            keep = np.log(zeta[p, isl[p]]) <= log_keep
        else:
            keep = np.ones(p.size, dtype=bool)
        isl[p] += 1
        kp, cp = p[keep], p[~keep]
        y[kp] -= 1
        chunks.add(kp, t_s[keep], EventKind.NOISE_SELL, y[kp])
        chunks.add(cp, t_s[~keep], EventKind.INSIDER_CANCEL_SELL, y[cp])
        sell_moved = np.zeros(act.size, dtype=bool)
        sell_moved[np.flatnonzero(is_sell)[keep]] = True
        moved |= sell_moved

        if strategy.uses_clock:
            redraw = act[moved & ~guarded[act]]
            if redraw.size:
                nu[redraw] = table.invert(y[redraw], t_next[moved & ~guarded[act]],
                                          lone_rng.standard_exponential(redraw.size))
        act = np.concatenate([act, act_guarded])
    return chunks.arrays(), y, n_guard


def simulate_batch(params: BridgeLawParams, n_paths: int, seed: int,
                   strategy: Strategy = Strategy(), member: str = "draw",
                   tables: dict | None = None) -> PathBatch:
    """Simulate ``n_paths`` independent paths.

    Parameters
    ----------
    params : noise intensity and threshold.
    n_paths : number of paths.
    seed : master seed; all randomness flows from it through named streams.
    strategy : insider behaviour (the bridge is ``Strategy("equilibrium")``).
    member : ``"draw"`` samples the type with ``P(I) = h(0, 0)``; ``"high"``
        or ``"low"`` fixes it.
    tables : optional cache of :class:`ConditioningTable` keyed by target.
    """
    streams = RngStreams(seed)
    if member == "draw":
        high = streams["membership"].random(n_paths) < params.h00
    elif member in ("high", "low"):
        high = np.full(n_paths, member == "high")
    else:
        raise ValueError("member must be 'draw', 'high' or 'low'")
    tables = {} if tables is None else tables
    parts = []
    guard = 0
    terminal = np.zeros(n_paths, dtype=np.int64)
    for flag, target, sign in ((True, params.y_target, 1), (False, 1 - params.y_target, -1)):
        idx = np.flatnonzero(high == flag)
        if idx.size == 0:
            continue
        key = (params.beta, target)
        if key not in tables:
            tables[key] = ConditioningTable(params.beta, target)
        (path, time, kind, y_after), y_end, n_guard = simulate_frame(
            tables[key], idx.size, strategy, streams)
        if sign < 0:
            kind = MIRROR_KIND[kind]
        parts.append((idx[path], time, kind, sign * y_after))
        terminal[idx] = sign * y_end
        guard += n_guard
    if parts:
        path = np.concatenate([p[0] for p in parts])
        order = np.argsort(path, kind="stable")
        cols = [np.concatenate([p[j] for p in parts])[order] for j in range(4)]
    else:
        cols = [np.empty(0, np.int64), np.empty(0), np.empty(0, np.int8), np.empty(0, np.int64)]
    return PathBatch(params.beta, params.y_target, high, terminal, *cols,
                     master_seed=int(seed), strategy=strategy, guard_resolutions=guard)


def build_path(params: BridgeLawParams, seed: int, strategy: Strategy = Strategy()) -> BridgePath:
    """A single bridge path; identical seeds give identical ledgers."""
    return simulate_batch(params, 1, seed, strategy).path_record(0)


def up_compensator(batch: PathBatch, tables: dict | None = None) -> np.ndarray:
    """Integrated enlarged up-rate of each path over ``[0, 1]``.

    In the type's own frame the up-rate is ``beta h(y+1, t)/h(y, t)``, i.e.
    ``beta`` plus the lone-order hazard, so the integral is ``beta`` plus the
    clock increments accumulated between consecutive events.  On the low
    branch the frame is reflected, so this compensates the frame's up-jumps:
    actual down-jumps.
    """
    tables = {} if tables is None else tables
    out = np.full(batch.n_paths, float(batch.beta))
    for flag, target, sign in ((True, batch.y_target, 1), (False, 1 - batch.y_target, -1)):
        sel = batch.member_high[batch.path] == flag
        if not np.any(batch.member_high == flag):
            continue
        key = (batch.beta, target)
        if key not in tables:
            tables[key] = ConditioningTable(batch.beta, target)
        tab = tables[key]
        # segment starts: t = 0 and every event; segment ends: next event or t_end
        p = batch.path[sel]
        t = np.minimum(batch.time[sel], tab.t_end)
        ya = sign * batch.y_after[sel]
        first = np.flatnonzero(batch.member_high == flag)
        seg_p = np.concatenate([first, p])
        seg_y = np.concatenate([np.zeros(first.size, np.int64), ya])
        seg_a = np.concatenate([np.zeros(first.size), t])
        order = np.lexsort((seg_a, seg_p))
        seg_p, seg_y, seg_a = seg_p[order], seg_y[order], seg_a[order]
        seg_b = np.empty_like(seg_a)
        seg_b[:-1] = seg_a[1:]
        last = np.ones(seg_p.size, dtype=bool)
        last[:-1] = seg_p[1:] != seg_p[:-1]
        seg_b[last] = tab.t_end
        inc = tab.clock(seg_y, seg_b) - tab.clock(seg_y, seg_a)
        np.add.at(out, seg_p, inc)
    return out


def batch_likelihood_ratio(batch: PathBatch, t: float, tables: dict | None = None) -> np.ndarray:
    """``h(0,0)/h(Y_t,t)`` on high paths and ``(1-h(0,0))/(1-h(Y_t,t))`` on low ones."""
    tables = {} if tables is None else tables
    y = batch.y_at(t)
    out = np.empty(batch.n_paths)
    for flag, target, sign in ((True, batch.y_target, 1), (False, 1 - batch.y_target, -1)):
        key = (batch.beta, target)
        if key not in tables:
            tables[key] = ConditioningTable(batch.beta, target)
        tab = tables[key]
        sel = batch.member_high == flag
        out[sel] = np.exp(tab.log_h(0, 0.0) - tab.log_h(sign * y[sel], t))
    return out
