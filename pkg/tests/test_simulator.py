import io
import math

import numpy as np
import pytest
from scipy import integrate, optimize

from ppbridge.errors import GuardViolation
from ppbridge.law import BridgeLawParams, LatticeState, enlarged_intensity, log_h, log_one_minus_h
from ppbridge.rng import STREAM_NAMES, RngStreams
from ppbridge.simulator import (INSIDER_KINDS, STEP, BridgePath, EventKind, EventMark, Strategy,
                                build_path, cancellation_keep, intensity_trace, invert_clock,
                                read_jsonl, simulate_batch, up_compensator)

PARAMS = BridgeLawParams(20.0, 1)


@pytest.fixture(scope="module")
def batch():
    return simulate_batch(PARAMS, 10_000, seed=11)


def test_zero_violations_and_clean_ledger(batch):
    assert batch.violations().size == 0
    assert batch.simultaneous_jumps() == 0
    assert batch.guard_resolutions == 0
    for i in range(0, batch.n_paths, 97):
        batch.path_record(i).check(PARAMS.y_target)


def test_mark_invariants(batch):
    step = STEP[batch.kind]
    cancel = np.isin(batch.kind, [EventKind.INSIDER_CANCEL_SELL, EventKind.INSIDER_CANCEL_BUY])
    assert np.all(step[cancel] == 0) and np.all(step[~cancel] != 0)
    high = batch.member_high[batch.path]
    low_side = np.isin(batch.kind, [EventKind.INSIDER_LONE_SELL, EventKind.INSIDER_CANCEL_BUY])
    high_side = np.isin(batch.kind, [EventKind.INSIDER_LONE_BUY, EventKind.INSIDER_CANCEL_SELL])
    assert not np.any(low_side & high) and not np.any(high_side & ~high)
    assert np.all((batch.time >= 0) & (batch.time < 1))


def test_membership_frequency(batch):
    se = math.sqrt(PARAMS.h00 * (1 - PARAMS.h00) / batch.n_paths)
    assert abs(batch.member_high.mean() - PARAMS.h00) <= 3 * se


def test_admissibility_insider_activity_finite(batch):
    c = batch.insider_counts()
    se = c.std(ddof=1) / math.sqrt(c.size)
    assert 0 < c.mean() < 50 and se < 0.1 * c.mean()


def test_insider_idle_when_constraint_is_free():
    b = simulate_batch(BridgeLawParams(1.0, -1000), 10_000, seed=5)
    assert b.member_high.all()
    assert b.insider_counts().mean() < 0.05


def test_fixed_types_and_low_branch():
    low = simulate_batch(PARAMS, 3000, seed=8, member="low")
    assert not low.member_high.any() and low.violations().size == 0
    assert np.all(low.terminal_y < PARAMS.y_target)
    for i in range(0, 3000, 101):
        low.path_record(i).check(PARAMS.y_target)


def test_reproducible_and_seed_sensitive():
    a = simulate_batch(PARAMS, 500, seed=99)
    b = simulate_batch(PARAMS, 500, seed=99)
    c = simulate_batch(PARAMS, 500, seed=100)
    for name in ("path", "time", "kind", "y_after", "member_high", "terminal_y"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.terminal_y, c.terminal_y)
    assert build_path(PARAMS, 3).to_json() == build_path(PARAMS, 3).to_json()


def test_jsonl_round_trip_is_bit_exact():
    b = simulate_batch(PARAMS, 200, seed=4)
    buf = io.StringIO()
    b.write_jsonl(buf)
    paths = read_jsonl(io.StringIO(buf.getvalue()))
    assert len(paths) == 200
    for i, p in enumerate(paths):
        ref = b.path_record(i)
        assert p == ref
        assert [e.time for e in p.events] == [float(t) for t in b.time[b.offsets[i]:b.offsets[i + 1]]]
        assert p.seed == [4, i]


def test_check_rejects_corrupted_ledger():
    bad = BridgePath([EventMark(EventKind.NOISE_BUY, 0.1, 2)], True, 2)
    with pytest.raises(GuardViolation):
        bad.check(1)
    wrong_branch = BridgePath([EventMark(EventKind.INSIDER_LONE_SELL, 0.1, -1)], True, -1)
    with pytest.raises(GuardViolation):
        wrong_branch.check(1)


def test_cancellation_keep_limits_and_frequency():
    assert not cancellation_keep(LatticeState(1, 0.999999), 1e-3, True, PARAMS)
    assert cancellation_keep(LatticeState(40, 0.5), 0.999999, True, PARAMS)
    state = LatticeState(0, 0.6)
    prob = math.exp(log_h(-1, 0.6, 20.0, 1) - log_h(0, 0.6, 20.0, 1))
    u = np.random.default_rng(17).random(100_000)
    freq = np.mean([cancellation_keep(state, float(x), True, PARAMS) for x in u])
    se = math.sqrt(prob * (1 - prob) / u.size)
    assert abs(freq - prob) <= 3 * se


def test_low_branch_mirror_matches_direct_intensities():
    # the low type runs the high-type algorithm on y -> -y with target 1 - y1; compare with
    # a clock built directly from (1 - h) ratios
    def direct_hazard(u, y):
        a, b = log_one_minus_h([y, y - 1], u, PARAMS.beta, PARAMS.y_target)
        return PARAMS.beta * math.expm1(b - a)

    for y, t0, uni in ((1, 0.0, 0.3), (2, 0.4, 0.8), (0, 0.2, 0.5)):
        goal = -math.log1p(-uni)
        g = lambda t: integrate.quad(direct_hazard, t0, t, args=(y,), epsabs=1e-12, limit=200)[0] - goal
        t_end = 1 - 1e-9
        expected = math.inf if g(t_end) < 0 else optimize.brentq(g, t0, t_end, xtol=1e-13)
        got = invert_clock(t0, y, uni, False, PARAMS)
        if math.isinf(expected):
            assert math.isinf(got)
        else:
            assert got == pytest.approx(expected, abs=1e-8)


def test_intensity_trace_spot_checks():
    path = build_path(PARAMS, 21)
    trace = intensity_trace(path, PARAMS)
    assert trace[0][0] == 0.0 and len(trace) == 1 + sum(e.time < 1 for e in path.events)
    t, up, down = trace[0]
    assert up == enlarged_intensity("up", path.member_high, LatticeState(0, 0.0), PARAMS)
    free = build_path(BridgeLawParams(1.0, -1000), 2)
    for _, up, down in intensity_trace(free, BridgeLawParams(1.0, -1000)):
        assert up == 1.0 and down == 1.0


def test_compensator_matches_quadrature_of_enlarged_rate():
    b = simulate_batch(PARAMS, 6, seed=31)
    comp = up_compensator(b)
    for i in range(b.n_paths):
        p = b.path_record(i)
        side = "up" if p.member_high else "down"
        stamps = [0.0] + [e.time for e in p.events] + [1 - 1e-9]
        ys = [0] + [e.y_after for e in p.events]
        total = 0.0
        for a, c, y in zip(stamps[:-1], stamps[1:], ys):
            if c > a:
                f = lambda u: enlarged_intensity(side, p.member_high, LatticeState(y, u), PARAMS)
                total += integrate.quad(f, a, c, epsabs=1e-11, epsrel=1e-11, limit=400)[0]
        assert comp[i] == pytest.approx(total, rel=1e-6)


def test_compensated_jump_count_has_mean_zero(batch):
    up = np.where(batch.member_high, batch.buy_counts(), batch.sell_counts())
    m = up - up_compensator(batch)
    assert abs(m.mean()) <= 3 * m.std(ddof=1) / math.sqrt(m.size)


def test_strategy_variants():
    assert Strategy.parse("bluffing(2)") == Strategy("bluffing", 2.0)
    assert Strategy.parse("never_cancel").label() == "never_cancel"
    with pytest.raises(ValueError):
        Strategy("teleport")
    nc = simulate_batch(PARAMS, 2000, 3, Strategy("never_cancel"), member="high")
    assert not np.any(nc.kind == EventKind.INSIDER_CANCEL_SELL) and nc.violations().size == 0
    idle = simulate_batch(PARAMS, 2000, 3, Strategy("constant_rate", 0.0), member="high")
    assert not np.any(np.isin(idle.kind, INSIDER_KINDS))
    bluff = simulate_batch(PARAMS, 2000, 3, Strategy("bluffing", 2.0), member="high")
    sells = bluff.count((EventKind.INSIDER_LONE_SELL,))
    assert abs(sells.mean() - 2.0) <= 3 * math.sqrt(2.0 / 2000)
    assert bluff.violations().size == 0


def test_named_streams():
    a, b = RngStreams(5), RngStreams(5)
    for name in STREAM_NAMES:
        assert a[name].random() == b[name].random()
    fresh = RngStreams(5)
    draws = {name: fresh[name].random() for name in STREAM_NAMES}
    assert len(set(draws.values())) == len(STREAM_NAMES)
    assert RngStreams(5).child(1)["noise"].random() != RngStreams(5).child(2)["noise"].random()
    with pytest.raises(KeyError):
        RngStreams(5)["bogus"]
