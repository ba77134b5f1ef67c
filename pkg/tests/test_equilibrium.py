import io
import math

import numpy as np
import pytest
from scipy import stats

from ppbridge.equilibrium import (ExperimentConfig, batch_profit, build_surface, hjb_residuals,
                                  optimality_mc, price, realized_profit, select_y_delta, terminal_H,
                                  terminal_L, value_H, value_L)
from ppbridge.errors import ConfigInvalid
from ppbridge.simulator import BridgePath, EventKind, EventMark, Strategy, simulate_batch

CFG = ExperimentConfig(delta=1.0, beta=20.0, y_target=1)


def direct_terminal_H(y, z, d):
    # (z - d - y)^+ as the lattice sum d * #{j : y <= j d <= z - 2d}
    return d * sum(1 for j in range(-400, 400) if y <= j * d <= z - 2 * d + 1e-12)


@pytest.mark.parametrize("d", [1.0, 0.5, 0.1])
def test_terminal_values(d):
    z = 3 * d
    for k in range(-10, 10):
        y = k * d
        assert terminal_H(y, z, d) == pytest.approx(max(z - d - y, 0.0), abs=1e-12)
        assert terminal_L(y, z, d) == pytest.approx(max(y - z, 0.0), abs=1e-12)
        assert terminal_H(y, z, d) == pytest.approx(direct_terminal_H(y, z, d), abs=1e-12)
    assert terminal_H(z - d, z, d) == 0.0 and terminal_H(z + 5 * d, z, d) == 0.0
    assert terminal_H(z - 3 * d, z, d) == pytest.approx(2 * d)
    assert terminal_L(z, z, d) == 0.0 and terminal_L(z + 2 * d, z, d) == pytest.approx(2 * d)


def test_value_at_maturity_is_terminal():
    for k in range(-5, 6):
        assert value_H(k, 1.0, CFG) == terminal_H(k, 1, 1.0)
        assert value_L(k, 1.0, CFG) == terminal_L(k, 1, 1.0)


def test_quadrature_and_expectation_forms_agree():
    for k in (-6, 0, 1, 4):
        for t in (0.0, 0.4, 0.95):
            assert value_H(k, t, CFG) == pytest.approx(value_H(k, t, CFG, method="sum"), abs=1e-10)
            assert value_L(k, t, CFG) == pytest.approx(value_L(k, t, CFG, method="sum"), abs=1e-10)


def test_value_h00_against_skellam_expectation():
    # H(0, 0) = E[(z - 1 - K)^+] with K ~ Skellam(20), by scipy's Skellam pmf
    k = np.arange(-200, 201)
    ref = float(np.sum(stats.skellam.pmf(k, 20, 20) * np.maximum(0 - k, 0)))
    assert value_H(0, 0.0, CFG) == pytest.approx(ref, abs=1e-10)


def test_difference_identities_on_grid():
    for k in range(-10, 10):
        for t in (0.0, 0.2, 0.4, 0.6, 0.8):
            dh = value_H(k + 1, t, CFG) - value_H(k, t, CFG)
            assert dh == pytest.approx(price(k + 1, t, 20.0, 1) - 1.0, abs=1e-8)
            dl = value_L(k - 1, t, CFG) - value_L(k, t, CFG)
            assert dl == pytest.approx(-float(price(k - 1, t, 20.0, 1)), abs=1e-8)


def test_mirror_symmetry_of_values():
    # L(k; k_z) = H(-k; 1 - k_z) by the symmetry of the Skellam law
    for k in range(-6, 7):
        for t in (0.0, 0.5):
            lhs = value_L(k, t, CFG, kz=3)
            rhs = value_H(-k, t, CFG, kz=-2)
            assert lhs == pytest.approx(rhs, abs=1e-12)


@pytest.fixture(scope="module")
def surface():
    return build_surface(ExperimentConfig(delta=1.0, beta=20.0, y_target=1, t_grid=(0.1, 0.3, 0.5, 0.7, 0.9)))


def test_surface_shape_nonnegative_and_csv(surface):
    assert surface.H.shape == (41, 5)
    assert np.all(surface.H >= 0) and np.all(surface.L >= 0)
    buf = io.StringIO()
    surface.to_csv(buf)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "y,t,H,L,p,a,b" and len(rows) == 1 + 41 * 5


def test_hjb_residuals(surface):
    cfg = ExperimentConfig(delta=1.0, beta=20.0, y_target=1, t_grid=(0.1, 0.3, 0.5, 0.7, 0.9))
    res = hjb_residuals(surface, cfg)
    assert res["equality_H_max"] <= 1e-8 and res["equality_L_max"] <= 1e-8
    assert res["wrong_side_H_max"] <= 1e-12 and res["wrong_side_L_max"] <= 1e-12
    assert all(3.5 <= r <= 4.5 for r in res["time_residual_ratios"])
    assert res["nonnegative"]


def test_wrong_side_trades_strictly_lose_near_threshold():
    t = 0.5
    for k in range(1 - 5, 1 + 6):
        sell = value_H(k - 1, t, CFG) - value_H(k, t, CFG) - (1 - float(price(k - 1, t, 20.0, 1)))
        buy = value_L(k + 1, t, CFG) - value_L(k, t, CFG) - float(price(k + 1, t, 20.0, 1))
        assert sell < 0 and buy < 0


def test_select_y_delta():
    y, k, realized = select_y_delta(ExperimentConfig(delta=0.2, prior_high=0.5))
    assert k == 0 and y == 0.0 and realized > 0.5
    y, k, realized = select_y_delta(ExperimentConfig(delta=0.1, prior_high=0.3))
    assert k == int(stats.skellam(50, 50).ppf(0.7))
    assert realized == pytest.approx(stats.skellam(50, 50).sf(k - 1), rel=1e-9)
    ks = [select_y_delta(ExperimentConfig(delta=0.1, prior_high=p))[1] for p in (0.9, 0.7, 0.5, 0.3, 0.1)]
    assert ks == sorted(ks)


def test_config_validation_names_key():
    with pytest.raises(ConfigInvalid, match="equilibrium.delta"):
        ExperimentConfig(delta=0.0)
    with pytest.raises(ConfigInvalid, match="equilibrium.prior_high"):
        ExperimentConfig(prior_high=1.0)
    assert ExperimentConfig(delta=0.1).beta_eff == pytest.approx(50.0)


def test_realized_profit_accounting(surface):
    assert realized_profit(BridgePath([], True, 0), surface) == 0.0
    path = BridgePath([EventMark(EventKind.INSIDER_LONE_BUY, 0.3, 1),
                       EventMark(EventKind.INSIDER_CANCEL_SELL, 0.6, 1)], True, 1)
    expected = (1 - float(price(1, 0.3, 20.0, 1))) + (1 - float(price(1, 0.6, 20.0, 1)))
    assert realized_profit(path, surface) == pytest.approx(expected, rel=1e-14)


def test_batch_profit_matches_pathwise_and_is_nonnegative_on_high(surface):
    b = simulate_batch(CFG.law_params(), 300, 12)
    vec = batch_profit(b, 1.0)
    ref = np.array([realized_profit(b.path_record(i), surface) for i in range(b.n_paths)])
    assert np.allclose(vec, ref, rtol=0, atol=1e-9)
    assert np.all(vec[b.member_high] >= 0) and np.all(vec[~b.member_high] >= 0)


def test_mirrored_profit_is_antisymmetric():
    # low-type trades are high-type trades on the reflected lattice y -> -y with target 1 - k_z,
    # where 1 - p(y; k_z) = p(-y; 1 - k_z)
    low = simulate_batch(CFG.law_params(), 2000, 9, member="low")
    prof = batch_profit(low, 1.0)
    for i in range(0, 2000, 250):
        total = 0.0
        for e in low.path_record(i).events:
            if e.kind == EventKind.INSIDER_LONE_SELL:  # mirrored lone buy at the reflected ask
                total += 1 - float(price(-(e.y_after + 1) + 1, e.time, 20.0, 0))
            elif e.kind == EventKind.INSIDER_CANCEL_BUY:  # mirrored cancelled sell at the reflected mid
                total += 1 - float(price(-e.y_after, e.time, 20.0, 0))
        assert prof[i] == pytest.approx(total, abs=1e-9)


def test_equilibrium_profit_matches_value():
    r = optimality_mc("equilibrium", ExperimentConfig(delta=1.0, beta=20.0, y_target=1, seed=77), 10_000)
    assert r["within_ci"], r
    r = optimality_mc("equilibrium", ExperimentConfig(delta=1.0, beta=20.0, y_target=1, seed=78), 10_000,
                      member="low")
    assert r["within_ci"], r


def test_doing_nothing_earns_nothing():
    r = optimality_mc(Strategy("constant_rate", 0.0), CFG, 1000)
    assert r["mean"] == 0.0 and r["not_above"]
