import math

import numpy as np
import pytest

from gated_spd.blanking import BlankingConfig
from gated_spd.detector import DetectorParams, overbias_for_efficiency
from gated_spd.io import render_csv
from gated_spd.harness import (
    COLUMNS,
    CountersLD,
    ProtocolConfig,
    auto_gates,
    blank_gates_for,
    dark_rate_per_channel,
    estimate_de,
    estimate_pap,
    grid_points,
    measure_point,
    point_seed,
    run_protocol,
    split_pap,
    sweep,
)

P = DetectorParams()


def counters(l, d, lg, dg, duration=1.0):
    return CountersLD(l, d, lg, dg, 0, 0, duration)


def test_estimate_de_closed_form():
    # P_L = 1 - exp(-mu DE) (1 - p_dark) exactly inverts to DE
    mu, de, pd = 0.1, 0.2, 1e-4
    p_l = 1 - math.exp(-mu * de) * (1 - pd)
    n = 10**12
    light = counters(round(p_l * n), 0, n, n)
    dark = counters(round(pd * n), round(pd * n), n, n)
    assert estimate_de(light, dark, mu) == pytest.approx(de, rel=1e-6)
    with pytest.raises(ValueError):
        estimate_de(light, dark, 0.0)


def test_estimate_de_clamps_when_light_below_dark():
    light = counters(1, 0, 1000, 1000)
    dark = counters(5, 5, 1000, 1000)
    assert estimate_de(light, dark, 0.1) == 0.0


def test_estimate_pap_and_split():
    assert estimate_pap(150.0, 100.0, 5000.0) == pytest.approx(0.01)
    assert estimate_pap(90.0, 100.0, 5000.0) == 0.0
    with pytest.raises(ValueError):
        estimate_pap(1.0, 0.0, 0.0)
    assert split_pap(0.01, 0.002) == (pytest.approx(0.008), 0.002)
    assert split_pap(0.001, 0.002) == (0.0, 0.002)


def test_dark_rate_per_channel_averages():
    assert dark_rate_per_channel(counters(30, 10, 100, 100, duration=2.0)) == 10.0


def test_blank_gates_for():
    assert blank_gates_for(12e-6, 500e3) == 6
    assert blank_gates_for(12e-6, 5e6) == 60


def test_protocol_config_gate_rate_is_twice_light_rate():
    cfg = ProtocolConfig()
    assert cfg.schedule.gate_rate == 500e3
    assert cfg.replace(gate_rate=1e6).light_rate == 500e3
    assert cfg.replace(n_blank=6).blanking == BlankingConfig(6)
    with pytest.raises(ValueError):
        ProtocolConfig(mu=-1)
    with pytest.raises(ValueError):
        cfg.replace(n_blank=300)


def test_counter_bookkeeping():
    cfg = ProtocolConfig(n_gates=1_000_001, blanking=BlankingConfig(4))
    c = run_protocol(cfg, P, 3)
    assert c.triggers == cfg.n_gates
    assert c.l_gates + c.l_blanked == 500_001
    assert c.d_gates + c.d_blanked == 500_000
    assert sum(c.l_causes) == c.l_counts and sum(c.d_causes) == c.d_counts
    # every click blocks 4 triggers, except clicks so close to the end that the run stops first
    assert 4 * c.counts - 4 <= c.blanked <= 4 * c.counts
    assert c.duration == pytest.approx(cfg.n_gates / 500e3)


def test_seeded_runs_are_reproducible():
    cfg = ProtocolConfig(n_gates=300_000)
    assert run_protocol(cfg, P, 17) == run_protocol(cfg, P, 17)
    assert run_protocol(cfg, P, 17) != run_protocol(cfg, P, 18)


def test_light_off_channels_symmetric():
    cfg = ProtocolConfig(n_gates=4_000_000, light_on=False)
    c = run_protocol(cfg, P.replace(p_dark_ref=1e-4), 5)
    sigma = math.sqrt(c.l_counts + c.d_counts)
    assert abs(c.l_counts - c.d_counts) < 4 * sigma


def test_measure_point_recovers_de():
    cfg = ProtocolConfig(n_gates=4_000_000)
    est = measure_point(cfg, P, 8).estimates
    assert abs(est.de - 0.20) < 4 * est.de_err
    assert est.p_ap > 0
    assert est.p_aps == pytest.approx(max(0.0, est.p_ap - est.p_apl))


def test_measure_point_light_off_has_no_afterpulse_estimate():
    res = measure_point(ProtocolConfig(n_gates=200_000, light_on=False), P, 1)
    assert res.light is None and math.isnan(res.estimates.de)
    assert res.estimates.p_d >= 0


def test_firing_choice_changes_denominator():
    cfg = ProtocolConfig(n_gates=2_000_000)
    a = measure_point(cfg, P, 4, firing="total", split=False)
    b = measure_point(cfg, P, 4, firing="light", split=False)
    ratio = a.light.firing_rate / a.light.l_rate
    assert b.estimates.p_ap == pytest.approx(a.estimates.p_ap * ratio, rel=1e-12)
    with pytest.raises(ValueError):
        measure_point(cfg, P, 4, firing="bogus")


def test_auto_gates_targets_relative_error():
    cfg = ProtocolConfig()
    n = auto_gates(cfg, P, rel_err=0.1)
    assert n % 2 == 0
    assert n >= 1.0 / (0.01 * 1e-6)
    assert auto_gates(cfg, P.replace(p_dark_ref=0.0)) == 1_000_000


def test_grid_points_cartesian_and_empty():
    pts = grid_points({"temperature": [200, 220], "n_blank": [0, 6, 12]})
    assert len(pts) == 6
    assert pts[0] == {"temperature": 200, "n_blank": 0}
    with pytest.raises(ValueError):
        grid_points({})
    with pytest.raises(ValueError):
        grid_points({"temperature": []})
    with pytest.raises(ValueError):
        grid_points({"colour": [1]})


def test_point_seed_independent_of_order():
    a = point_seed(5, 3).generate_state(4)
    b = point_seed(5, 3).generate_state(4)
    c = point_seed(5, 4).generate_state(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_sweep_rows_and_error_tagging():
    base = ProtocolConfig(n_gates=200_000)
    rows = sweep({"n_blank": [0, 300, 4]}, base, P, seed=1, split=False)
    assert [tuple(r) == COLUMNS for r in rows] == [True] * 3
    assert rows[0]["error"] == "" and rows[2]["error"] == ""
    assert "n_blank" in rows[1]["error"]
    assert rows[1]["n_blank"] == 300 and rows[1]["p_d"] == ""


def test_sweep_parallel_matches_serial():
    base = ProtocolConfig(n_gates=200_000)
    grid = {"temperature": [200.0, 240.0], "n_blank": [0, 6]}
    serial = sweep(grid, base, P, seed=3, split=False)
    parallel = sweep(grid, base, P, seed=3, jobs=2, split=False)
    assert render_csv(serial, COLUMNS) == render_csv(parallel, COLUMNS)


def test_sweep_v_ov_moves_dc_bias_with_it():
    base = ProtocolConfig(n_gates=100_000, v_ov=overbias_for_efficiency(P, 0.2))
    rows = sweep({"v_ov": [base.v_ov, base.v_ov + 0.5]}, base, P, seed=0, split=False)
    assert rows[1]["v_dc_rel_V"] - rows[0]["v_dc_rel_V"] == pytest.approx(0.5)
    assert rows[0]["v_dc_rel_V"] == pytest.approx(-0.5)


def test_dead_time_columns_label_both_conventions():
    base = ProtocolConfig(n_gates=100_000)
    row = sweep({"n_blank": [6]}, base, P, seed=0, split=False)[0]
    de = row["de_true"]
    assert row["blank_light_pulses"] == 3.0
    assert row["dead_time_factor_light"] == pytest.approx(1 / (1 + 0.1 * de * 3))
    assert row["dead_time_factor_bias"] == pytest.approx(1 / (1 + 0.1 * de * 6))
