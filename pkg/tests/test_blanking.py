import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gated_spd.blanking import (
    MAX_BLANK,
    BlankingConfig,
    BlankingState,
    Trigger,
    dead_time_factor,
    on_detection,
    on_trigger,
    replay,
)


def drive(n_blank, fires):
    """Run the circuit; ``fires`` is the set of passed triggers that click."""
    cfg = BlankingConfig(n_blank)
    state = BlankingState()
    out = []
    for k in range(max(fires, default=0) + n_blank + 5):
        v = on_trigger(state, cfg)
        if v is Trigger.PASS and k in fires:
            on_detection(state, cfg)
        out.append(v)
        assert state.blocking == (state.remaining > 0)
    return out


def test_zero_blank_passes_everything():
    assert all(v is Trigger.PASS for v in drive(0, {0, 1, 2, 3}))


def test_six_blocked_then_seventh_passes():
    seq = drive(6, {0})
    assert seq[0] is Trigger.PASS
    assert seq[1:7] == [Trigger.BLOCKED] * 6
    assert seq[7] is Trigger.PASS


def test_max_blank_reloads_after_each_detection():
    seq = drive(255, {0, 256})
    assert seq[1:256] == [Trigger.BLOCKED] * 255
    assert seq[256] is Trigger.PASS
    assert seq[257:512] == [Trigger.BLOCKED] * 255


def test_config_range():
    BlankingConfig(0)
    BlankingConfig(MAX_BLANK)
    with pytest.raises(ValueError):
        BlankingConfig(256)
    with pytest.raises(ValueError):
        BlankingConfig(-1)
    with pytest.raises(TypeError):
        BlankingConfig(2.5)


def test_on_detection_zero_stays_open():
    s = on_detection(BlankingState(), BlankingConfig(0))
    assert not s.blocking and s.remaining == 0


@settings(max_examples=200)
@given(st.integers(0, 40), st.lists(st.integers(0, 400), max_size=40))
def test_each_passed_detection_blocks_exactly_n(n_blank, wanted):
    # clicks requested on blocked triggers are impossible and get dropped
    seq = drive(n_blank, set(wanted))
    fired = []
    state, cfg = BlankingState(), BlankingConfig(n_blank)
    for k, v in enumerate(seq):
        assert v is on_trigger(state, cfg)
        if v is Trigger.PASS and k in wanted:
            on_detection(state, cfg)
            fired.append(k)
    for k in fired:
        window = seq[k + 1 : k + 1 + n_blank]
        assert window == [Trigger.BLOCKED] * n_blank
        assert seq[k + 1 + n_blank] is Trigger.PASS
    # blocked count is n_blank per honoured detection
    assert seq.count(Trigger.BLOCKED) == n_blank * len(fired)


def test_replay_rejects_click_on_blocked_trigger():
    with pytest.raises(ValueError):
        replay([0, 3], 10, BlankingConfig(6))
    seq = replay([0, 7], 20, BlankingConfig(6))
    assert seq.count(Trigger.BLOCKED) == 12


def test_dead_time_factor_values():
    assert dead_time_factor(0.1, 0.25, 3) == pytest.approx(1 / 1.075, rel=1e-15)
    assert round(dead_time_factor(0.1, 0.25, 3), 2) == 0.93
    assert dead_time_factor(0.1, 0.2, 6) == pytest.approx(0.8929, abs=5e-5)
    assert dead_time_factor(0.3, 0.7, 0) == 1.0
    assert dead_time_factor(0.0, 0.7, 9) == 1.0
    assert dead_time_factor(0.3, 0.0, 9) == 1.0
    with pytest.raises(ValueError):
        dead_time_factor(-0.1, 0.2, 1)
    with pytest.raises(ValueError):
        dead_time_factor(0.1, 1.2, 1)


@given(st.floats(0, 5), st.floats(0, 1), st.integers(0, 255), st.floats(0.01, 1))
def test_dead_time_factor_monotone(mu, de, n, bump):
    f = dead_time_factor(mu, de, n)
    assert 0 < f <= 1
    assert dead_time_factor(mu + bump, de, n) <= f
    assert dead_time_factor(mu, min(1.0, de + bump), n) <= f
    assert dead_time_factor(mu, de, n + 1) <= f


def test_replay_matches_kernel_event_log():
    from gated_spd.detector import DetectorParams
    from gated_spd.harness import ProtocolConfig, run_protocol

    params = DetectorParams(p_dark_ref=2e-3)
    cfg = ProtocolConfig(n_gates=200_000, mu=0.5, blanking=BlankingConfig(7))
    c = run_protocol(cfg, params, 11, keep_log=True)
    seq = replay(c.events[:, 0], cfg.n_gates, cfg.blanking)
    blocked = np.array([v is Trigger.BLOCKED for v in seq])
    assert blocked.sum() == c.blanked
    assert blocked[0::2].sum() == c.l_blanked
    assert blocked[1::2].sum() == c.d_blanked
    assert c.events.shape[0] == c.counts
