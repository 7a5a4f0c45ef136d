"""The compiled protocol loop against a plain-Python walk built from step_gate."""

import numpy as np
import pytest

from gated_spd.blanking import BlankingConfig, BlankingState, Trigger, on_detection, on_trigger
from gated_spd.detector import DetectorParams, DetectorState, blank_gates, step_gate
from gated_spd.harness import ProtocolConfig, run_protocol


def reference_protocol(cfg: ProtocolConfig, params: DetectorParams, seed):
    state = DetectorState.fresh(params, np.random.default_rng(seed))
    sched = cfg.schedule
    blk = BlankingState()
    events = []
    for k in range(cfg.n_gates):
        if on_trigger(blk, cfg.blanking) is Trigger.BLOCKED:
            blank_gates(state, 1, sched.gate_rate)
            continue
        light = cfg.light_on and k % 2 == 0
        out = step_gate(state, params, sched, cfg.mu, light, cfg.temperature)
        if out.avalanche:
            events.append((k, int(out.cause)))
            on_detection(blk, cfg.blanking)
    return np.array(events, dtype=np.int64).reshape(-1, 2)


CASES = [
    (DetectorParams(p_dark_ref=3e-3), ProtocolConfig(n_gates=40_000, mu=0.8)),
    (DetectorParams(p_dark_ref=3e-3), ProtocolConfig(n_gates=40_000, mu=0.8, blanking=BlankingConfig(5))),
    # bias well above the reference makes afterpulsing dominant
    (DetectorParams(p_dark_ref=1e-4), ProtocolConfig(n_gates=40_000, mu=1.0, v_ov=2.5, dc_offset=0.0)),
    (DetectorParams(p_dark_ref=1e-3), ProtocolConfig(n_gates=40_000, mu=0.0, temperature=250.0,
                                                     blanking=BlankingConfig(2))),
]


@pytest.mark.parametrize("params, cfg", CASES)
def test_event_logs_identical(params, cfg):
    ref = reference_protocol(cfg, params, 2024)
    fast = run_protocol(cfg, params, 2024, keep_log=True)
    assert ref.shape[0] > 50
    np.testing.assert_array_equal(fast.events, ref)
    assert fast.l_counts == np.sum(ref[:, 0] % 2 == 0)
    assert fast.d_counts == np.sum(ref[:, 0] % 2 == 1)
    causes = [np.sum((ref[:, 0] % 2 == 0) & (ref[:, 1] == c)) for c in (1, 2, 3)]
    assert list(fast.l_causes) == causes


def test_chunk_boundaries_do_not_matter(monkeypatch):
    import gated_spd.harness as h

    params = DetectorParams(p_dark_ref=3e-3)
    cfg = ProtocolConfig(n_gates=30_001, mu=0.5, blanking=BlankingConfig(9))
    whole = run_protocol(cfg, params, 9, keep_log=True)
    monkeypatch.setattr(h, "CHUNK", 997)
    pieces = run_protocol(cfg, params, 9, keep_log=True)
    np.testing.assert_array_equal(whole.events, pieces.events)
    assert whole == pieces


def test_d_channel_never_sees_photons():
    c = run_protocol(ProtocolConfig(n_gates=200_000, mu=2.0), DetectorParams(), 1)
    assert c.d_causes[0] == 0
    assert c.l_causes[0] > 0
