import pytest

from errors import ConfigError
from radio.rlf_monitor import RlfParams, RlfState, SyncEvent, observe, reset


def _run(stream, p, dt=20.0):
    state = RlfState()
    out = []
    for rsrp in stream:
        out.append(observe(state, rsrp, dt, p))
        if state.rlf_declared:
            break
    return state, out


def test_constant_weak_signal_declares_rlf_at_1120_ms():
    p = RlfParams()
    state, events = _run([-80.0] * 100, p)
    assert state.rlf_declared
    assert len(events) * 20 == 1120
    assert events[5] == (SyncEvent.OUT_OF_SYNC, SyncEvent.T310_STARTED)
    assert events[-1] == (SyncEvent.OUT_OF_SYNC, SyncEvent.RLF_DECLARED)
    assert all(SyncEvent.RLF_DECLARED not in e for e in events[:-1])


def test_t310_starts_after_n310_consecutive_indications():
    p = RlfParams(n310=3)
    state = RlfState()
    observe(state, -70.0, 20.0, p)
    observe(state, -70.0, 20.0, p)
    assert not state.t310_running
    assert observe(state, -70.0, 20.0, p) == (SyncEvent.OUT_OF_SYNC, SyncEvent.T310_STARTED)
    assert state.t310_running and state.t310_elapsed == 0.0


def test_in_sync_resets_counter():
    p = RlfParams(n310=3)
    state = RlfState()
    for rsrp in [-70.0, -70.0, -60.0, -70.0, -70.0]:
        observe(state, rsrp, 20.0, p)
    assert state.consecutive_oos == 2
    assert not state.t310_running


def test_in_sync_stops_running_t310():
    p = RlfParams(n310=1, t310=1000.0)
    state = RlfState()
    observe(state, -80.0, 20.0, p)
    observe(state, -80.0, 20.0, p)
    assert state.t310_elapsed == 20.0
    assert observe(state, -60.0, 20.0, p) == (SyncEvent.IN_SYNC, SyncEvent.T310_STOPPED)
    assert not state.t310_running
    assert state.t310_elapsed == 0.0


def test_recovery_just_before_expiry_avoids_rlf():
    p = RlfParams(n310=1, t310=100.0)
    state, events = _run([-80.0] * 5 + [-50.0] + [-80.0] * 3, p)
    assert not state.rlf_declared


def test_threshold_is_strict_for_out_of_sync():
    p = RlfParams()
    state = RlfState()
    assert observe(state, -67.5, 20.0, p) == (SyncEvent.IN_SYNC,)


def test_hysteresis_band_gives_no_indication():
    p = RlfParams(n310=2, s_rlf=-67.5, q_in=-65.0)
    state = RlfState()
    observe(state, -70.0, 20.0, p)
    assert observe(state, -66.0, 20.0, p) == ()
    assert state.consecutive_oos == 1
    observe(state, -70.0, 20.0, p)
    assert state.t310_running
    assert observe(state, -66.0, 20.0, p) == ()
    assert state.t310_elapsed == 20.0


def test_observe_after_rlf_requires_reset():
    p = RlfParams(n310=1, t310=20.0)
    state, _ = _run([-80.0] * 5, p)
    assert state.rlf_declared
    with pytest.raises(AssertionError):
        observe(state, -80.0, 20.0, p)
    reset(state)
    assert state == RlfState()
    assert observe(state, -60.0, 20.0, p) == (SyncEvent.IN_SYNC,)


def test_q_in_defaults_to_s_rlf():
    assert RlfParams(s_rlf=-70.0).q_in == -70.0


def test_with_threshold_keeps_hysteresis_gap():
    p = RlfParams(s_rlf=-67.5, q_in=-66.5).with_threshold(-70.0)
    assert p.s_rlf == -70.0
    assert p.q_in == pytest.approx(-69.0)
    assert RlfParams().with_threshold(-65.0).q_in == -65.0


@pytest.mark.parametrize("kwargs", [
    {"n310": 0},
    {"n310": 2.5},
    {"t310": 0.0},
    {"s_rlf": -60.0, "q_in": -65.0},
])
def test_params_validation(kwargs):
    with pytest.raises(ConfigError):
        RlfParams(**kwargs)
