from dataclasses import replace

import numpy as np
import pytest

from errors import ConfigError
from radio.topology import (KMH_TO_MS, TEST_GNB_POSITIONS, GnbConfig, Scenario, TrajectoryFinished,
                            UeMobility, build_test_scenario, build_training_scenario,
                            consecutive_distances, distance, ue_position)

# consecutive gNB distances of the test corridor, metres
CORRIDOR_DISTANCES = [
    (1, 2, 228.04), (2, 3, 390.00), (3, 4, 186.01), (4, 5, 222.04), (5, 6, 233.45),
    (6, 7, 192.09), (7, 8, 148.66), (8, 9, 301.04), (9, 10, 191.05), (10, 11, 298.20),
    (11, 12, 364.01), (12, 13, 222.77), (13, 14, 332.64), (14, 15, 272.44),
]


def _without_jitter(s: Scenario) -> Scenario:
    return replace(s, trajectory=replace(s.trajectory, speed_jitter=(1.0, 1.0)))


def test_corridor_has_15_gnbs_at_fixed_coordinates():
    s = build_test_scenario()
    assert len(s.gnbs) == 15
    assert s.gnb(1).position == (50.0, 150.0)
    assert [g.position for g in s.gnbs] == list(TEST_GNB_POSITIONS)
    assert all(g.tx_power == 33.0 and g.tx_power_max == 38.5 for g in s.gnbs)


def test_corridor_consecutive_distances():
    got = consecutive_distances(build_test_scenario())
    assert len(got) == 14
    for (a, b, d), (ea, eb, ed) in zip(got, CORRIDOR_DISTANCES):
        assert (a, b) == (ea, eb)
        assert d == pytest.approx(ed, abs=0.01)


def test_corridor_trajectory():
    s = build_test_scenario()
    assert s.trajectory.start == (0.0, 250.0)
    assert s.trajectory.end == (3000.0, 250.0)
    assert s.trajectory.base_speed == pytest.approx(40.0 * KMH_TO_MS)
    assert s.trajectory.jitter_per_step
    assert s.initial_serving is None


def test_ue_position_at_start():
    s = build_test_scenario()
    assert ue_position(s, 0.0, np.random.default_rng(0)) == (0.0, 250.0)


def test_ue_advances_speed_times_tick():
    s = _without_jitter(build_test_scenario())
    x, y = ue_position(s, 20.0, np.random.default_rng(0))
    assert x == pytest.approx(0.2222, abs=1e-4)
    assert y == 250.0


def test_full_run_displacement_equals_speed_times_duration():
    s = _without_jitter(build_test_scenario(track_length=300.0))
    x, _ = ue_position(s, s.trajectory.duration, np.random.default_rng(0))
    assert x == pytest.approx(s.trajectory.base_speed * s.trajectory.duration / 1000.0, abs=1e-6)


def test_position_beyond_duration_is_terminal():
    s = build_test_scenario(track_length=100.0)
    with pytest.raises(TrajectoryFinished):
        ue_position(s, s.trajectory.duration + 20.0, np.random.default_rng(0))


def test_ue_x_is_monotone_with_jitter():
    s = build_test_scenario(track_length=200.0)
    mobility = UeMobility(s.trajectory, np.random.default_rng(5))
    xs = []
    while True:
        try:
            xs.append(mobility.advance(20.0)[0])
        except TrajectoryFinished:
            break
    assert all(b >= a for a, b in zip(xs, xs[1:]))
    assert 0.8 * s.trajectory.base_speed <= mobility.speed <= 1.2 * s.trajectory.base_speed
    assert mobility.finished


def test_training_scenario_is_pure_function_of_seed():
    a = build_training_scenario(np.random.default_rng(42))
    b = build_training_scenario(np.random.default_rng(42))
    assert a == b


def test_training_scenario_bounds():
    for seed in range(2000):
        s = build_training_scenario(np.random.default_rng(seed))
        g1, g2 = s.gnb(1), s.gnb(2)
        assert 2.0 <= g1.position[0] <= 100.0
        assert 230.0 <= g1.position[1] <= 240.0
        assert 33.0 <= g1.tx_power <= 40.0
        assert g1.tx_power <= g1.tx_power_max
        assert 200.0 <= g2.position[0] <= 350.0
        assert 260.0 <= g2.position[1] <= 270.0
        assert g2.tx_power == 33.0
        speed_kmh = s.trajectory.base_speed / KMH_TO_MS
        assert 35.0 * 0.8 <= speed_kmh <= 45.0 * 1.2
        assert s.trajectory.start == g1.position
        assert s.trajectory.end == g2.position
        assert s.trajectory.duration == 10_000.0
        assert s.initial_serving == 1
        assert s.label == "training"


def test_gnb_power_invariant():
    with pytest.raises(ConfigError):
        GnbConfig(id=1, position=(0.0, 0.0), tx_power=40.0)
    with pytest.raises(ConfigError):
        GnbConfig(id=1, position=(0.0, 0.0), tx_power=30.0)


def test_scenario_needs_two_distinct_gnbs():
    s = build_test_scenario()
    with pytest.raises(ConfigError):
        Scenario(gnbs=s.gnbs[:1], trajectory=s.trajectory, label="testing")
    with pytest.raises(ConfigError):
        Scenario(gnbs=(s.gnbs[0], s.gnbs[0]), trajectory=s.trajectory, label="testing")


def test_distance():
    assert distance((0.0, 0.0), (3.0, 4.0)) == 5.0
