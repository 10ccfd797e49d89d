"""
gNB deployments and UE trajectories.

Two scenarios are built here: the randomized 2-gNB training scenario and the
fixed 15-gNB test corridor (3000 x 500 m service area).
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError

Point = Tuple[float, float]

KMH_TO_MS = 1000.0 / 3600.0

TX_POWER_INITIAL_DBM = 33.0
TX_POWER_MAX_DBM = 38.5

SERVICE_AREA_M = (3000.0, 500.0)

# gNB coordinates of the test corridor, ids 1..15
TEST_GNB_POSITIONS: Tuple[Point, ...] = (
    (50.0, 150.0),    # south of road, baseline coverage
    (190.0, 330.0),   # north of road, early handover trigger
    (550.0, 180.0),   # just south of road, weaker transition
    (700.0, 290.0),   # just north of road, coverage black spot
    (880.0, 160.0),   # south of road, artificial weak zone
    (1040.0, 330.0),  # north of road, standard spacing
    (1190.0, 210.0),  # slightly south, standard spacing
    (1330.0, 260.0),  # just north of road, weak transition area
    (1630.0, 285.0),  # north of road, intended handover zone
    (1770.0, 155.0),  # south of road, increased drop chance
    (1940.0, 400.0),  # far north, edge-of-coverage
    (2230.0, 180.0),  # south of road, offset from main corridor
    (2385.0, 340.0),  # north of road, just outside corridor
    (2630.0, 115.0),  # well south of road, past gap
    (2830.0, 300.0),  # north of road, high-elevation weak link
)

TEST_UE_Y_M = 250.0
TEST_TRACK_LENGTH_M = 3000.0
TEST_UE_SPEED_KMH = 40.0
SPEED_JITTER = (0.8, 1.2)

TRAINING_DURATION_MS = 10_000.0
TRAINING_SPEED_RANGE_KMH = (35.0, 45.0)


@dataclass(frozen=True)
class GnbConfig:
    id: int
    position: Point
    tx_power: float = TX_POWER_INITIAL_DBM
    tx_power_initial: float = TX_POWER_INITIAL_DBM
    tx_power_max: float = TX_POWER_MAX_DBM

    def __post_init__(self):
        if not self.tx_power_initial <= self.tx_power <= self.tx_power_max:
            raise ConfigError(
                f"gNB {self.id}: transmit power must satisfy initial <= current <= max, "
                f"got {self.tx_power_initial} / {self.tx_power} / {self.tx_power_max}"
            )


@dataclass(frozen=True)
class UeTrajectory:
    """
    Straight-line UE path.

    speed_jitter is a multiplicative range; with jitter_per_step the factor is
    redrawn at every tick, otherwise base_speed already includes it.
    """
    start: Point
    end: Point
    base_speed: float
    duration: float
    speed_jitter: Tuple[float, float] = (1.0, 1.0)
    jitter_per_step: bool = False

    def __post_init__(self):
        lo, hi = self.speed_jitter
        if lo > hi:
            raise ConfigError(f"speed jitter range is inverted: {self.speed_jitter}")
        if not self.base_speed > 0:
            raise ConfigError(f"base_speed must be positive, got {self.base_speed}")
        if not self.duration > 0:
            raise ConfigError(f"duration must be positive, got {self.duration}")

    @property
    def length(self) -> float:
        return distance(self.start, self.end)


@dataclass(frozen=True)
class Scenario:
    gnbs: Tuple[GnbConfig, ...]
    trajectory: UeTrajectory
    label: str
    # None: attach to the strongest gNB at the start point
    initial_serving: Optional[int] = None

    def __post_init__(self):
        if len(self.gnbs) < 2:
            raise ConfigError("a scenario needs at least 2 gNBs")
        if self.label not in ("training", "testing"):
            raise ConfigError(f"unknown scenario label {self.label!r}")
        ids = [g.id for g in self.gnbs]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate gNB ids in {ids}")

    def gnb(self, gnb_id: int) -> GnbConfig:
        for g in self.gnbs:
            if g.id == gnb_id:
                return g
        raise KeyError(gnb_id)


class TrajectoryFinished(Exception):
    """The requested time lies beyond the trajectory duration."""


def distance(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def consecutive_distances(s: Scenario) -> List[Tuple[int, int, float]]:
    """Distances between gNBs i and i+1 in list order."""
    return [
        (a.id, b.id, distance(a.position, b.position))
        for a, b in zip(s.gnbs, s.gnbs[1:])
    ]


def build_training_scenario(rng: np.random.Generator) -> Scenario:
    """
    Randomized 2-gNB layout used during training.

    gNB 1 lies at x~U[2,100], y~U[230,240] with power ~U[33,40] dBm, gNB 2 at
    x~U[200,350], y~U[260,270] with 33 dBm. The UE leaves gNB 1 towards gNB 2
    for 10 s at U[35,45] km/h scaled by U[0.8,1.2] for the whole episode.
    """
    x1 = rng.uniform(2.0, 100.0)
    y1 = rng.uniform(230.0, 240.0)
    p1 = rng.uniform(33.0, 40.0)
    x2 = rng.uniform(200.0, 350.0)
    y2 = rng.uniform(260.0, 270.0)
    base_kmh = rng.uniform(*TRAINING_SPEED_RANGE_KMH)
    scale = rng.uniform(*SPEED_JITTER)

    gnb1 = GnbConfig(
        id=1,
        position=(x1, y1),
        tx_power=p1,
        tx_power_initial=TX_POWER_INITIAL_DBM,
        # the sampled power may exceed K; the cap follows it
        tx_power_max=max(TX_POWER_MAX_DBM, p1),
    )
    gnb2 = GnbConfig(id=2, position=(x2, y2))
    trajectory = UeTrajectory(
        start=gnb1.position,
        end=gnb2.position,
        base_speed=base_kmh * scale * KMH_TO_MS,
        duration=TRAINING_DURATION_MS,
    )
    return Scenario(gnbs=(gnb1, gnb2), trajectory=trajectory, label="training", initial_serving=1)


def build_test_scenario(ue_y: float = TEST_UE_Y_M,
                        track_length: float = TEST_TRACK_LENGTH_M,
                        positions: Optional[Sequence[Point]] = None) -> Scenario:
    """
    The 15-gNB corridor. The UE drives from x=0 to x=track_length at fixed y
    with a nominal 40 km/h, redrawing a U[0.8,1.2] speed factor each tick.
    """
    if positions is None:
        positions = TEST_GNB_POSITIONS
    gnbs = tuple(GnbConfig(id=i, position=(float(x), float(y)))
                 for i, (x, y) in enumerate(positions, 1))
    speed = TEST_UE_SPEED_KMH * KMH_TO_MS
    trajectory = UeTrajectory(
        start=(0.0, ue_y),
        end=(track_length, ue_y),
        base_speed=speed,
        duration=track_length / speed * 1000.0,
        speed_jitter=SPEED_JITTER,
        jitter_per_step=True,
    )
    return Scenario(gnbs=gnbs, trajectory=trajectory, label="testing")


class UeMobility:
    """Integrates the UE position tick by tick along its trajectory."""

    def __init__(self, trajectory: UeTrajectory, rng: np.random.Generator):
        self.trajectory = trajectory
        self.rng = rng
        self.elapsed_ms = 0.0
        self.travelled_m = 0.0
        self.speed = trajectory.base_speed
        length = trajectory.length
        if length > 0:
            self._direction = ((trajectory.end[0] - trajectory.start[0]) / length,
                               (trajectory.end[1] - trajectory.start[1]) / length)
        else:
            self._direction = (0.0, 0.0)

    @property
    def position(self) -> Point:
        d = min(self.travelled_m, self.trajectory.length)
        return (self.trajectory.start[0] + self._direction[0] * d,
                self.trajectory.start[1] + self._direction[1] * d)

    @property
    def finished(self) -> bool:
        return self.elapsed_ms >= self.trajectory.duration - 1e-9

    def advance(self, dt_ms: float) -> Point:
        if self.elapsed_ms + dt_ms > self.trajectory.duration + 1e-9:
            raise TrajectoryFinished(f"t={self.elapsed_ms + dt_ms} ms beyond {self.trajectory.duration} ms")
        jitter = 1.0
        if self.trajectory.jitter_per_step:
            jitter = self.rng.uniform(*self.trajectory.speed_jitter)
        self.speed = self.trajectory.base_speed * jitter
        self.travelled_m += self.speed * dt_ms / 1000.0
        self.elapsed_ms += dt_ms
        return self.position


def ue_position(s: Scenario, t: float, rng: np.random.Generator, dt: float = 20.0) -> Point:
    """UE position at time t (ms), integrating the jittered speed from t=0."""
    if t < 0:
        raise ValueError(f"negative time {t}")
    if t > s.trajectory.duration + 1e-9:
        raise TrajectoryFinished(f"t={t} ms beyond {s.trajectory.duration} ms")
    mobility = UeMobility(s.trajectory, rng)
    remaining = t
    while remaining > 1e-9:
        step = min(dt, remaining)
        mobility.advance(step)
        remaining -= step
    return mobility.position
