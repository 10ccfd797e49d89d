"""
Radio link monitoring of the serving link.

Every observation of the smoothed serving RSRP yields an out-of-sync
indication (below S_RLF), an in-sync indication (at or above Q_in) or nothing
(hysteresis band). N310 consecutive out-of-sync indications start T310; an
in-sync indication stops it; expiry declares radio link failure.
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

from errors import ConfigError


class SyncEvent(str, Enum):
    IN_SYNC = "in_sync"
    OUT_OF_SYNC = "out_of_sync"
    T310_STARTED = "t310_started"
    T310_STOPPED = "t310_stopped"
    RLF_DECLARED = "rlf_declared"


@dataclass(frozen=True)
class RlfParams:
    n310: int = 6
    t310: float = 1000.0
    s_rlf: float = -67.5
    # None: equal to s_rlf
    q_in: Optional[float] = None

    def __post_init__(self):
        if self.q_in is None:
            object.__setattr__(self, "q_in", self.s_rlf)
        if int(self.n310) != self.n310 or self.n310 < 1:
            raise ConfigError(f"n310 must be an integer >= 1, got {self.n310}")
        if not self.t310 > 0:
            raise ConfigError(f"t310 must be positive, got {self.t310}")
        if self.q_in < self.s_rlf:
            raise ConfigError(f"q_in ({self.q_in}) must not be below s_rlf ({self.s_rlf})")

    def with_threshold(self, s_rlf: float) -> "RlfParams":
        """Same parameters with S_RLF moved; the Q_in hysteresis gap is kept."""
        return replace(self, s_rlf=s_rlf, q_in=s_rlf + (self.q_in - self.s_rlf))


@dataclass
class RlfState:
    consecutive_oos: int = 0
    t310_running: bool = False
    t310_elapsed: float = 0.0
    rlf_declared: bool = False


def observe(state: RlfState, rsrp: float, dt: float, p: RlfParams) -> Tuple[SyncEvent, ...]:
    """
    Feed one smoothed serving-RSRP value and advance T310 by dt.

    Returns the events produced by this observation, in order.
    """
    if state.rlf_declared:
        raise AssertionError("observe() after RLF was declared; reset the monitor first")

    events = []
    if rsrp < p.s_rlf:
        events.append(SyncEvent.OUT_OF_SYNC)
        state.consecutive_oos += 1
        if not state.t310_running and state.consecutive_oos >= p.n310:
            state.t310_running = True
            state.t310_elapsed = 0.0
            events.append(SyncEvent.T310_STARTED)
            return tuple(events)
    elif rsrp >= p.q_in:
        events.append(SyncEvent.IN_SYNC)
        state.consecutive_oos = 0
        if state.t310_running:
            state.t310_running = False
            state.t310_elapsed = 0.0
            events.append(SyncEvent.T310_STOPPED)
        return tuple(events)

    if state.t310_running:
        state.t310_elapsed = min(state.t310_elapsed + dt, p.t310)
        if state.t310_elapsed >= p.t310:
            state.rlf_declared = True
            events.append(SyncEvent.RLF_DECLARED)
    return tuple(events)


def reset(state: RlfState) -> RlfState:
    state.consecutive_oos = 0
    state.t310_running = False
    state.t310_elapsed = 0.0
    state.rlf_declared = False
    return state
