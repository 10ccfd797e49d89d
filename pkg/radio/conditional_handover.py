"""
Conditional handover (CHO) state machine.

Preparation requires P_t > P_c + O_prep at every tick for T_prep, execution
requires P_t > P_c + O_exec at every tick for T_exec. One violating tick
aborts to Idle. A radio link failure while preparing or executing is a
handover failure.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional

from errors import ConfigError


class ChoPhase(str, Enum):
    IDLE = "idle"
    PREPARING = "preparing"
    EXECUTING = "executing"


class ChoEvent(str, Enum):
    NONE = "none"
    PREP_STARTED = "prep_started"
    PREP_ABORTED = "prep_aborted"
    EXEC_STARTED = "exec_started"
    EXEC_ABORTED = "exec_aborted"
    HANDOVER_COMPLETE = "handover_complete"


class HandoverOutcome(str, Enum):
    HANDOVER_FAILURE = "handover_failure"
    RLF_ONLY = "rlf_only"


@dataclass(frozen=True)
class ChoParams:
    t_prep: float = 100.0
    t_exec: float = 80.0
    o_prep: float = 1.0
    o_exec: float = 6.0

    def __post_init__(self):
        for name in ("t_prep", "t_exec", "o_prep", "o_exec"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass
class ChoState:
    serving: int
    phase: ChoPhase = ChoPhase.IDLE
    target: Optional[int] = None
    elapsed: float = 0.0
    # greedy baseline: re-point the target at the strongest neighbor every tick
    follow_strongest: bool = False

    def to_idle(self):
        self.phase = ChoPhase.IDLE
        self.target = None
        self.elapsed = 0.0


def best_neighbor(rsrp: Mapping[int, float], serving: int) -> int:
    """Strongest non-serving gNB; ties go to the lowest id."""
    neighbors = [g for g in rsrp if g != serving]
    if not neighbors:
        raise ValueError("no neighbor gNB to hand over to")
    return min(neighbors, key=lambda g: (-rsrp[g], g))


def step(state: ChoState, rsrp: Mapping[int, float], dt: float, p: ChoParams) -> ChoEvent:
    """Advance the handover state machine by one tick of smoothed RSRP values."""
    strongest = best_neighbor(rsrp, state.serving)
    serving_rsrp = rsrp[state.serving]

    if state.phase == ChoPhase.IDLE:
        if rsrp[strongest] > serving_rsrp + p.o_prep:
            state.phase = ChoPhase.PREPARING
            state.target = strongest
            state.elapsed = dt
            if state.elapsed >= p.t_prep:
                state.phase = ChoPhase.EXECUTING
                state.elapsed = 0.0
                return ChoEvent.EXEC_STARTED
            return ChoEvent.PREP_STARTED
        return ChoEvent.NONE

    if strongest != state.target:
        if state.follow_strongest:
            state.target = strongest
        elif state.phase == ChoPhase.PREPARING:
            state.to_idle()
            return ChoEvent.PREP_ABORTED

    if state.phase == ChoPhase.PREPARING:
        if not rsrp[state.target] > serving_rsrp + p.o_prep:
            state.to_idle()
            return ChoEvent.PREP_ABORTED
        state.elapsed += dt
        if state.elapsed >= p.t_prep:
            state.phase = ChoPhase.EXECUTING
            state.elapsed = 0.0
            return ChoEvent.EXEC_STARTED
        return ChoEvent.NONE

    # executing
    if not rsrp[state.target] > serving_rsrp + p.o_exec:
        state.to_idle()
        return ChoEvent.EXEC_ABORTED
    state.elapsed += dt
    if state.elapsed >= p.t_exec:
        state.serving = state.target
        state.to_idle()
        return ChoEvent.HANDOVER_COMPLETE
    return ChoEvent.NONE


def on_rlf(state: ChoState) -> HandoverOutcome:
    """Classify an RLF against the handover phase and return to Idle."""
    in_handover = state.phase in (ChoPhase.PREPARING, ChoPhase.EXECUTING)
    state.to_idle()
    if in_handover:
        return HandoverOutcome.HANDOVER_FAILURE
    return HandoverOutcome.RLF_ONLY


class PingPongTracker:
    """Counts handovers back to the previously serving cell within a window."""

    def __init__(self, window_ms: float = 1000.0):
        self.window_ms = window_ms
        self.count = 0
        self._last_source: Optional[int] = None
        self._last_time: Optional[float] = None

    def record(self, t_ms: float, source: int, target: int) -> bool:
        ping_pong = (
            self._last_source is not None
            and target == self._last_source
            and t_ms - self._last_time <= self.window_ms
        )
        if ping_pong:
            self.count += 1
        self._last_source = source
        self._last_time = t_ms
        return ping_pong
