"""
Temporary transmit-power boosts of a gNB (agent Action 0).

A boost adds a fixed increment in mW to the current power, clamped at the
cap K, lasts boost_duration and then reverts to the base power. A cooldown
follows every reversion. Requests during a boost or a cooldown are
suppressed; boosts never stack.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from errors import ConfigError
from radio.channel_model import dbm_to_mw, mw_to_dbm
from radio.topology import GnbConfig


@dataclass(frozen=True)
class PowerParams:
    increment_mw: float = 2000.0
    boost_duration_ms: float = 500.0
    cooldown_duration_ms: float = 500.0

    def __post_init__(self):
        if not self.increment_mw > 0:
            raise ConfigError(f"increment_mw must be positive, got {self.increment_mw}")
        if not self.boost_duration_ms > 0:
            raise ConfigError(f"boost_duration_ms must be positive, got {self.boost_duration_ms}")
        if self.cooldown_duration_ms < 0:
            raise ConfigError(f"cooldown_duration_ms must be >= 0, got {self.cooldown_duration_ms}")


@dataclass
class PowerControllerState:
    base_power: float
    current_power: float
    cap: float
    increment: float = 2000.0
    boost_duration: float = 500.0
    cooldown_duration: float = 500.0
    boost_remaining: float = 0.0
    cooldown_remaining: float = 0.0

    @classmethod
    def for_gnb(cls, gnb: GnbConfig, p: PowerParams) -> "PowerControllerState":
        return cls(
            base_power=gnb.tx_power,
            current_power=gnb.tx_power,
            cap=gnb.tx_power_max,
            increment=p.increment_mw,
            boost_duration=p.boost_duration_ms,
            cooldown_duration=p.cooldown_duration_ms,
        )

    @property
    def boost_active(self) -> bool:
        return self.boost_remaining > 0


class ReversionEvent(str, Enum):
    NONE = "none"
    REVERTED = "reverted"


@dataclass(frozen=True)
class BoostResult:
    applied: bool
    # new transmit power in dBm when applied
    power_dbm: Optional[float] = None

    @classmethod
    def suppressed(cls) -> "BoostResult":
        return cls(applied=False)


def request_boost(s: PowerControllerState) -> BoostResult:
    if s.cooldown_remaining > 0 or s.boost_remaining > 0:
        return BoostResult.suppressed()
    boosted_mw = dbm_to_mw(s.current_power) + s.increment
    s.current_power = min(mw_to_dbm(boosted_mw), s.cap)
    s.boost_remaining = s.boost_duration
    return BoostResult(applied=True, power_dbm=s.current_power)


def tick(s: PowerControllerState, dt: float) -> ReversionEvent:
    if s.boost_remaining > 0:
        s.boost_remaining = max(s.boost_remaining - dt, 0.0)
        if s.boost_remaining == 0:
            s.current_power = s.base_power
            s.cooldown_remaining = s.cooldown_duration
            return ReversionEvent.REVERTED
        return ReversionEvent.NONE
    if s.cooldown_remaining > 0:
        s.cooldown_remaining = max(s.cooldown_remaining - dt, 0.0)
    return ReversionEvent.NONE
