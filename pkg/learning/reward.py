"""
Reward ledger of the power-control agent.

Rewards are evaluated every tick (20 ms) from the tick's events and summed
between agent invocations:

    +15  handover succeeded thanks to a boost (Action 0)
    -15  RLF although the last decision was Action 0
     -5  RLF after Action 1
     +5  a boost brought the link back in sync
     -2  a boost expired without any in-sync indication
     -2  Action 0 was suppressed (boost active or cooling down)
    -300 * dSINR  neighbor probe SINR dropped below threshold within 40 ms of a boost
"""

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

from errors import ConfigError
from radio.channel_model import ChannelParams, dbm_to_mw, mean_received_power
from radio.topology import Point, Scenario, distance

REWARD_HANDOVER_SUCCESS = 15.0
PENALTY_RLF_AFTER_BOOST = -15.0
PENALTY_RLF_AFTER_NO_ACTION = -5.0
REWARD_RECOVERY = 5.0
PENALTY_BOOST_NO_RECOVERY = -2.0
PENALTY_SUPPRESSED = -2.0


@dataclass(frozen=True)
class RewardParams:
    sinr_threshold_db: float = 0.0
    probe_radius_m: float = 600.0
    probe_offset_m: float = 50.0
    noise_density_dbm_hz: float = -174.0
    bandwidth_hz: float = 100e6
    penalty_window_ms: float = 40.0
    attribution_extra_ms: float = 200.0
    sinr_penalty_scale: float = 300.0

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise ConfigError(f"bandwidth_hz must be positive, got {self.bandwidth_hz}")
        if self.probe_radius_m < 0 or self.probe_offset_m < 0:
            raise ConfigError("probe radius and offset must be >= 0")
        if self.penalty_window_ms < 0 or self.attribution_extra_ms < 0:
            raise ConfigError("reward windows must be >= 0")

    @property
    def noise_dbm(self) -> float:
        return self.noise_density_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)


@dataclass(frozen=True)
class RewardEventSet:
    handover_success_attributed: bool = False
    rlf_after_action0: bool = False
    rlf_after_action1: bool = False
    recovery_after_boost: bool = False
    boost_no_recovery: bool = False
    suppressed_action0: bool = False
    sinr_delta: float = 0.0

    def __post_init__(self):
        if self.rlf_after_action0 and self.rlf_after_action1:
            raise ValueError("an RLF is attributed to exactly one decision")
        if self.sinr_delta < 0:
            raise ValueError(f"sinr_delta must be >= 0, got {self.sinr_delta}")

    def components(self, sinr_penalty_scale: float = 300.0) -> Dict[str, float]:
        return {
            "handover_success": REWARD_HANDOVER_SUCCESS if self.handover_success_attributed else 0.0,
            "rlf_after_action0": PENALTY_RLF_AFTER_BOOST if self.rlf_after_action0 else 0.0,
            "rlf_after_action1": PENALTY_RLF_AFTER_NO_ACTION if self.rlf_after_action1 else 0.0,
            "recovery": REWARD_RECOVERY if self.recovery_after_boost else 0.0,
            "boost_no_recovery": PENALTY_BOOST_NO_RECOVERY if self.boost_no_recovery else 0.0,
            "suppressed": PENALTY_SUPPRESSED if self.suppressed_action0 else 0.0,
            "sinr_penalty": -self.sinr_delta * sinr_penalty_scale,
        }


def compute_reward(e: RewardEventSet, sinr_penalty_scale: float = 300.0) -> float:
    return sum(e.components(sinr_penalty_scale).values())


@dataclass(frozen=True)
class ProbeUe:
    gnb_id: int
    position: Point


@dataclass(frozen=True)
class ProbeUeSet:
    serving_gnb: int
    probes: Tuple[ProbeUe, ...]


def build_probes(scenario: Scenario, serving_id: int, p: RewardParams) -> ProbeUeSet:
    """
    One static probe UE per gNB within probe_radius of the serving gNB, placed
    probe_offset metres from its own gNB towards the serving gNB.
    """
    serving = scenario.gnb(serving_id)
    probes = []
    for g in scenario.gnbs:
        if g.id == serving_id:
            continue
        d = distance(g.position, serving.position)
        if d > p.probe_radius_m:
            continue
        if d > 0:
            k = min(p.probe_offset_m, d) / d
            pos = (g.position[0] + (serving.position[0] - g.position[0]) * k,
                   g.position[1] + (serving.position[1] - g.position[1]) * k)
        else:
            pos = g.position
        probes.append(ProbeUe(gnb_id=g.id, position=pos))
    return ProbeUeSet(serving_gnb=serving_id, probes=tuple(probes))


def average_probe_sinr(probes: ProbeUeSet,
                       gnb_positions: Mapping[int, Point],
                       tx_powers: Mapping[int, float],
                       channel: ChannelParams,
                       p: RewardParams) -> Optional[float]:
    """Mean over probes of each probe's SINR in dB; None without probes."""
    if not probes.probes:
        return None
    noise_mw = dbm_to_mw(p.noise_dbm)
    sinrs_db = []
    for probe in probes.probes:
        received_mw = {
            g: dbm_to_mw(mean_received_power(tx_powers[g], distance(probe.position, pos), channel))
            for g, pos in gnb_positions.items()
        }
        signal = received_mw[probe.gnb_id]
        interference = sum(v for g, v in received_mw.items() if g != probe.gnb_id)
        sinrs_db.append(10.0 * math.log10(signal / (interference + noise_mw)))
    return sum(sinrs_db) / len(sinrs_db)


def sinr_penalty_delta(probes: ProbeUeSet,
                       t: float,
                       last_boost_ms: Optional[float],
                       gnb_positions: Mapping[int, Point],
                       tx_powers: Mapping[int, float],
                       channel: ChannelParams,
                       p: RewardParams) -> float:
    """
    SINR shortfall (dB) of the neighbor probes, active only on the ticks in
    (t_boost, t_boost + penalty_window].
    """
    if last_boost_ms is None or not 0 < t - last_boost_ms <= p.penalty_window_ms:
        return 0.0
    avg = average_probe_sinr(probes, gnb_positions, tx_powers, channel, p)
    if avg is None:
        return 0.0
    return max(0.0, p.sinr_threshold_db - avg)


@dataclass(frozen=True)
class TickOutcome:
    """Raw events of one tick as seen by the reward ledger."""
    t_ms: float
    in_sync: bool = False
    out_of_sync: bool = False
    rlf_declared: bool = False
    handover_complete: bool = False
    # agent decision taken this tick, if any
    action: Optional[int] = None
    boost_applied: bool = False
    boost_suppressed: bool = False
    # the tracked boost reverted this tick
    boost_reverted: bool = False
    sinr_delta: float = 0.0


@dataclass
class RewardAttributor:
    """Bookkeeping that links tick events back to the agent's decisions."""
    boost_duration_ms: float = 500.0
    attribution_extra_ms: float = 200.0
    last_action: Optional[int] = None
    boost_active: bool = False
    last_boost_ms: Optional[float] = None
    boost_credited: bool = False
    in_sync_during_boost: bool = False
    in_oos_run: bool = False

    @property
    def attribution_window_ms(self) -> float:
        return self.boost_duration_ms + self.attribution_extra_ms


def attribute_outcomes(o: TickOutcome, a: RewardAttributor) -> RewardEventSet:
    """
    Classify one tick into reward flags and update the bookkeeping.

    Events are taken in pipeline order: boost reversion (start of tick), sync
    indications, RLF / handover, then the agent decision of this tick.
    """
    no_recovery = False
    if o.boost_reverted and a.boost_active:
        no_recovery = not a.in_sync_during_boost
        a.boost_active = False

    recovery = False
    if o.out_of_sync:
        a.in_oos_run = True
    if o.in_sync:
        if a.boost_active:
            recovery = a.in_oos_run
            a.in_sync_during_boost = True
        a.in_oos_run = False

    rlf0 = o.rlf_declared and a.last_action == 0
    rlf1 = o.rlf_declared and a.last_action == 1
    if o.rlf_declared:
        a.in_oos_run = False

    handover_credit = False
    if (o.handover_complete and a.last_action == 0 and a.last_boost_ms is not None
            and not a.boost_credited and o.t_ms - a.last_boost_ms <= a.attribution_window_ms):
        handover_credit = True
        a.boost_credited = True

    if o.action is not None:
        a.last_action = o.action
    if o.boost_applied:
        a.boost_active = True
        a.last_boost_ms = o.t_ms
        a.boost_credited = False
        a.in_sync_during_boost = False

    return RewardEventSet(
        handover_success_attributed=handover_credit,
        rlf_after_action0=rlf0,
        rlf_after_action1=rlf1,
        recovery_after_boost=recovery,
        boost_no_recovery=no_recovery,
        suppressed_action0=o.boost_suppressed,
        sinr_delta=o.sinr_delta,
    )
