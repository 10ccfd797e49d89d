"""
Discrete-time simulation of one UE moving through a gNB deployment.

Per tick (dt = 20 ms by default): advance the UE, expire power boosts, measure
and smooth RSRP on every link, run radio link monitoring on the serving link,
step the conditional handover machine, let the agent react to out-of-sync
indications and book the tick's rewards.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Protocol, Tuple

import numpy as np
from tqdm import tqdm

import event_log as ev
from config import Mode, RunConfig
from errors import NumericalError, TrainingDiverged
from event_log import EpisodeLog, RunMetrics
from learning.dqn_agent import (ACTION_BOOST, DqnAgent, RawFeatures, Transition,
                                normalize, save_checkpoint)
from learning.reward import (ProbeUeSet, RewardAttributor, TickOutcome, attribute_outcomes,
                             build_probes, sinr_penalty_delta)
from radio import conditional_handover as cho_sm
from radio import power_control
from radio import rlf_monitor
from radio.channel_model import (ChannelParams, RsrpWindow, link_rng, mean_received_power,
                                 received_power)
from radio.conditional_handover import ChoEvent, ChoState, HandoverOutcome, PingPongTracker
from radio.power_control import PowerControllerState, ReversionEvent
from radio.rlf_monitor import RlfState, SyncEvent
from radio.topology import (SERVICE_AREA_M, GnbConfig, Point, Scenario, TrajectoryFinished,
                            UeMobility, build_test_scenario, build_training_scenario, distance)

logger = logging.getLogger(__name__)

# spawn keys of the per-episode RNG streams; stream 1 belongs to the links (see link_rng)
STREAM_MOBILITY = 0
STREAM_SCENARIO = 2
STREAM_GRID = 3

Policy = Callable[[np.ndarray], int]

_CHO_EVENT_KINDS = {
    ChoEvent.PREP_STARTED: ev.PREP_STARTED,
    ChoEvent.PREP_ABORTED: ev.PREP_ABORTED,
    ChoEvent.EXEC_STARTED: ev.EXEC_STARTED,
    ChoEvent.EXEC_ABORTED: ev.EXEC_ABORTED,
}

_SYNC_EVENT_KINDS = {
    SyncEvent.OUT_OF_SYNC: ev.OUT_OF_SYNC,
    SyncEvent.T310_STARTED: ev.T310_STARTED,
    SyncEvent.T310_STOPPED: ev.T310_STOPPED,
}


def episode_rng(seed: int, episode: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(episode, stream, 0)))


class RsrpSampler(Protocol):
    def sample(self, gnb: GnbConfig, tx_power: float, ue: Point, t_ms: float) -> float:
        ...


class ChannelSampler:
    """Raw RSRP from the stochastic channel, one RNG stream per link."""

    def __init__(self, channel: ChannelParams, seed: int, episode: int = 0):
        self.channel = channel
        self.seed = seed
        self.episode = episode
        self._rngs: Dict[int, np.random.Generator] = {}

    def sample(self, gnb: GnbConfig, tx_power: float, ue: Point, t_ms: float) -> float:
        rng = self._rngs.get(gnb.id)
        if rng is None:
            rng = self._rngs[gnb.id] = link_rng(self.seed, self.episode, gnb.id)
        return received_power(tx_power, distance(gnb.position, ue), rng, self.channel)


@dataclass
class EpisodeResult:
    metrics: RunMetrics
    log: EpisodeLog
    transitions: List[Transition] = field(default_factory=list)
    total_reward: float = 0.0
    losses: List[float] = field(default_factory=list)
    ticks: int = 0


def scenario_for(cfg: RunConfig, episode: int = 0) -> Scenario:
    if cfg.mode == Mode.CHO_DRL_TRAINING:
        return build_training_scenario(episode_rng(cfg.seed, episode, STREAM_SCENARIO))
    s = cfg.scenario
    return build_test_scenario(ue_y=s.ue_y, track_length=s.track_length, positions=s.gnb_positions)


def strongest_at(scenario: Scenario, point: Point, channel: ChannelParams) -> int:
    """gNB with the highest mean received power at point; ties go to the lowest id."""
    return max(scenario.gnbs,
               key=lambda g: (mean_received_power(g.tx_power, distance(g.position, point), channel), -g.id)).id


def _strongest(rsrp: Dict[int, float]) -> int:
    return min(rsrp, key=lambda g: (-rsrp[g], g))


def run_episode(cfg: RunConfig,
                scenario: Optional[Scenario] = None,
                agent: Optional[DqnAgent] = None,
                policy: Optional[Policy] = None,
                sampler: Optional[RsrpSampler] = None,
                episode: int = 0,
                log_enabled: bool = True) -> EpisodeResult:
    """
    Simulate one trajectory.

    In cho_drl mode decisions come from policy (or the agent's greedy action);
    in cho_drl_training mode the agent explores, stores transitions and trains.
    """
    mode = cfg.mode
    training = mode == Mode.CHO_DRL_TRAINING
    if training and agent is None:
        raise ValueError("training mode needs an agent")
    if mode == Mode.CHO_DRL and policy is None:
        if agent is None:
            raise ValueError("cho_drl mode needs a policy or an agent")
        policy = agent.greedy_policy()
    if scenario is None:
        scenario = scenario_for(cfg, episode)
    if sampler is None:
        sampler = ChannelSampler(cfg.channel, cfg.seed, episode)

    dt = cfg.dt_ms
    sample_every = int(round(cfg.sample_period_ms / dt))
    gnbs = {g.id: g for g in scenario.gnbs}
    ids = sorted(gnbs)
    positions = {g: gnbs[g].position for g in ids}
    power = {g: PowerControllerState.for_gnb(gnbs[g], cfg.power) for g in ids}
    windows = {g: RsrpWindow(cfg.channel.avg_window) for g in ids}
    smoothed: Dict[int, float] = {}
    raw_rsrp: Dict[int, float] = {}

    mobility = UeMobility(scenario.trajectory, episode_rng(cfg.seed, episode, STREAM_MOBILITY))
    serving = scenario.initial_serving
    if serving is None:
        serving = strongest_at(scenario, scenario.trajectory.start, cfg.channel)
    cho = ChoState(serving=serving, follow_strongest=mode == Mode.GREEDY)
    rlf = RlfState()
    ping_pong = PingPongTracker(cfg.ping_pong_window_ms)
    attributor = RewardAttributor(cfg.power.boost_duration_ms, cfg.reward.attribution_extra_ms)
    probes: Dict[int, ProbeUeSet] = {}

    log = EpisodeLog(enabled=log_enabled)
    metrics = RunMetrics()
    result = EpisodeResult(metrics=metrics, log=log)
    log.emit(0.0, ev.ATTACH, gnb=serving)

    # open transition: (state, action, accrued reward)
    pending: Optional[Tuple[np.ndarray, int, float]] = None
    boosted_gnb: Optional[int] = None
    reestablish = False
    # windows were cleared; measure on the next tick regardless of the sample period
    resample = False
    rsrp_sum = 0.0
    k = 0

    def features() -> np.ndarray:
        target = cho.target if cho.target is not None else cho_sm.best_neighbor(smoothed, cho.serving)
        return normalize(RawFeatures(
            rsrp_serv=smoothed[cho.serving],
            rsrp_targ=smoothed[target],
            ue_speed=mobility.speed,
            t_exec=cfg.cho.t_exec,
            t_prep=cfg.cho.t_prep,
            o_exec=cfg.cho.o_exec,
            o_prep=cfg.cho.o_prep,
            t310=cfg.rlf.t310,
            n310=cfg.rlf.n310,
            rsrp_rlf=cfg.rlf.s_rlf,
        ))

    def clear_windows():
        nonlocal resample
        for w in windows.values():
            w.clear()
        resample = True

    def close_pending(s_next: np.ndarray, done: bool):
        nonlocal pending
        s, a, r = pending
        pending = None
        if not training:
            return
        transition = Transition(s=s, a=a, r=r, s_next=s_next, done=done)
        agent.remember(transition)
        result.transitions.append(transition)
        loss = agent.learn()
        if loss is not None:
            result.losses.append(loss)

    while True:
        try:
            ue = mobility.advance(dt)
        except TrajectoryFinished:
            break
        k += 1
        t = k * dt

        boost_reverted = False
        for g in ids:
            if power_control.tick(power[g], dt) == ReversionEvent.REVERTED:
                log.emit(t, ev.BOOST_REVERTED, gnb=g)
                boost_reverted = boost_reverted or g == boosted_gnb

        if k % sample_every == 0 or not smoothed or resample:
            resample = False
            for g in ids:
                raw = sampler.sample(gnbs[g], power[g].current_power, ue, t)
                if not math.isfinite(raw):
                    raise NumericalError(f"non-finite RSRP {raw} on link to gNB {g}", tick=k)
                raw_rsrp[g] = raw
                smoothed[g] = windows[g].push(raw)

        if reestablish:
            reestablish = False
            cho = ChoState(serving=_strongest(raw_rsrp), follow_strongest=cho.follow_strongest)
            rlf_monitor.reset(rlf)
            log.emit(t, ev.REESTABLISHED, gnb=cho.serving)

        serving_rsrp = smoothed[cho.serving]
        rsrp_sum += serving_rsrp
        sync_events = rlf_monitor.observe(rlf, serving_rsrp, dt, cfg.rlf)
        for e in sync_events:
            if e in _SYNC_EVENT_KINDS:
                log.emit(t, _SYNC_EVENT_KINDS[e], gnb=cho.serving, rsrp=serving_rsrp)

        rlf_declared = SyncEvent.RLF_DECLARED in sync_events
        handover_complete = False
        if rlf_declared:
            phase = cho.phase.value
            outcome = cho_sm.on_rlf(cho)
            hf = outcome == HandoverOutcome.HANDOVER_FAILURE
            metrics.rlf_count += 1
            metrics.hf_count += int(hf)
            log.emit(t, ev.RLF, gnb=cho.serving, handover_failure=hf, phase=phase, rsrp=serving_rsrp)
            reestablish = True
            clear_windows()
        else:
            source = cho.serving
            target = cho.target
            cho_event = cho_sm.step(cho, smoothed, dt, cfg.cho)
            if cho_event in _CHO_EVENT_KINDS:
                log.emit(t, _CHO_EVENT_KINDS[cho_event], source=source,
                         target=cho.target if cho.target is not None else target)
            elif cho_event == ChoEvent.HANDOVER_COMPLETE:
                handover_complete = True
                metrics.handover_count += 1
                pp = ping_pong.record(t, source, cho.serving)
                metrics.ping_pong_count += int(pp)
                log.emit(t, ev.HANDOVER, source=source, target=cho.serving, ping_pong=pp)
                rlf_monitor.reset(rlf)
                clear_windows()

        if not mode.uses_agent:
            continue

        action = None
        boost_applied = boost_suppressed = False
        if SyncEvent.OUT_OF_SYNC in sync_events and not rlf_declared:
            state = features()
            if pending is not None:
                close_pending(state, done=False)
            if training:
                action = agent.act(state, explore=True)
            else:
                action = policy(state)
            log.emit(t, ev.ACTION, action=action, gnb=cho.serving)
            if action == ACTION_BOOST:
                res = power_control.request_boost(power[cho.serving])
                if res.applied:
                    boost_applied = True
                    boosted_gnb = cho.serving
                    metrics.boost_count += 1
                    log.emit(t, ev.BOOST, gnb=cho.serving, power_dbm=res.power_dbm)
                else:
                    boost_suppressed = True
                    metrics.suppressed_count += 1
                    log.emit(t, ev.BOOST_SUPPRESSED, gnb=cho.serving)
            pending = (state, action, 0.0)

        sinr_delta = 0.0
        if boosted_gnb is not None:
            if boosted_gnb not in probes:
                probes[boosted_gnb] = build_probes(scenario, boosted_gnb, cfg.reward)
            sinr_delta = sinr_penalty_delta(
                probes[boosted_gnb], t, attributor.last_boost_ms, positions,
                {g: power[g].current_power for g in ids}, cfg.channel, cfg.reward,
            )
        outcome = TickOutcome(
            t_ms=t,
            in_sync=SyncEvent.IN_SYNC in sync_events,
            out_of_sync=SyncEvent.OUT_OF_SYNC in sync_events,
            rlf_declared=rlf_declared,
            handover_complete=handover_complete,
            action=action,
            boost_applied=boost_applied,
            boost_suppressed=boost_suppressed,
            boost_reverted=boost_reverted,
            sinr_delta=sinr_delta,
        )
        components = attribute_outcomes(outcome, attributor).components(cfg.reward.sinr_penalty_scale)
        total = sum(components.values())
        if total != 0.0 and pending is not None:
            s, a, r = pending
            pending = (s, a, r + total)
            result.total_reward += total
            log.emit(t, ev.REWARD, total=total, **{name: v for name, v in components.items() if v != 0.0})

        if rlf_declared and cfg.done_on_rlf and pending is not None:
            close_pending(features(), done=True)

    if pending is not None:
        close_pending(features(), done=True)

    result.ticks = k
    metrics.mean_serving_rsrp = rsrp_sum / k if k else float("nan")
    metrics.check()
    log.emit(k * dt, ev.EPISODE_END, ticks=k, **metrics.as_row())
    return result


def run_greedy_baseline(cfg: RunConfig, scenario: Optional[Scenario] = None,
                        episode: int = 0) -> RunMetrics:
    """CHO towards the instantaneous strongest neighbor, no power control."""
    return run_episode(replace(cfg, mode=Mode.GREEDY), scenario, episode=episode).metrics


@dataclass
class CurveRow:
    episode: int
    reward: float
    mean_loss: float
    epsilon: float
    rlf_count: int
    hf_count: int
    handover_count: int
    boost_count: int


CURVE_COLUMNS = ("episode", "reward", "mean_loss", "epsilon", "rlf_count", "hf_count",
                 "handover_count", "boost_count")


@dataclass
class TrainingResult:
    agent: DqnAgent
    curves: List[CurveRow]
    checkpoint: bytes


def sample_episode_params(cfg: RunConfig, episode: int) -> RunConfig:
    """Draw this episode's handover and link-monitoring parameters from the training grids."""
    rng = episode_rng(cfg.seed, episode, STREAM_GRID)
    grid = cfg.training
    cho = replace(cfg.cho,
                  o_prep=float(rng.choice(grid.o_prep)),
                  o_exec=float(rng.choice(grid.o_exec)),
                  t_prep=float(rng.choice(grid.t_prep)),
                  t_exec=float(rng.choice(grid.t_exec)))
    rlf = replace(cfg.rlf.with_threshold(float(rng.choice(grid.s_rlf))),
                  t310=float(rng.choice(grid.t310)),
                  n310=int(rng.choice(grid.n310)))
    return replace(cfg, cho=cho, rlf=rlf)


def train(cfg: RunConfig, episodes: Optional[int] = None, agent: Optional[DqnAgent] = None,
          progress: bool = True) -> TrainingResult:
    """
    Train on freshly randomized 2-gNB episodes.

    Raises TrainingDiverged carrying the checkpoint of the last completed
    episode when the TD loss turns non-finite.
    """
    cfg = replace(cfg, mode=Mode.CHO_DRL_TRAINING)
    episodes = episodes if episodes is not None else cfg.training.episodes
    if agent is None:
        agent = DqnAgent(cfg.agent, seed=cfg.seed)
    curves: List[CurveRow] = []
    last_good = save_checkpoint(agent)
    logger.info("training: %d episodes, seed %d", episodes, cfg.seed)

    for episode in tqdm(range(episodes), desc="Обучение", unit="ep", disable=not progress):
        ep_cfg = sample_episode_params(cfg, episode)
        try:
            res = run_episode(ep_cfg, agent=agent, episode=episode, log_enabled=False)
        except NumericalError as e:
            logger.error("training diverged in episode %d: %s", episode, e)
            raise TrainingDiverged(str(e), episode=episode, checkpoint=last_good) from e
        last_good = save_checkpoint(agent)
        m = res.metrics
        row = CurveRow(
            episode=episode,
            reward=res.total_reward,
            mean_loss=float(np.mean(res.losses)) if res.losses else float("nan"),
            epsilon=agent.epsilon,
            rlf_count=m.rlf_count,
            hf_count=m.hf_count,
            handover_count=m.handover_count,
            boost_count=m.boost_count,
        )
        curves.append(row)
        if (episode + 1) % 100 == 0:
            logger.info("episode %d: reward=%.2f loss=%.4f eps=%.3f rlf=%d hf=%d",
                        episode + 1, row.reward, row.mean_loss, row.epsilon, row.rlf_count, row.hf_count)

    logger.info("training finished: %d agent steps", agent.steps_done)
    return TrainingResult(agent=agent, curves=curves, checkpoint=last_good)


def rsrp_heatmap(scenario: Scenario,
                 channel: ChannelParams,
                 resolution_m: float = 10.0,
                 width_m: float = SERVICE_AREA_M[0],
                 height_m: float = SERVICE_AREA_M[1]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Strongest mean received power over all gNBs on a regular lattice.

    Returns xs, ys and a grid of shape (len(ys), len(xs)).
    """
    channel = replace(channel, fading_enabled=False)
    xs = np.linspace(0.0, width_m, int(round(width_m / resolution_m)) + 1)
    ys = np.linspace(0.0, height_m, int(round(height_m / resolution_m)) + 1)
    grid = np.full((len(ys), len(xs)), -np.inf)
    for g in scenario.gnbs:
        for iy, y in enumerate(ys):
            for ix, x in enumerate(xs):
                p = mean_received_power(g.tx_power, distance(g.position, (x, y)), channel)
                if p > grid[iy, ix]:
                    grid[iy, ix] = p
    return xs, ys, grid
