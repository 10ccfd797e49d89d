"""
Episode event log (JSON lines) and the per-run metric counters derived from it.
"""

import json
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from errors import MissingArtifactError

# record kinds
ATTACH = "attach"
OUT_OF_SYNC = "out_of_sync"
T310_STARTED = "t310_started"
T310_STOPPED = "t310_stopped"
RLF = "rlf"
REESTABLISHED = "reestablished"
PREP_STARTED = "prep_started"
PREP_ABORTED = "prep_aborted"
EXEC_STARTED = "exec_started"
EXEC_ABORTED = "exec_aborted"
HANDOVER = "handover"
ACTION = "action"
BOOST = "boost"
BOOST_SUPPRESSED = "boost_suppressed"
BOOST_REVERTED = "boost_reverted"
REWARD = "reward"
EPISODE_END = "episode_end"


def convert_numpy_to_python_types(obj):
    """
    Recursively convert numpy types to Python native types for JSON serialization.
    """
    if isinstance(obj, dict):
        return {k: convert_numpy_to_python_types(v) for k, v in obj.items()}
    elif isinstance(obj, (list, tuple)):
        return [convert_numpy_to_python_types(item) for item in obj]
    elif isinstance(obj, np.integer):
        return int(obj)
    elif isinstance(obj, np.floating):
        return float(obj)
    elif isinstance(obj, np.bool_):
        return bool(obj)
    elif isinstance(obj, np.ndarray):
        return convert_numpy_to_python_types(obj.tolist())
    else:
        return obj


@dataclass
class RunMetrics:
    rlf_count: int = 0
    hf_count: int = 0
    handover_count: int = 0
    ping_pong_count: int = 0
    boost_count: int = 0
    suppressed_count: int = 0
    mean_serving_rsrp: float = float("nan")

    def check(self):
        assert self.hf_count <= self.rlf_count, "every handover failure is a radio link failure"
        assert self.ping_pong_count <= self.handover_count

    def as_row(self) -> Dict[str, Any]:
        return asdict(self)


METRIC_COLUMNS = tuple(f.name for f in fields(RunMetrics))


@dataclass(frozen=True)
class EventRecord:
    t_ms: float
    kind: str
    payload: Dict[str, Any]

    def to_json(self) -> str:
        record = {"t_ms": self.t_ms, "kind": self.kind, "payload": self.payload}
        return json.dumps(convert_numpy_to_python_types(record), sort_keys=True, separators=(",", ":"))


class EpisodeLog:
    """Append-only list of tick-stamped records; a disabled log drops everything."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.records: List[EventRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def emit(self, t_ms: float, kind: str, **payload):
        if not self.enabled:
            return
        if self.records and t_ms < self.records[-1].t_ms:
            raise AssertionError(f"log time went backwards: {t_ms} after {self.records[-1].t_ms}")
        self.records.append(EventRecord(t_ms, kind, payload))

    def of_kind(self, kind: str) -> List[EventRecord]:
        return [r for r in self.records if r.kind == kind]

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def write(self, path: str) -> str:
        os.makedirs(os.path.dirname(path) if os.path.dirname(path) else '.', exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.to_jsonl())
        return path

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "EpisodeLog":
        log = cls()
        for line in lines:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            log.records.append(EventRecord(raw["t_ms"], raw["kind"], raw.get("payload", {})))
        return log

    @classmethod
    def from_jsonl(cls, path: str) -> "EpisodeLog":
        if not os.path.exists(path):
            raise MissingArtifactError(f"episode log not found: {path}")
        with open(path, encoding='utf-8') as f:
            return cls.from_lines(f)


def reward_total(log: EpisodeLog) -> float:
    return sum(r.payload["total"] for r in log.of_kind(REWARD))


def metrics_from_log(log: EpisodeLog) -> RunMetrics:
    """
    Re-derive the counters from the event records. The mean serving RSRP is
    not recoverable from events and is read from the episode-end record.
    """
    m = RunMetrics()
    end: Optional[EventRecord] = None
    for r in log:
        if r.kind == RLF:
            m.rlf_count += 1
            if r.payload.get("handover_failure"):
                m.hf_count += 1
        elif r.kind == HANDOVER:
            m.handover_count += 1
            if r.payload.get("ping_pong"):
                m.ping_pong_count += 1
        elif r.kind == BOOST:
            m.boost_count += 1
        elif r.kind == BOOST_SUPPRESSED:
            m.suppressed_count += 1
        elif r.kind == EPISODE_END:
            end = r
    if end is not None:
        m.mean_serving_rsrp = end.payload.get("mean_serving_rsrp", m.mean_serving_rsrp)
    return m
