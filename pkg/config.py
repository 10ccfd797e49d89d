"""
Run configuration: parameter groups, INI loading and dumping, config hash.

The INI file has one section per parameter group. Keys missing from a file
keep their defaults; unknown sections or keys are rejected with the line
number they appear on.
"""

import configparser
import hashlib
import logging
import re
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any, Callable, Dict, Optional, Tuple

from errors import ConfigError
from learning.dqn_agent import AgentHyperparams
from learning.reward import RewardParams
from radio.channel_model import ChannelParams
from radio.conditional_handover import ChoParams
from radio.power_control import PowerParams
from radio.rlf_monitor import RlfParams
from radio.topology import TEST_TRACK_LENGTH_M, TEST_UE_Y_M, Point

logger = logging.getLogger(__name__)

SIMULATOR_VERSION = "1.0.0"


class Mode(str, Enum):
    CHO = "cho"
    CHO_DRL = "cho_drl"
    CHO_DRL_TRAINING = "cho_drl_training"
    GREEDY = "greedy"

    @property
    def uses_agent(self) -> bool:
        return self in (Mode.CHO_DRL, Mode.CHO_DRL_TRAINING)


@dataclass(frozen=True)
class TrainingGrid:
    """Option grids sampled per training episode."""
    episodes: int = 2000
    o_prep: Tuple[float, ...] = (1.0, 2.0, 4.0)
    o_exec: Tuple[float, ...] = (2.0, 4.0, 6.0, 8.0)
    t_prep: Tuple[float, ...] = (40.0, 60.0, 80.0, 100.0)
    t_exec: Tuple[float, ...] = (40.0, 60.0, 80.0, 100.0)
    t310: Tuple[float, ...] = (600.0, 800.0, 1000.0, 1200.0)
    n310: Tuple[int, ...] = (3, 5, 6, 8)
    s_rlf: Tuple[float, ...] = (-70.0, -67.5, -65.0)

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {self.episodes}")
        for f in fields(self):
            if f.name != "episodes" and not getattr(self, f.name):
                raise ConfigError(f"training grid {f.name} is empty")


@dataclass(frozen=True)
class ScenarioOverrides:
    ue_y: float = TEST_UE_Y_M
    track_length: float = TEST_TRACK_LENGTH_M
    # None: the built-in 15-gNB corridor
    gnb_positions: Optional[Tuple[Point, ...]] = None

    def __post_init__(self):
        if not self.track_length > 0:
            raise ConfigError(f"track_length must be positive, got {self.track_length}")
        if self.gnb_positions is not None and len(self.gnb_positions) < 2:
            raise ConfigError("gnb_positions needs at least 2 gNBs")


def _divides(dt: float, value: float) -> bool:
    ratio = value / dt
    return abs(ratio - round(ratio)) < 1e-9


@dataclass(frozen=True)
class RunConfig:
    dt_ms: float = 20.0
    mode: Mode = Mode.CHO
    seed: int = 0
    # None: measure every tick
    rsrp_sample_period_ms: Optional[float] = None
    ping_pong_window_ms: float = 1000.0
    # close the pending transition as terminal when an RLF is declared
    done_on_rlf: bool = False
    channel: ChannelParams = field(default_factory=ChannelParams)
    cho: ChoParams = field(default_factory=ChoParams)
    rlf: RlfParams = field(default_factory=RlfParams)
    power: PowerParams = field(default_factory=PowerParams)
    reward: RewardParams = field(default_factory=RewardParams)
    agent: AgentHyperparams = field(default_factory=AgentHyperparams)
    training: TrainingGrid = field(default_factory=TrainingGrid)
    scenario: ScenarioOverrides = field(default_factory=ScenarioOverrides)

    def __post_init__(self):
        if not isinstance(self.mode, Mode):
            object.__setattr__(self, "mode", Mode(self.mode))
        if not self.dt_ms > 0:
            raise ConfigError(f"dt_ms must be positive, got {self.dt_ms}")
        timers = {
            "cho.t_prep": self.cho.t_prep,
            "cho.t_exec": self.cho.t_exec,
            "rlf.t310": self.rlf.t310,
            "power.boost_duration_ms": self.power.boost_duration_ms,
            "power.cooldown_duration_ms": self.power.cooldown_duration_ms,
        }
        for name in ("t_prep", "t_exec", "t310"):
            for v in getattr(self.training, name):
                timers[f"training.{name}={v}"] = v
        for name, value in timers.items():
            if not _divides(self.dt_ms, value):
                raise ConfigError(f"{name} ({value} ms) is not a multiple of dt_ms ({self.dt_ms} ms)")
        if self.rsrp_sample_period_ms is not None:
            if not self.rsrp_sample_period_ms >= self.dt_ms or not _divides(self.dt_ms, self.rsrp_sample_period_ms):
                raise ConfigError(
                    f"rsrp_sample_period_ms ({self.rsrp_sample_period_ms}) must be a positive multiple of dt_ms"
                )

    @property
    def sample_period_ms(self) -> float:
        return self.rsrp_sample_period_ms if self.rsrp_sample_period_ms is not None else self.dt_ms

    def with_override(self, parameter: str, value: float) -> "RunConfig":
        """Copy of the config with one swept parameter replaced."""
        if parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"unknown sweep parameter {parameter!r}, expected one of {sorted(SWEEP_PARAMETERS)}")
        group, key = SWEEP_PARAMETERS[parameter]
        if key in ("n310", "avg_window"):
            if int(value) != value:
                raise ConfigError(f"{parameter} must be an integer, got {value}")
            value = int(value)
        params = getattr(self, group)
        if group == "rlf" and key == "s_rlf":
            params = params.with_threshold(float(value))
        else:
            params = replace(params, **{key: value})
        return replace(self, **{group: params})


# swept parameter -> (group, key)
SWEEP_PARAMETERS: Dict[str, Tuple[str, str]] = {
    "n310": ("rlf", "n310"),
    "t310": ("rlf", "t310"),
    "s_rlf": ("rlf", "s_rlf"),
    "o_prep": ("cho", "o_prep"),
    "o_exec": ("cho", "o_exec"),
    "t_prep": ("cho", "t_prep"),
    "t_exec": ("cho", "t_exec"),
    "avg_window": ("channel", "avg_window"),
}

# INI section -> RunConfig attribute holding the group
GROUP_SECTIONS: Dict[str, str] = {
    "channel": "channel",
    "cho": "cho",
    "rlf": "rlf",
    "power": "power",
    "reward": "reward",
    "agent": "agent",
    "training": "training",
    "scenario": "scenario",
}
SIMULATION_SECTION = "simulation"
SIMULATION_KEYS = ("dt_ms", "mode", "seed", "rsrp_sample_period_ms", "ping_pong_window_ms", "done_on_rlf")

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^\s=:#;\[][^=:]*?)\s*[=:]")


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "yes", "true", "on"):
        return True
    if value in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int(raw: str) -> int:
    return int(raw.strip())


def _parse_optional_float(raw: str) -> Optional[float]:
    if raw.strip().lower() in ("", "none"):
        return None
    return float(raw)


def _parse_list(item: Callable[[str], Any]) -> Callable[[str], Tuple]:
    def parse(raw: str) -> Tuple:
        values = tuple(item(part) for part in raw.split(",") if part.strip())
        if not values:
            raise ValueError("empty list")
        return values
    return parse


def _parse_positions(raw: str) -> Optional[Tuple[Point, ...]]:
    """'x1, y1; x2, y2; ...' or 'none'."""
    if raw.strip().lower() in ("", "none"):
        return None
    points = []
    for pair in raw.split(";"):
        if not pair.strip():
            continue
        x, y = pair.split(",")
        points.append((float(x), float(y)))
    return tuple(points)


def _parser_for(name: str, default: Any) -> Callable[[str], Any]:
    if name == "gnb_positions":
        return _parse_positions
    if name in ("q_in", "rsrp_sample_period_ms"):
        return _parse_optional_float
    if name == "mode":
        return lambda raw: Mode(raw.strip())
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return _parse_int
    if isinstance(default, tuple):
        return _parse_list(_parse_int if isinstance(default[0], int) else float)
    return float


def _field_defaults(cls) -> Dict[str, Any]:
    instance = cls()
    return {f.name: getattr(instance, f.name) for f in fields(cls)}


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(f"{x!r}, {y!r}" for x, y in value)
        return ", ".join(repr(v) for v in value)
    return repr(value)


def _locate(text: str) -> Tuple[Dict[str, int], Dict[Tuple[str, str], int]]:
    """Line numbers of section headers and of keys inside each section."""
    sections: Dict[str, int] = {}
    keys: Dict[Tuple[str, str], int] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.lstrip().startswith(("#", ";")):
            continue
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1).strip()
            sections.setdefault(current, lineno)
            continue
        m = _KEY_RE.match(line)
        if m and current is not None:
            keys.setdefault((current, m.group(1).strip().lower()), lineno)
    return sections, keys


def parse_config_text(text: str, path: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text, source=path)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"duplicate key {e.option!r} in [{e.section}]", path, e.lineno) from e
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"duplicate section [{e.section}]", path, e.lineno) from e
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("key outside of any section", path, e.lineno) from e
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise ConfigError("cannot parse line", path, lineno) from e

    section_lines, key_lines = _locate(text)
    known = {SIMULATION_SECTION, *GROUP_SECTIONS}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]", path, section_lines.get(section))

    def read_section(section: str, defaults: Dict[str, Any]) -> Dict[str, Any]:
        values = {}
        if not parser.has_section(section):
            return values
        for key, raw in parser.items(section):
            line = key_lines.get((section, key))
            if key not in defaults:
                raise ConfigError(f"unknown key {key!r} in [{section}]", path, line)
            try:
                values[key] = _parser_for(key, defaults[key])(raw)
            except ValueError as e:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({e})", path, line) from e
        return values

    run_defaults = _field_defaults(RunConfig)
    sim_defaults = {k: run_defaults[k] for k in SIMULATION_KEYS}
    kwargs: Dict[str, Any] = read_section(SIMULATION_SECTION, sim_defaults)

    for section, attr in GROUP_SECTIONS.items():
        cls = type(run_defaults[attr])
        values = read_section(section, _field_defaults(cls))
        try:
            kwargs[attr] = cls(**values)
        except ConfigError as e:
            raise ConfigError(f"[{section}] {e.args[0]}", path, section_lines.get(section)) from e

    try:
        return RunConfig(**kwargs)
    except ConfigError as e:
        raise ConfigError(e.args[0], path) from e


def load_config(path: Optional[str] = None) -> RunConfig:
    """Defaults when path is None; otherwise the parsed file."""
    if path is None:
        cfg = RunConfig()
    else:
        try:
            with open(path, encoding='utf-8') as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e.strerror}", path) from e
        cfg = parse_config_text(text, path)
    logger.info("config loaded: %s (hash %s)", path or "<defaults>", config_hash(cfg)[:12])
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Canonical INI rendering; every key is written in declaration order."""
    lines = [f"[{SIMULATION_SECTION}]"]
    for key in SIMULATION_KEYS:
        lines.append(f"{key} = {_format_value(getattr(cfg, key))}")
    for section, attr in GROUP_SECTIONS.items():
        group = getattr(cfg, attr)
        lines.append("")
        lines.append(f"[{section}]")
        for f in fields(group):
            lines.append(f"{f.name} = {_format_value(getattr(group, f.name))}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()

