"""
Experiment orchestration: training runs, parameter sweeps, RSRP heatmaps,
single test runs and metric replay. Every command writes its artifacts
into an output directory together with a manifest for reproduction.
"""

import csv
import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import SIMULATOR_VERSION, SWEEP_PARAMETERS, Mode, RunConfig, config_hash, dump_config
from errors import ConfigError, MissingArtifactError, TrainingDiverged
from event_log import METRIC_COLUMNS, EpisodeLog, RunMetrics, metrics_from_log
from learning.dqn_agent import load_checkpoint
from sim_engine import CURVE_COLUMNS, rsrp_heatmap, run_episode, scenario_for, train

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "agent.ckpt"
CURVES_FILE = "curves.csv"
MANIFEST_FILE = "manifest.json"
RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.csv"
HEATMAP_FILE = "heatmap.csv"
EPISODE_LOG_FILE = "episode_log.jsonl"
METRICS_FILE = "metrics.csv"

RESULT_COLUMNS = ("parameter", "value", "mode", "seed") + METRIC_COLUMNS
SUMMARY_COLUMNS = ("parameter", "value", "mode", "runs", "mean_rlf", "mean_hf",
                   "rlf_reduction_pct", "hf_reduction_pct")

DEFAULT_SWEEP_VALUES: Dict[str, Tuple[float, ...]] = {
    "n310": (3, 4, 5, 6, 7, 8),
    "o_exec": (2.0, 4.0, 6.0, 8.0),
    "o_prep": (1.0, 2.0, 3.0, 4.0),
    "t310": (600.0, 800.0, 1000.0, 1200.0, 1400.0),
    "t_exec": (40.0, 60.0, 80.0, 100.0),
    "t_prep": (40.0, 60.0, 80.0, 100.0),
    "avg_window": (1, 3, 5, 7, 10),
}
DEFAULT_SEEDS = 5
_INTEGER_PARAMETERS = ("n310", "avg_window")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: Tuple[float, ...]
    modes: Tuple[Mode, ...] = (Mode.CHO, Mode.CHO_DRL)
    seeds: Tuple[int, ...] = tuple(range(DEFAULT_SEEDS))
    checkpoint: Optional[str] = None

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"unknown sweep parameter {self.parameter!r}, "
                              f"expected one of {sorted(SWEEP_PARAMETERS)}")
        if not self.values:
            raise ConfigError("a sweep needs at least one value")
        if not self.seeds:
            raise ConfigError("a sweep needs at least one seed")
        if not self.modes:
            raise ConfigError("a sweep needs at least one mode")
        if Mode.CHO_DRL_TRAINING in self.modes:
            raise ConfigError("sweeps evaluate frozen policies; use the train command for training")
        object.__setattr__(self, "values", tuple(_coerce_value(self.parameter, v) for v in self.values))

    @property
    def needs_checkpoint(self) -> bool:
        return Mode.CHO_DRL in self.modes


def _coerce_value(parameter: str, value: float):
    if parameter in _INTEGER_PARAMETERS:
        if int(value) != value:
            raise ConfigError(f"{parameter} must be an integer, got {value}")
        return int(value)
    return float(value)


def _ensure_dir(path: str) -> str:
    os.makedirs(path if path else '.', exist_ok=True)
    return path


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> str:
    _ensure_dir(os.path.dirname(path))
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row[c] for c in columns})
    return path


def write_manifest(out_dir: str, cfg: RunConfig, **extra) -> str:
    manifest = {
        "simulator_version": SIMULATOR_VERSION,
        "config_hash": config_hash(cfg),
        "config": dump_config(cfg),
    }
    manifest.update(extra)
    path = os.path.join(out_dir, MANIFEST_FILE)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, ensure_ascii=False, indent=4, sort_keys=True)
    return path


def read_checkpoint(path: Optional[str]) -> bytes:
    if path is None:
        raise MissingArtifactError("a checkpoint is required for the cho_drl mode (--checkpoint)")
    if not os.path.exists(path):
        raise MissingArtifactError(f"checkpoint not found: {path}")
    with open(path, 'rb') as f:
        return f.read()


def cmd_train(cfg: RunConfig, out_dir: str, episodes: Optional[int] = None,
              progress: bool = True) -> Dict[str, str]:
    """Train an agent; writes the checkpoint, the per-episode curves and a manifest."""
    _ensure_dir(out_dir)
    episodes = episodes if episodes is not None else cfg.training.episodes
    ckpt_path = os.path.join(out_dir, CHECKPOINT_FILE)
    try:
        result = train(cfg, episodes=episodes, progress=progress)
    except TrainingDiverged as e:
        with open(ckpt_path, 'wb') as f:
            f.write(e.checkpoint or b"")
        logger.error("last good checkpoint (before episode %d) written to %s", e.episode, ckpt_path)
        raise

    with open(ckpt_path, 'wb') as f:
        f.write(result.checkpoint)
    curves_path = write_csv(os.path.join(out_dir, CURVES_FILE), CURVE_COLUMNS,
                            (asdict(row) for row in result.curves))
    manifest_path = write_manifest(
        out_dir, cfg,
        command="train",
        seed=cfg.seed,
        episodes=episodes,
        agent_steps=result.agent.steps_done,
        checkpoint_sha256=hashlib.sha256(result.checkpoint).hexdigest(),
    )
    for path in (ckpt_path, curves_path, manifest_path):
        logger.info("written: %s", path)
    return {"checkpoint": ckpt_path, "curves": curves_path, "manifest": manifest_path}


def _run_point(job: Tuple[RunConfig, str, Any, Optional[bytes]]) -> Dict[str, Any]:
    """One sweep cell; module level so that worker processes can import it."""
    cfg, parameter, value, checkpoint = job
    agent = None
    if cfg.mode == Mode.CHO_DRL:
        agent = load_checkpoint(checkpoint, cfg.agent)
    metrics = run_episode(cfg, agent=agent, log_enabled=False).metrics
    row = {"parameter": parameter, "value": value, "mode": cfg.mode.value, "seed": cfg.seed}
    row.update(metrics.as_row())
    return row


def _reduction_pct(baseline: float, value: float) -> Any:
    if baseline == 0:
        return ""
    return round(100.0 * (baseline - value) / baseline, 2)


def summarize(rows: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Per (parameter, value, mode) means and the reduction against cho at the same point."""
    groups: Dict[Tuple[str, Any, str], List[Dict[str, Any]]] = {}
    for row in rows:
        groups.setdefault((row["parameter"], row["value"], row["mode"]), []).append(row)
    means = {key: (float(np.mean([r["rlf_count"] for r in rs])), float(np.mean([r["hf_count"] for r in rs])))
             for key, rs in groups.items()}
    summary = []
    for (parameter, value, mode), rs in sorted(groups.items()):
        mean_rlf, mean_hf = means[(parameter, value, mode)]
        baseline = means.get((parameter, value, Mode.CHO.value))
        summary.append({
            "parameter": parameter,
            "value": value,
            "mode": mode,
            "runs": len(rs),
            "mean_rlf": mean_rlf,
            "mean_hf": mean_hf,
            "rlf_reduction_pct": _reduction_pct(baseline[0], mean_rlf) if baseline else "",
            "hf_reduction_pct": _reduction_pct(baseline[1], mean_hf) if baseline else "",
        })
    return summary


def cmd_sweep(cfg: RunConfig, spec: SweepSpec, out_dir: str, workers: Optional[int] = None,
              progress: bool = True) -> Dict[str, str]:
    """
    Run every (value, mode, seed) combination at the configured defaults with
    one parameter overridden; rows are written in sorted order.
    """
    checkpoint = None
    if spec.needs_checkpoint:
        checkpoint = read_checkpoint(spec.checkpoint)
        load_checkpoint(checkpoint, cfg.agent)
    _ensure_dir(out_dir)

    jobs = []
    for value, mode, seed in itertools.product(spec.values, spec.modes, spec.seeds):
        point = replace(cfg.with_override(spec.parameter, value), mode=mode, seed=seed)
        jobs.append((point, spec.parameter, value, checkpoint if mode == Mode.CHO_DRL else None))
    logger.info("sweep %s: %d values x %d modes x %d seeds = %d runs",
                spec.parameter, len(spec.values), len(spec.modes), len(spec.seeds), len(jobs))

    bar = tqdm(total=len(jobs), desc=f"Перебор {spec.parameter}", unit="run", disable=not progress)
    rows = []
    if workers == 1:
        for job in jobs:
            rows.append(_run_point(job))
            bar.update(1)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_run_point, jobs):
                rows.append(row)
                bar.update(1)
    bar.close()

    rows.sort(key=lambda r: (r["parameter"], r["value"], r["mode"], r["seed"]))
    results_path = write_csv(os.path.join(out_dir, RESULTS_FILE), RESULT_COLUMNS, rows)
    summary_path = write_csv(os.path.join(out_dir, SUMMARY_FILE), SUMMARY_COLUMNS, summarize(rows))
    extra = {}
    if checkpoint is not None:
        extra["checkpoint_sha256"] = hashlib.sha256(checkpoint).hexdigest()
    manifest_path = write_manifest(
        out_dir, cfg,
        command="sweep",
        parameter=spec.parameter,
        values=list(spec.values),
        modes=[m.value for m in spec.modes],
        seeds=list(spec.seeds),
        **extra,
    )
    for path in (results_path, summary_path, manifest_path):
        logger.info("written: %s", path)
    return {"results": results_path, "summary": summary_path, "manifest": manifest_path}


def cmd_heatmap(cfg: RunConfig, out_path: str, resolution_m: float = 10.0) -> str:
    """Strongest expected RSRP over the service area, one CSV row per lattice point."""
    scenario = scenario_for(replace(cfg, mode=Mode.CHO))
    xs, ys, grid = rsrp_heatmap(scenario, cfg.channel, resolution_m)
    rows = ({"x": float(x), "y": float(y), "rsrp_dbm": float(grid[iy, ix])}
            for iy, y in enumerate(ys) for ix, x in enumerate(xs))
    write_csv(out_path, ("x", "y", "rsrp_dbm"), rows)
    logger.info("heatmap %dx%d written: %s", len(xs), len(ys), out_path)
    return out_path


def cmd_run(cfg: RunConfig, out_dir: str, checkpoint: Optional[str] = None) -> Dict[str, str]:
    """One test-corridor run in cfg.mode; writes its event log and metrics row."""
    if cfg.mode == Mode.CHO_DRL_TRAINING:
        raise ConfigError("the run command evaluates a fixed policy; use train for training")
    agent = None
    if cfg.mode == Mode.CHO_DRL:
        agent = load_checkpoint(read_checkpoint(checkpoint), cfg.agent)
    _ensure_dir(out_dir)
    result = run_episode(cfg, agent=agent)
    log_path = result.log.write(os.path.join(out_dir, EPISODE_LOG_FILE))
    metrics_path = write_csv(os.path.join(out_dir, METRICS_FILE), METRIC_COLUMNS, [result.metrics.as_row()])
    logger.info("run %s seed %d: rlf=%d hf=%d handovers=%d", cfg.mode.value, cfg.seed,
                result.metrics.rlf_count, result.metrics.hf_count, result.metrics.handover_count)
    return {"log": log_path, "metrics": metrics_path}


def cmd_replay(log_path: str, out_path: Optional[str] = None) -> RunMetrics:
    """Re-derive the metrics row of a recorded episode log."""
    metrics = metrics_from_log(EpisodeLog.from_jsonl(log_path))
    if out_path is not None:
        write_csv(out_path, METRIC_COLUMNS, [metrics.as_row()])
        logger.info("written: %s", out_path)
    return metrics
