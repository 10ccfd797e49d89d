import csv
import json
import os

import pytest

from config import Mode, RunConfig, ScenarioOverrides, config_hash
from errors import CheckpointError, ConfigError, MissingArtifactError
from event_log import RunMetrics
from experiment_harness import (CHECKPOINT_FILE, EPISODE_LOG_FILE, MANIFEST_FILE,
                                RESULT_COLUMNS, RESULTS_FILE, SUMMARY_FILE, SweepSpec, cmd_heatmap,
                                cmd_replay, cmd_run, cmd_sweep, cmd_train, summarize)
from learning.dqn_agent import load_checkpoint
from run_simulator import EXIT_ARTIFACT, EXIT_CONFIG, EXIT_OK, main


def _read_csv(path):
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def _short_cfg(seed=0, length=100.0):
    return RunConfig(seed=seed, scenario=ScenarioOverrides(track_length=length))


def test_sweep_writes_sorted_cartesian_rows(tmp_path):
    spec = SweepSpec(parameter="n310", values=(8, 3, 6, 5), modes=(Mode.GREEDY, Mode.CHO),
                     seeds=(4, 0, 1, 2, 3))
    paths = cmd_sweep(_short_cfg(), spec, str(tmp_path), workers=1, progress=False)
    rows = _read_csv(paths["results"])
    assert len(rows) == 40
    assert tuple(rows[0]) == RESULT_COLUMNS
    keys = [(r["parameter"], int(r["value"]), r["mode"], int(r["seed"])) for r in rows]
    assert keys == sorted(keys)
    for r in rows:
        assert int(r["hf_count"]) <= int(r["rlf_count"])
        assert int(r["ping_pong_count"]) <= int(r["handover_count"])
    summary = _read_csv(os.path.join(str(tmp_path), SUMMARY_FILE))
    assert len(summary) == 8
    assert all(int(s["runs"]) == 5 for s in summary)
    manifest = json.loads((tmp_path / MANIFEST_FILE).read_text(encoding="utf-8"))
    assert manifest["config_hash"] == config_hash(_short_cfg())
    assert manifest["values"] == [8, 3, 6, 5]


def test_sweep_is_reproducible(tmp_path):
    spec = SweepSpec(parameter="o_exec", values=(2.0, 8.0), modes=(Mode.CHO,), seeds=(0, 1))
    a = cmd_sweep(_short_cfg(), spec, str(tmp_path / "a"), workers=1, progress=False)
    b = cmd_sweep(_short_cfg(), spec, str(tmp_path / "b"), workers=1, progress=False)
    with open(a["results"], encoding="utf-8") as fa, open(b["results"], encoding="utf-8") as fb:
        assert fa.read() == fb.read()


def test_drl_sweep_without_checkpoint_fails(tmp_path):
    spec = SweepSpec(parameter="t310", values=(600.0,), modes=(Mode.CHO, Mode.CHO_DRL), seeds=(0,))
    with pytest.raises(MissingArtifactError):
        cmd_sweep(_short_cfg(), spec, str(tmp_path), workers=1, progress=False)
    spec = SweepSpec(parameter="t310", values=(600.0,), modes=(Mode.CHO_DRL,), seeds=(0,),
                     checkpoint=str(tmp_path / "missing.ckpt"))
    with pytest.raises(MissingArtifactError):
        cmd_sweep(_short_cfg(), spec, str(tmp_path), workers=1, progress=False)
    assert not (tmp_path / RESULTS_FILE).exists()


def test_drl_sweep_rejects_corrupt_checkpoint(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"CHODQN\x01\x00")
    spec = SweepSpec(parameter="t310", values=(600.0,), modes=(Mode.CHO_DRL,), seeds=(0,), checkpoint=str(bad))
    with pytest.raises(CheckpointError):
        cmd_sweep(_short_cfg(), spec, str(tmp_path / "out"), workers=1, progress=False)


@pytest.mark.parametrize("kwargs", [
    {"parameter": "gamma", "values": (0.9,)},
    {"parameter": "n310", "values": ()},
    {"parameter": "n310", "values": (3,), "seeds": ()},
    {"parameter": "n310", "values": (3.5,)},
    {"parameter": "n310", "values": (3,), "modes": (Mode.CHO_DRL_TRAINING,)},
])
def test_sweep_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        SweepSpec(**kwargs)


def test_summary_reduction_against_cho():
    rows = [
        {"parameter": "n310", "value": 5, "mode": "cho", "rlf_count": 4, "hf_count": 2},
        {"parameter": "n310", "value": 5, "mode": "cho", "rlf_count": 4, "hf_count": 0},
        {"parameter": "n310", "value": 5, "mode": "cho_drl", "rlf_count": 2, "hf_count": 1},
        {"parameter": "n310", "value": 5, "mode": "cho_drl", "rlf_count": 3, "hf_count": 0},
    ]
    cho, drl = summarize(rows)
    assert cho["mode"] == "cho" and cho["rlf_reduction_pct"] == 0.0
    assert drl["mean_rlf"] == 2.5
    assert drl["rlf_reduction_pct"] == 37.5
    assert drl["hf_reduction_pct"] == 50.0
    zero = summarize([{"parameter": "n310", "value": 3, "mode": "cho", "rlf_count": 0, "hf_count": 0}])
    assert zero[0]["rlf_reduction_pct"] == ""


def test_train_writes_artifacts_and_is_deterministic(tmp_path):
    cfg = RunConfig(seed=2)
    a = cmd_train(cfg, str(tmp_path / "a" / "nested"), episodes=2, progress=False)
    b = cmd_train(cfg, str(tmp_path / "b"), episodes=2, progress=False)
    for path in a.values():
        assert os.path.exists(path)
    with open(a["curves"], encoding="utf-8") as fa, open(b["curves"], encoding="utf-8") as fb:
        assert fa.read() == fb.read()
    with open(a["checkpoint"], "rb") as fa, open(b["checkpoint"], "rb") as fb:
        data = fa.read()
        assert data == fb.read()
    load_checkpoint(data, cfg.agent)
    assert len(_read_csv(a["curves"])) == 2
    manifest = json.loads(open(a["manifest"], encoding="utf-8").read())
    assert manifest["seed"] == 2 and manifest["episodes"] == 2
    assert manifest["command"] == "train"


def test_heatmap_csv(tmp_path):
    out = cmd_heatmap(RunConfig(), str(tmp_path / "maps" / "heatmap.csv"), resolution_m=100.0)
    rows = _read_csv(out)
    assert len(rows) == 31 * 6
    assert set(rows[0]) == {"x", "y", "rsrp_dbm"}


def test_run_then_replay_gives_same_metrics(tmp_path):
    cfg = _short_cfg(seed=5, length=400.0)
    paths = cmd_run(cfg, str(tmp_path))
    recorded = _read_csv(paths["metrics"])[0]
    replayed = cmd_replay(paths["log"], str(tmp_path / "replayed.csv"))
    assert isinstance(replayed, RunMetrics)
    assert _read_csv(str(tmp_path / "replayed.csv"))[0] == recorded


def test_run_drl_with_trained_checkpoint(tmp_path):
    cmd_train(RunConfig(seed=0), str(tmp_path / "train"), episodes=1, progress=False)
    cfg = RunConfig(mode=Mode.CHO_DRL, scenario=ScenarioOverrides(track_length=100.0))
    paths = cmd_run(cfg, str(tmp_path / "run"), checkpoint=str(tmp_path / "train" / CHECKPOINT_FILE))
    assert os.path.exists(paths["log"])
    with pytest.raises(MissingArtifactError):
        cmd_run(cfg, str(tmp_path / "run2"))
    with pytest.raises(ConfigError):
        cmd_run(RunConfig(mode=Mode.CHO_DRL_TRAINING), str(tmp_path / "run3"))


def test_replay_missing_log(tmp_path):
    with pytest.raises(MissingArtifactError):
        cmd_replay(str(tmp_path / "nothing.jsonl"))


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[rlf]\nn310 = 6\nt311 = 1\n", encoding="utf-8")
    assert main(["--quiet", "heatmap", "-c", str(bad), "-o", str(tmp_path)]) == EXIT_CONFIG


def test_cli_missing_checkpoint_exit_code(tmp_path):
    code = main(["--quiet", "sweep", "-p", "n310", "--values", "5", "--seeds", "1",
                 "--checkpoint", str(tmp_path / "none.ckpt"), "-o", str(tmp_path)])
    assert code == EXIT_ARTIFACT
    assert main(["--quiet", "replay", str(tmp_path / "none.jsonl")]) == EXIT_ARTIFACT


def test_cli_run_and_replay(tmp_path):
    ini = tmp_path / "short.ini"
    ini.write_text("[scenario]\ntrack_length = 100.0\n", encoding="utf-8")
    out = tmp_path / "out"
    assert main(["--quiet", "run", "-c", str(ini), "-s", "3", "-m", "greedy", "-o", str(out)]) == EXIT_OK
    log = out / EPISODE_LOG_FILE
    assert log.exists()
    assert main(["--quiet", "replay", str(log), "-o", str(tmp_path / "m.csv")]) == EXIT_OK
    assert _read_csv(str(tmp_path / "m.csv"))[0] == _read_csv(str(out / "metrics.csv"))[0]
