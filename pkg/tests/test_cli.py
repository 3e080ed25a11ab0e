import json
from pathlib import Path

from click.testing import CliRunner

from edgeflow.cli import main

from builders import (
    config_doc,
    environment,
    model,
    scenario_doc,
    signal,
    sim_scenario_source,
    sim_source,
)


def _write_inputs(tmp_path: Path) -> tuple[Path, Path]:
    config = config_doc(
        [environment("env-a", signals=[
            signal("fast", aggregation="mean", max_staleness_s=3600),
            signal("slow", max_staleness_s=3600)],
            model=model(["fast", "slow"]),
            forwarders=[{"id": "log1", "kind": "log", "action_field": "power"}])],
        [sim_source("fast-src", "fast", ["env-a"]),
         sim_source("slow-src", "slow", ["env-a"])])
    scenario = scenario_doc(7200, [
        sim_scenario_source("fast-src", "fast", 300),
        sim_scenario_source("slow-src", "slow", 3600),
    ])
    config_path = tmp_path / "config.json"
    scenario_path = tmp_path / "scenario.json"
    config_path.write_text(json.dumps(config, indent=2))
    scenario_path.write_text(json.dumps(scenario, indent=2))
    return config_path, scenario_path


class TestSimulateCommand:
    def test_runs_and_writes_artifacts(self, tmp_path):
        config_path, scenario_path = _write_inputs(tmp_path)
        out = tmp_path / "out"
        result = CliRunner().invoke(main, [
            "simulate", "--config", str(config_path), "--scenario",
            str(scenario_path), "--out", str(out), "--seed", "42",
            "--logical-clock"])
        assert result.exit_code == 0, result.output
        for name in ("frames.jsonl", "transitions.jsonl", "decisions.jsonl",
                     "late_events.jsonl", "metrics.json", "trace.jsonl"):
            assert (out / name).exists(), name

    def test_seed_flag_overrides_scenario(self, tmp_path):
        config_path, scenario_path = _write_inputs(tmp_path)
        runner = CliRunner()
        r1 = runner.invoke(main, ["simulate", "--config", str(config_path),
                                  "--scenario", str(scenario_path),
                                  "--out", str(tmp_path / "a"), "--seed", "7"])
        r2 = runner.invoke(main, ["simulate", "--config", str(config_path),
                                  "--scenario", str(scenario_path),
                                  "--out", str(tmp_path / "b"), "--seed", "7"])
        assert r1.exit_code == r2.exit_code == 0
        assert (tmp_path / "a" / "frames.jsonl").read_bytes() == \
            (tmp_path / "b" / "frames.jsonl").read_bytes()

    def test_config_error_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"environments": []}')
        _, scenario_path = _write_inputs(tmp_path)
        result = CliRunner().invoke(main, [
            "simulate", "--config", str(bad), "--scenario", str(scenario_path),
            "--out", str(tmp_path / "out")])
        assert result.exit_code == 2

    def test_validation_violation_exit_2(self, tmp_path):
        config = config_doc([environment("env-a", model=model(["ghost"]))])
        path = tmp_path / "invalid.json"
        path.write_text(json.dumps(config))
        _, scenario_path = _write_inputs(tmp_path)
        result = CliRunner().invoke(main, [
            "simulate", "--config", str(path), "--scenario", str(scenario_path),
            "--out", str(tmp_path / "out")])
        assert result.exit_code == 2
        combined = result.output + getattr(result, "stderr", "")
        assert "ghost" in combined


class TestReplayAndOracleCommands:
    def test_replay_reproduces_frames(self, tmp_path):
        config_path, scenario_path = _write_inputs(tmp_path)
        runner = CliRunner()
        first = runner.invoke(main, ["simulate", "--config", str(config_path),
                                     "--scenario", str(scenario_path),
                                     "--out", str(tmp_path / "run"), "--seed", "1"])
        assert first.exit_code == 0, first.output
        result = runner.invoke(main, ["replay", "--config", str(config_path),
                                      "--trace", str(tmp_path / "run" / "trace.jsonl"),
                                      "--out", str(tmp_path / "replayed")])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "run" / "frames.jsonl").read_bytes() == \
            (tmp_path / "replayed" / "frames.jsonl").read_bytes()

    def test_oracle_matches_streaming_frames(self, tmp_path):
        config_path, scenario_path = _write_inputs(tmp_path)
        runner = CliRunner()
        runner.invoke(main, ["simulate", "--config", str(config_path),
                             "--scenario", str(scenario_path),
                             "--out", str(tmp_path / "run"), "--seed", "1"])
        result = runner.invoke(main, ["oracle", "--config", str(config_path),
                                      "--trace", str(tmp_path / "run" / "trace.jsonl"),
                                      "--out", str(tmp_path / "oracle")])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "run" / "frames.jsonl").read_bytes() == \
            (tmp_path / "oracle" / "frames.jsonl").read_bytes()

    def test_bad_trace_exit_3(self, tmp_path):
        config_path, _ = _write_inputs(tmp_path)
        trace = tmp_path / "trace.jsonl"
        trace.write_text("not json\n")
        result = CliRunner().invoke(main, [
            "replay", "--config", str(config_path), "--trace", str(trace),
            "--out", str(tmp_path / "out")])
        assert result.exit_code == 3
