"""Command-line entry points: run, simulate, replay, oracle.

Exit codes: 0 ok, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .config import load_config_file, validate_config
from .errors import ConfigParseError, EngineError, SchemaError
from .oracle import oracle_resample_file
from .sim import parse_scenario_file, replay as replay_trace, run_scenario
from .types import EngineConfig

CONFIG_EXIT = 2
RUNTIME_EXIT = 3


def _load_validated(config_path: str) -> EngineConfig:
    try:
        config = load_config_file(config_path)
    except (ConfigParseError, SchemaError, OSError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(CONFIG_EXIT)
    violations = validate_config(config)
    if violations:
        for violation in violations:
            click.echo(f"config error: {violation}", err=True)
        sys.exit(CONFIG_EXIT)
    return config


@click.group()
def main() -> None:
    """Edge telemetry stream-processing engine."""


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--http-port", default=8080, show_default=True)
@click.option("--out", "out_dir", default="run_out", show_default=True,
              help="Directory for transition/decision/late-event logs.")
def run(config_path: str, http_port: int, out_dir: str) -> None:
    """Run the live engine with the HTTP ingest/status endpoints."""
    import uvicorn

    from .server import Engine, create_app

    config = _load_validated(config_path)
    engine = Engine(config, out_dir)
    engine.start()
    try:
        uvicorn.run(create_app(engine), host="0.0.0.0", port=http_port,
                    log_level="warning")
    except Exception as e:
        click.echo(f"runtime failure: {e}", err=True)
        sys.exit(RUNTIME_EXIT)
    finally:
        engine.stop()


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=None, type=int,
              help="Override the scenario's seed.")
@click.option("--logical-clock", is_flag=True, default=False,
              help="Force deterministic logical time.")
def simulate(config_path: str, scenario_path: str, out_dir: str,
             seed: int | None, logical_clock: bool) -> None:
    """Run a synthetic scenario and write all artifacts to --out."""
    config = _load_validated(config_path)
    try:
        scenario = parse_scenario_file(scenario_path, seed_override=seed,
                                       force_logical=logical_clock)
    except SchemaError as e:
        click.echo(f"scenario error: {e}", err=True)
        sys.exit(CONFIG_EXIT)
    try:
        artifacts = run_scenario(config, scenario, out_dir)
    except SchemaError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(CONFIG_EXIT)
    except (EngineError, OSError) as e:
        click.echo(f"runtime failure: {e}", err=True)
        sys.exit(RUNTIME_EXIT)
    click.echo(f"wrote artifacts to {artifacts.out_dir}")


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--trace", "trace_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def replay(config_path: str, trace_path: str, out_dir: str) -> None:
    """Feed a recorded trace back through the full pipeline."""
    config = _load_validated(config_path)
    try:
        artifacts = replay_trace(config, trace_path, out_dir)
    except (EngineError, OSError) as e:
        click.echo(f"runtime failure: {e}", err=True)
        sys.exit(RUNTIME_EXIT)
    click.echo(f"wrote artifacts to {artifacts.out_dir}")


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--trace", "trace_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def oracle(config_path: str, trace_path: str, out_dir: str) -> None:
    """Recompute frames from a trace with the offline brute-force resampler."""
    config = _load_validated(config_path)
    try:
        frames_path = oracle_resample_file(config, trace_path, out_dir)
    except (EngineError, OSError) as e:
        click.echo(f"runtime failure: {e}", err=True)
        sys.exit(RUNTIME_EXIT)
    click.echo(f"wrote {frames_path}")


if __name__ == "__main__":
    main()
