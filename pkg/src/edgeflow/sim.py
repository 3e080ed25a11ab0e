"""Deterministic scenario simulator and trace replay.

With the logical clock, a whole run is a pure function of
(config, scenario, seed): synthetic multi-rate sources emit in timestamp
order interleaved with window-close events, and every artifact
(frames, transitions, decisions, late events, metrics, trace) is
byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .config import _float, _int, _list, _obj, _reject_unknown, _str, _take, validate_config
from .errors import SchemaError, TraceFormatError, TranslateError
from .inference import ModelClient
from .pipeline import Pipelines
from .types import EngineConfig, NS_PER_S, SourceSpec, seconds_to_ns


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str  # constant | sine | random_walk
    value: float = 0.0
    amplitude: float = 0.0
    period_s: float = 1.0
    offset: float = 0.0
    step_sigma: float = 0.0
    start: float = 0.0


@dataclass(frozen=True)
class ScenarioSource:
    source_id: str
    signal_id: str
    period_s: float
    generator: GeneratorSpec
    jitter_s: float = 0.0
    dropout_p: float = 0.0
    spike_p: float = 0.0
    spike_magnitude: float = 0.0


@dataclass(frozen=True)
class Scenario:
    duration_s: float
    seed: int
    sources: tuple[ScenarioSource, ...]
    logical_clock: bool = True


@dataclass(frozen=True)
class TraceEvent:
    source_id: str
    event_time: int  # ns, absolute
    value: float  # raw, pre-translation


@dataclass(frozen=True)
class RawTrace:
    """Everything a source run emitted, plus the suppressed schedule."""

    seed: int
    duration_s: float
    origin_ns: int
    events: tuple[TraceEvent, ...]
    suppressed: tuple[tuple[str, int], ...]  # (source_id, event_time)


@dataclass(frozen=True)
class RunArtifacts:
    out_dir: Path
    frames_path: Path
    decisions_path: Path
    late_events_path: Path
    metrics_path: Path
    trace_path: Path | None
    transition_paths: tuple[Path, ...]
    metrics: dict[str, Any]


def _parse_generator(raw: Any, path: str) -> GeneratorSpec:
    obj = _obj(raw, path)
    kind = _str(_take(obj, path, "kind"), f"{path}.kind")
    if kind == "constant":
        _reject_unknown(obj, path, {"kind", "value"})
        return GeneratorSpec(kind=kind, value=_float(_take(obj, path, "value"), f"{path}.value"))
    if kind == "sine":
        _reject_unknown(obj, path, {"kind", "amplitude", "period_s", "offset"})
        period = _float(_take(obj, path, "period_s"), f"{path}.period_s")
        if period <= 0:
            raise SchemaError(f"{path}.period_s", "must be positive")
        return GeneratorSpec(
            kind=kind,
            amplitude=_float(_take(obj, path, "amplitude"), f"{path}.amplitude"),
            period_s=period,
            offset=_float(_take(obj, path, "offset", 0.0), f"{path}.offset"),
        )
    if kind == "random_walk":
        _reject_unknown(obj, path, {"kind", "step_sigma", "start"})
        return GeneratorSpec(
            kind=kind,
            step_sigma=_float(_take(obj, path, "step_sigma"), f"{path}.step_sigma"),
            start=_float(_take(obj, path, "start", 0.0), f"{path}.start"),
        )
    raise SchemaError(f"{path}.kind", "must be one of constant, sine, random_walk")


def parse_scenario(text: str, seed_override: int | None = None,
                   force_logical: bool = False) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError("scenario", f"not valid JSON: {e.msg}") from None
    obj = _obj(doc, "scenario")
    _reject_unknown(obj, "scenario", {"duration_s", "seed", "logical_clock", "sources"})
    duration = _float(_take(obj, "scenario", "duration_s"), "scenario.duration_s")
    if duration <= 0:
        raise SchemaError("scenario.duration_s", "must be positive")
    sources = []
    for i, raw in enumerate(_list(_take(obj, "scenario", "sources"), "scenario.sources")):
        path = f"scenario.sources[{i}]"
        sobj = _obj(raw, path)
        _reject_unknown(sobj, path, {
            "source_id", "signal_id", "period_s", "jitter_s", "dropout_p",
            "spike_p", "spike_magnitude", "generator",
        })
        period = _float(_take(sobj, path, "period_s"), f"{path}.period_s")
        if period <= 0:
            raise SchemaError(f"{path}.period_s", "must be positive")
        jitter = _float(_take(sobj, path, "jitter_s", 0.0), f"{path}.jitter_s")
        if jitter < 0:
            raise SchemaError(f"{path}.jitter_s", "must be non-negative")
        if jitter >= period:
            # strict per-source timestamp monotonicity requires jitter < period
            raise SchemaError(f"{path}.jitter_s", "must be smaller than period_s")
        dropout = _float(_take(sobj, path, "dropout_p", 0.0), f"{path}.dropout_p")
        spike_p = _float(_take(sobj, path, "spike_p", 0.0), f"{path}.spike_p")
        for name, p in (("dropout_p", dropout), ("spike_p", spike_p)):
            if not 0.0 <= p <= 1.0:
                raise SchemaError(f"{path}.{name}", "must be within [0, 1]")
        sources.append(ScenarioSource(
            source_id=_str(_take(sobj, path, "source_id"), f"{path}.source_id"),
            signal_id=_str(_take(sobj, path, "signal_id"), f"{path}.signal_id"),
            period_s=period,
            jitter_s=jitter,
            dropout_p=dropout,
            spike_p=spike_p,
            spike_magnitude=_float(_take(sobj, path, "spike_magnitude", 0.0),
                                   f"{path}.spike_magnitude"),
            generator=_parse_generator(_take(sobj, path, "generator"), f"{path}.generator"),
        ))
    seed = _int(_take(obj, "scenario", "seed", 0), "scenario.seed")
    if seed_override is not None:
        seed = seed_override
    logical = bool(_take(obj, "scenario", "logical_clock", True))
    if force_logical:
        logical = True
    return Scenario(duration_s=duration, seed=seed,
                    sources=tuple(sources), logical_clock=logical)


def parse_scenario_file(path: str | Path, seed_override: int | None = None,
                        force_logical: bool = False) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding="utf-8"),
                          seed_override, force_logical)


def derive_source_seed(seed: int, source_id: str) -> int:
    """Stable per-source seed so adding a source never perturbs the others."""
    digest = hashlib.sha256(f"{seed}:{source_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _validate_scenario_against_config(scenario: Scenario, config: EngineConfig) -> None:
    for i, src in enumerate(scenario.sources):
        path = f"scenario.sources[{i}]"
        try:
            spec = config.source(src.source_id)
        except KeyError:
            raise SchemaError(f"{path}.source_id",
                              f"source {src.source_id!r} is not configured") from None
        if spec.kind != "sim":
            raise SchemaError(f"{path}.source_id",
                              f"source {src.source_id!r} is not a sim source")
        if spec.translator.timestamp_path is not None:
            raise SchemaError(f"{path}.source_id",
                              "sim sources must use arrival time (no timestamp_path)")
        if spec.translator.signal_id != src.signal_id:
            raise SchemaError(
                f"{path}.signal_id",
                f"scenario says {src.signal_id!r} but the source translator "
                f"produces {spec.translator.signal_id!r}")


def generate_trace(scenario: Scenario, config: EngineConfig) -> RawTrace:
    """Seeded emission schedule for every source, merged in timestamp order.

    Per scheduled tick the generator always draws jitter, walk step, dropout,
    and spike uniforms in a fixed order, so changing one probability never
    shifts the rest of the stream.
    """
    origin_ns = min(env.epoch_origin_ns for env in config.environments)
    events: list[tuple[int, int, TraceEvent]] = []  # (t, source_idx, event)
    suppressed: list[tuple[int, int, str]] = []
    for idx, src in enumerate(scenario.sources):
        rng = random.Random(derive_source_seed(scenario.seed, src.source_id))
        gen = src.generator
        walk_state = gen.start
        k = 0
        while k * src.period_s < scenario.duration_s:
            scheduled_s = k * src.period_s
            jitter = rng.uniform(0.0, src.jitter_s) if src.jitter_s > 0 else 0.0
            t_s = scheduled_s + jitter
            if gen.kind == "random_walk":
                walk_state += rng.gauss(0.0, gen.step_sigma)
            u_drop = rng.random()
            u_spike = rng.random()
            if gen.kind == "constant":
                value = gen.value
            elif gen.kind == "sine":
                value = gen.amplitude * math.sin(2.0 * math.pi * t_s / gen.period_s) \
                    + gen.offset
            else:
                value = walk_state
            t_ns = origin_ns + seconds_to_ns(t_s)
            if t_s >= scenario.duration_s or u_drop < src.dropout_p:
                suppressed.append((t_ns, idx, src.source_id))
            else:
                if u_spike < src.spike_p:
                    value = value + src.spike_magnitude
                events.append((t_ns, idx, TraceEvent(src.source_id, t_ns, value)))
            k += 1
    events.sort(key=lambda e: (e[0], e[1]))
    suppressed.sort(key=lambda e: (e[0], e[1]))
    return RawTrace(
        seed=scenario.seed,
        duration_s=scenario.duration_s,
        origin_ns=origin_ns,
        events=tuple(e for _, _, e in events),
        suppressed=tuple((s, t) for t, _, s in suppressed),
    )


def write_trace(trace: RawTrace, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "kind": "header", "version": 1, "seed": trace.seed,
            "duration_s": trace.duration_s, "origin_ns": trace.origin_ns,
        }, sort_keys=True) + "\n")
        suppressed = list(trace.suppressed)
        events = list(trace.events)
        si = 0
        for event in events:
            while si < len(suppressed) and suppressed[si][1] <= event.event_time:
                fh.write(_suppressed_line(suppressed[si]))
                si += 1
            fh.write(json.dumps({
                "kind": "event", "source": event.source_id,
                "t": event.event_time, "value": event.value,
            }, sort_keys=True) + "\n")
        while si < len(suppressed):
            fh.write(_suppressed_line(suppressed[si]))
            si += 1


def _suppressed_line(item: tuple[str, int]) -> str:
    source_id, t = item
    return json.dumps({"kind": "suppressed", "source": source_id, "t": t},
                      sort_keys=True) + "\n"


def read_trace(path: str | Path) -> RawTrace:
    events: list[TraceEvent] = []
    suppressed: list[tuple[str, int]] = []
    header: dict | None = None
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise TraceFormatError(str(e)) from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except ValueError:
            raise TraceFormatError("not valid JSON", line=lineno) from None
        if not isinstance(record, dict) or "kind" not in record:
            raise TraceFormatError("record has no kind", line=lineno)
        kind = record["kind"]
        if kind == "header":
            if lineno != 1:
                raise TraceFormatError("header must be the first line", line=lineno)
            header = record
        elif kind == "event":
            try:
                events.append(TraceEvent(record["source"], int(record["t"]),
                                         float(record["value"])))
            except (KeyError, TypeError, ValueError):
                raise TraceFormatError("malformed event record", line=lineno) from None
        elif kind == "suppressed":
            try:
                suppressed.append((record["source"], int(record["t"])))
            except (KeyError, TypeError, ValueError):
                raise TraceFormatError("malformed suppressed record", line=lineno) from None
        else:
            raise TraceFormatError(f"unknown record kind {kind!r}", line=lineno)
    if header is None:
        raise TraceFormatError("missing header line", line=1)
    try:
        return RawTrace(
            seed=int(header["seed"]),
            duration_s=float(header["duration_s"]),
            origin_ns=int(header["origin_ns"]),
            events=tuple(events),
            suppressed=tuple(suppressed),
        )
    except (KeyError, TypeError, ValueError):
        raise TraceFormatError("malformed header", line=1) from None


def payload_for(source: SourceSpec, value: float) -> bytes:
    """Build the JSON payload a sim source emits, shaped by its translator's
    value_path so the regular translate path applies."""
    parts = source.translator.value_path.strip("/").split("/")
    doc: Any = value
    for part in reversed(parts):
        doc = {part: doc}
    return json.dumps(doc, sort_keys=True).encode()


def close_schedule(config: EngineConfig, duration_s: float) -> list[tuple[int, int, int]]:
    """(close_time, env_index, window_index) for every window that overlaps
    [origin, origin + duration), sorted the same way the event loop fires."""
    out = []
    for env_idx, env in enumerate(config.environments):
        n_windows = max(1, math.ceil(seconds_to_ns(duration_s) / env.window_ns))
        for k in range(n_windows):
            close_t = env.epoch_origin_ns + (k + 1) * env.window_ns + env.grace_ns
            out.append((close_t, env_idx, k))
    out.sort()
    return out


def _require_valid(config: EngineConfig) -> None:
    violations = validate_config(config)
    if violations:
        first = violations[0]
        raise SchemaError(first.path, first.message)


def drive(config: EngineConfig, pipelines: Pipelines, trace: RawTrace) -> None:
    """Logical-clock event loop: emissions and window closes interleaved in
    timestamp order; at equal timestamps emissions fire first."""
    closes = close_schedule(config, trace.duration_s)
    sources = {s.source_id: s for s in config.sources}
    pipelines.start(at_ns_by_env={
        env.environment_id: env.epoch_origin_ns for env in config.environments})
    ci = 0
    for event in trace.events:
        while ci < len(closes) and closes[ci][0] < event.event_time:
            close_t, env_idx, _k = closes[ci]
            env_id = config.environments[env_idx].environment_id
            pipelines.runtimes[env_id].drain()
            pipelines.runtimes[env_id].advance_to(close_t)
            ci += 1
        try:
            pipelines.router.ingest(event.source_id, payload_for(
                sources[event.source_id], event.value), event.event_time,
                protocol="sim")
        except TranslateError:
            continue  # counted by the router
        pipelines.drain_for_source(event.source_id)
    while ci < len(closes):
        close_t, env_idx, _k = closes[ci]
        env_id = config.environments[env_idx].environment_id
        pipelines.runtimes[env_id].drain()
        pipelines.runtimes[env_id].advance_to(close_t)
        ci += 1
    pipelines.flush_all()


def run_scenario(config: EngineConfig, scenario: Scenario,
                 out_dir: str | Path,
                 model_clients: dict[str, ModelClient] | None = None) -> RunArtifacts:
    """Simulate the scenario end to end and write all run artifacts."""
    _require_valid(config)
    _validate_scenario_against_config(scenario, config)
    out = Path(out_dir)
    trace = generate_trace(scenario, config)
    write_trace(trace, out / "trace.jsonl")
    if scenario.logical_clock:
        pipelines = Pipelines(config, out, model_clients=model_clients)
        drive(config, pipelines, trace)
    else:
        pipelines = _run_paced(config, trace, out, model_clients)
    snapshot = pipelines.metrics.snapshot()
    assert snapshot["events_received"] == \
        snapshot["events_translated"] + snapshot["translate_errors"], \
        "ingest conservation identity violated"
    metrics_path = pipelines.write_metrics()
    pipelines.close()
    return _artifacts(config, out, metrics_path, trace_path=out / "trace.jsonl",
                      metrics=pipelines.metrics.snapshot())


def replay(config: EngineConfig, trace_path: str | Path,
           out_dir: str | Path,
           model_clients: dict[str, ModelClient] | None = None) -> RunArtifacts:
    """Feed a recorded trace back through the full pipeline; artifacts must
    match the original run's byte for byte."""
    _require_valid(config)
    trace = read_trace(trace_path)
    out = Path(out_dir)
    pipelines = Pipelines(config, out, model_clients=model_clients)
    drive(config, pipelines, trace)
    metrics_path = pipelines.write_metrics()
    pipelines.close()
    return _artifacts(config, out, metrics_path, trace_path=None,
                      metrics=pipelines.metrics.snapshot())


def _run_paced(config: EngineConfig, trace: RawTrace, out: Path,
               model_clients: dict[str, ModelClient] | None) -> Pipelines:
    """Wall-clock playback for logical_clock=false: emissions are paced by
    their offsets and windows close on real time."""
    pipelines = Pipelines(config, out, model_clients=model_clients)
    start_ns = time.time_ns()
    shift = start_ns - trace.origin_ns
    pipelines.start(default_ns=start_ns)
    sources = {s.source_id: s for s in config.sources}
    for event in trace.events:
        target = event.event_time + shift
        delay = (target - time.time_ns()) / NS_PER_S
        if delay > 0:
            time.sleep(delay)
        now = time.time_ns()
        try:
            pipelines.router.ingest(event.source_id, payload_for(
                sources[event.source_id], event.value), now, protocol="sim")
        except TranslateError:
            continue
        pipelines.drain_for_source(event.source_id)
        for runtime in pipelines.runtimes.values():
            runtime.advance_to(now)
    # run out the scenario clock plus one window+grace so the last
    # data-bearing window crosses its watermark before shutdown
    trailing = max(env.window_ns + env.grace_ns for env in config.environments)
    last_offset = (trace.events[-1].event_time - trace.origin_ns
                   if trace.events else 0)
    end = time.time_ns() + seconds_to_ns(trace.duration_s) - last_offset + trailing
    while time.time_ns() < end:
        time.sleep(0.02)
        for runtime in pipelines.runtimes.values():
            runtime.advance_to(time.time_ns())
    pipelines.flush_all()
    return pipelines


def _artifacts(config: EngineConfig, out: Path, metrics_path: Path,
               trace_path: Path | None, metrics: dict[str, Any]) -> RunArtifacts:
    transition_paths = []
    for env in config.environments:
        p = Path(env.store.path)
        if not p.is_absolute():
            p = out / p
        if p not in transition_paths:
            transition_paths.append(p)
    return RunArtifacts(
        out_dir=out,
        frames_path=out / "frames.jsonl",
        decisions_path=out / "decisions.jsonl",
        late_events_path=out / "late_events.jsonl",
        metrics_path=metrics_path,
        trace_path=trace_path,
        transition_paths=tuple(transition_paths),
        metrics=metrics,
    )
