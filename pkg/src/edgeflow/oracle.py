"""Offline brute-force resampler used to verify the streaming pipeline.

Recomputes every frame independently: events are partitioned per window by
full scans of the raw trace, and correction, aggregation, gap filling, and
fusion are reimplemented here with plain loops rather than the streaming
worker's incremental state. Both sides use the same arithmetic order, so
agreement is expected bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .sim import RawTrace, read_trace
from .types import EngineConfig, EnvironmentConfig, SignalSpec, seconds_to_ns


@dataclass
class _SigState:
    buffer: list[float] = field(default_factory=list)
    last_good: tuple[int, float] | None = None
    prev_good: tuple[int, float] | None = None
    history: list[tuple[int, float]] = field(default_factory=list)


def _median(values: list[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2 == 1:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def _aggregate(samples: list[tuple[int, float]], method: str) -> float:
    if method == "last":
        best_t, best_v = samples[0]
        for t, v in samples[1:]:
            if t >= best_t:
                best_t, best_v = t, v
        return best_v
    if method == "mean":
        total = 0.0
        for _, v in samples:
            total += v
        return total / len(samples)
    if method == "sum":
        total = 0.0
        for _, v in samples:
            total += v
        return total
    if method == "min":
        return min(v for _, v in samples)
    return max(v for _, v in samples)


def _fill(spec: SignalSpec, env: EnvironmentConfig, state: _SigState,
          start: int, window_ns: int) -> tuple[float, str] | None:
    """Gap value as (value, quality label), or None when unfillable."""
    def locf() -> tuple[float, str] | None:
        if state.last_good is None:
            return None
        t, v = state.last_good
        if start - t > seconds_to_ns(spec.max_staleness_s):
            return None
        return v, "carried"

    if spec.gap_fill == "fail":
        return None
    if spec.gap_fill == "locf":
        return locf()
    if spec.gap_fill == "linear":
        if state.last_good is None or state.prev_good is None:
            return locf()
        t0, v0 = state.prev_good
        t1, v1 = state.last_good
        midpoint = start + window_ns // 2
        value = v1 + (v1 - v0) * (float(midpoint - t1) / float(t1 - t0))
        if spec.bounds is not None:
            lo, hi = spec.bounds
            value = min(max(value, lo), hi)
        return value, "predicted"
    # historical_mean: scan the whole history for same-time-of-day slots
    day_ns = seconds_to_ns(env.day_seconds)
    midpoint_tod = (start + window_ns // 2 - env.epoch_origin_ns) % day_ns
    matched = []
    for t, v in state.history:
        tod = (t - env.epoch_origin_ns) % day_ns
        dist = abs(tod - midpoint_tod)
        if min(dist, day_ns - dist) <= window_ns // 2:
            matched.append(v)
    if matched:
        total = 0.0
        for v in matched:
            total += v
        return total / len(matched), "predicted"
    return locf()


def oracle_resample(config: EngineConfig, trace: RawTrace) -> list[dict]:
    """Frames (wire form) for every window of every environment."""
    # standardized per-environment event lists, in trace order
    env_events: dict[str, list[tuple[int, str, float]]] = {
        env.environment_id: [] for env in config.environments}
    sources = {s.source_id: s for s in config.sources}
    for event in trace.events:
        src = sources[event.source_id]
        tr = src.translator
        value = event.value * tr.scale + tr.offset
        if not math.isfinite(value):
            continue  # the streaming translator rejects these
        for env_id in src.environments:
            env_events[env_id].append((event.event_time, tr.signal_id, value))

    # one close entry per window, ordered exactly like the live event loop
    schedule: list[tuple[int, int, int]] = []
    for env_idx, env in enumerate(config.environments):
        n_windows = max(1, math.ceil(seconds_to_ns(trace.duration_s) / env.window_ns))
        for k in range(n_windows):
            schedule.append(
                (env.epoch_origin_ns + (k + 1) * env.window_ns + env.grace_ns,
                 env_idx, k))
    schedule.sort()

    states: dict[tuple[str, str], _SigState] = {}
    for env in config.environments:
        for spec in env.signals:
            states[(env.environment_id, spec.signal_id)] = _SigState()

    frames: list[dict] = []
    for _close_t, env_idx, k in schedule:
        env = config.environments[env_idx]
        start = env.epoch_origin_ns + k * env.window_ns
        end = start + env.window_ns
        horizon_ns = seconds_to_ns(env.history_days * env.day_seconds)
        events = env_events[env.environment_id]
        values: dict[str, float] = {}
        quals: dict[str, str] = {}
        unfillable: set[str] = set()
        for spec in env.signals:
            state = states[(env.environment_id, spec.signal_id)]
            samples = [(t, v, i) for i, (t, s, v) in enumerate(events)
                       if s == spec.signal_id and start <= t < end]
            samples.sort(key=lambda x: (x[0], x[2]))
            if samples:
                corrected = False
                accepted: list[tuple[int, float]] = []
                for t, v, _i in samples:
                    if spec.anomaly is not None and len(state.buffer) >= 5:
                        center = _median(state.buffer)
                        mad = _median([abs(b - center) for b in state.buffer])
                        z = abs(v - center) / (1.4826 * mad + 1e-9)
                        if z > spec.anomaly.z_threshold:
                            v = center
                            corrected = True
                    if spec.anomaly is not None:
                        state.buffer.append(v)
                        if len(state.buffer) > spec.anomaly.buffer_len:
                            state.buffer.pop(0)
                    accepted.append((t, v))
                values[spec.signal_id] = _aggregate(accepted, spec.aggregation)
                quals[spec.signal_id] = "corrected" if corrected else "measured"
                for t, v in accepted:
                    state.prev_good = state.last_good
                    state.last_good = (t, v)
                    state.history.append((t, v))
            else:
                filled = _fill(spec, env, state, start, env.window_ns)
                if filled is None:
                    values[spec.signal_id] = 0.0
                    quals[spec.signal_id] = "predicted"
                    unfillable.add(spec.signal_id)
                else:
                    values[spec.signal_id], quals[spec.signal_id] = filled
            state.history = [(t, v) for t, v in state.history if t >= end - horizon_ns]
        order = ["measured", "corrected", "carried", "predicted"]
        for dspec in env.derived:
            if any(member in unfillable for member, _ in dspec.members):
                values[dspec.signal_id] = 0.0
                quals[dspec.signal_id] = "predicted"
                unfillable.add(dspec.signal_id)
                continue
            weighted = 0.0
            total = 0.0
            worst = "measured"
            for member, weight in dspec.members:
                weighted += weight * values[member]
                total += weight
                if order.index(quals[member]) > order.index(worst):
                    worst = quals[member]
            values[dspec.signal_id] = weighted / total
            quals[dspec.signal_id] = worst
        ok = sum(1 for s in env.signals
                 if quals[s.signal_id] in ("measured", "corrected"))
        frames.append({
            "env": env.environment_id,
            "window_start": start,
            "window_end": end,
            "values": values,
            "qual": quals,
            "completeness": ok / len(env.signals),
            "degraded": bool(unfillable),
        })
    return frames


def oracle_resample_file(config: EngineConfig, trace_path: str | Path,
                         out_dir: str | Path) -> Path:
    """CLI entry: write the oracle's frames.jsonl next to the other artifacts."""
    trace = read_trace(trace_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames_path = out / "frames.jsonl"
    with open(frames_path, "w", encoding="utf-8") as fh:
        for frame in oracle_resample(config, trace):
            fh.write(json.dumps(frame, sort_keys=True) + "\n")
    return frames_path
