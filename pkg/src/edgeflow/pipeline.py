"""Per-environment runtime wiring: queue -> window worker -> inference -> sinks.

One EnvRuntime owns everything mutable for its environment; environments
never share state apart from the process-wide metrics counters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .egress import Forwarder, JsonlAppender, Metrics, TransitionStore
from .inference import InferenceStage, ModelClient
from .ingest import EnvQueue, Router
from .types import EngineConfig, EnvironmentConfig, Measurement
from .window import CloseStats, WindowFrame, WindowWorker, assign_window


@dataclass
class RunSinks:
    """Shared output files for one engine run."""

    out_dir: Path
    frames: JsonlAppender
    decisions: JsonlAppender
    late_events: JsonlAppender
    stores: dict[str, TransitionStore]

    def close(self) -> None:
        self.frames.close()
        self.decisions.close()
        self.late_events.close()
        for store in self.stores.values():
            store.close()


def build_sinks(config: EngineConfig, out_dir: str | Path, metrics: Metrics,
                fresh: bool = True) -> RunSinks:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fresh:
        for name in ("frames.jsonl", "decisions.jsonl", "late_events.jsonl"):
            (out / name).unlink(missing_ok=True)
    stores: dict[str, TransitionStore] = {}
    for env in config.environments:
        path = Path(env.store.path)
        if not path.is_absolute():
            path = out / path
        key = str(path)
        if key not in stores:
            if fresh:
                path.unlink(missing_ok=True)
            stores[key] = TransitionStore(env.store, path, metrics)
    return RunSinks(
        out_dir=out,
        frames=JsonlAppender(out / "frames.jsonl"),
        decisions=JsonlAppender(out / "decisions.jsonl"),
        late_events=JsonlAppender(out / "late_events.jsonl"),
        stores=stores,
    )


class EnvRuntime:
    """Single-threaded consumer side of one environment."""

    def __init__(self, env: EnvironmentConfig, metrics: Metrics, sinks: RunSinks,
                 model_client: ModelClient | None = None,
                 forwarders: list[Forwarder] | None = None):
        self.env = env
        self.metrics = metrics
        self.sinks = sinks
        self.queue = EnvQueue(env.environment_id, env.queue_capacity)
        self.worker = WindowWorker(env, on_late=self._on_late)
        self.stage = InferenceStage(env, client=model_client)
        store_path = Path(env.store.path)
        if not store_path.is_absolute():
            store_path = sinks.out_dir / store_path
        self.store = sinks.stores[str(store_path)]
        if forwarders is None:
            forwarders = [Forwarder(spec, metrics, decisions_sink=sinks.decisions)
                          for spec in env.forwarders]
        self.forwarders = forwarders

    def start(self, at_ns: int) -> None:
        self.worker.start(at_ns)

    def drain(self) -> None:
        """Consume everything currently queued."""
        for m in self.queue.drain():
            self.worker.offer(m)

    def poll(self, timeout_s: float) -> None:
        """Blocking variant for live mode: wait briefly for one item."""
        m = self.queue.get(timeout=timeout_s)
        if m is not None:
            self.worker.offer(m)
            self.drain()

    def advance_to(self, watermark_ns: int) -> list[WindowFrame]:
        frames = []
        for frame, stats in self.worker.advance_to(watermark_ns):
            self._handle(frame, stats)
            frames.append(frame)
        return frames

    def flush(self) -> None:
        """Shutdown: emit the last pending transition with a null reward."""
        transition = self.stage.flush()
        if transition is not None:
            self.store.append(transition)

    def _on_late(self, m: Measurement, _open_start: int) -> None:
        # events older than this env's origin are clamped into window zero
        start, _ = assign_window(max(m.event_time, self.env.epoch_origin_ns),
                                 self.env.window_ns, self.env.epoch_origin_ns)
        self.metrics.inc("late_events")
        self.sinks.late_events.append({
            "env": m.environment_id,
            "signal": m.signal_id,
            "event_time": m.event_time,
            "window_start": start,
            "value": m.value,
        })

    def _handle(self, frame: WindowFrame, stats: CloseStats) -> None:
        self.sinks.frames.append(frame.to_wire())
        self.metrics.inc("frames_emitted")
        if frame.degraded:
            self.metrics.inc("frames_degraded")
        if stats.corrected:
            self.metrics.inc("anomalies_corrected", stats.corrected)
        for policy, count in stats.fills.items():
            self.metrics.inc_gap(policy, count)
        result = self.stage.step(frame)
        if result.reward_error:
            self.metrics.inc("reward_errors")
        if result.transition is not None:
            self.store.append(result.transition)
        if result.decision is not None:
            self.metrics.inc("decisions_emitted")
            if result.decision.fallback_used:
                self.metrics.inc("fallbacks_used")
            for forwarder in self.forwarders:
                forwarder.forward(result.decision)


class Pipelines:
    """All environments of one engine instance plus the shared router."""

    def __init__(self, config: EngineConfig, out_dir: str | Path,
                 metrics: Metrics | None = None,
                 model_clients: dict[str, ModelClient] | None = None,
                 fresh_sinks: bool = True):
        self.config = config
        self.metrics = metrics if metrics is not None else Metrics()
        self.sinks = build_sinks(config, out_dir, self.metrics, fresh=fresh_sinks)
        self.runtimes: dict[str, EnvRuntime] = {}
        for env in config.environments:
            client = (model_clients or {}).get(env.environment_id)
            self.runtimes[env.environment_id] = EnvRuntime(
                env, self.metrics, self.sinks, model_client=client)
        self.router = Router(config,
                             {e: r.queue for e, r in self.runtimes.items()},
                             self.metrics)

    def start(self, at_ns_by_env: dict[str, int] | None = None,
              default_ns: int | None = None) -> None:
        for env_id, runtime in self.runtimes.items():
            if at_ns_by_env and env_id in at_ns_by_env:
                runtime.start(at_ns_by_env[env_id])
            elif default_ns is not None:
                runtime.start(max(default_ns, runtime.env.epoch_origin_ns))

    def drain_for_source(self, source_id: str) -> None:
        for env_id in self.config.source(source_id).environments:
            self.runtimes[env_id].drain()

    def flush_all(self) -> None:
        for runtime in self.runtimes.values():
            runtime.flush()

    def write_metrics(self) -> Path:
        path = self.sinks.out_dir / "metrics.json"
        path.write_text(self.metrics.to_json(), encoding="utf-8")
        return path

    def close(self) -> None:
        self.sinks.close()
