"""Receivers, translators, and per-environment routing.

Each raw payload is standardized by its source's translator and fanned out
to every subscribed environment's bounded queue. Queues reject on full
(the newest item is dropped and counted); receivers never block.
"""

from __future__ import annotations

import json
import math
import queue
import threading
import time
from dataclasses import dataclass, replace
from typing import Any, Callable

from .egress import Metrics
from .errors import (
    FieldMissing,
    NonFiniteValue,
    PayloadParseError,
    TimestampInvalid,
    TranslateError,
    UnknownEnvironment,
    UnknownSource,
)
from .types import (
    EngineConfig,
    Measurement,
    NS_PER_S,
    Quality,
    SourceSpec,
    TranslatorSpec,
)

DEFAULT_QUEUE_CAPACITY = 4096


@dataclass(frozen=True)
class RawEvent:
    source_id: str
    arrival_time: int  # receiver clock, ns
    payload: bytes
    protocol: str = "sim"  # sim | http | mqtt


def _walk_path(doc: Any, path: str) -> Any:
    node = doc
    for part in path.strip("/").split("/"):
        if not isinstance(node, dict) or part not in node:
            raise FieldMissing(path)
        node = node[part]
    return node


def translate(event: RawEvent, spec: TranslatorSpec, origin_ns: int = 0) -> Measurement:
    """Extract, convert, and standardize one payload.

    value = raw * scale + offset; event time comes from timestamp_path when
    configured, otherwise the arrival time.
    """
    try:
        doc = json.loads(event.payload)
    except (ValueError, UnicodeDecodeError) as e:
        raise PayloadParseError(str(e)) from None
    raw = _walk_path(doc, spec.value_path)
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise NonFiniteValue(f"value at {spec.value_path!r} is not numeric: {raw!r}")
    value = raw * spec.scale + spec.offset
    if not math.isfinite(value):
        raise NonFiniteValue(f"value at {spec.value_path!r} is not finite")
    if spec.timestamp_path is None:
        event_time = event.arrival_time
    else:
        ts = _walk_path(doc, spec.timestamp_path)
        if isinstance(ts, bool) or not isinstance(ts, (int, float)):
            raise TimestampInvalid(f"timestamp at {spec.timestamp_path!r} is not numeric")
        if isinstance(ts, int):
            event_time = ts * (NS_PER_S if spec.timestamp_unit == "s" else 1_000_000)
        else:
            event_time = int(round(ts * (1e9 if spec.timestamp_unit == "s" else 1e6)))
    if event_time < origin_ns:
        raise TimestampInvalid(
            f"event time {event_time} precedes the epoch origin {origin_ns}")
    return Measurement(
        environment_id="",  # assigned per subscription by the router
        signal_id=spec.signal_id,
        event_time=event_time,
        value=value,
        unit=spec.unit,
        quality=Quality.MEASURED,
        source_id=event.source_id,
    )


class EnvQueue:
    """Bounded multi-producer FIFO for one environment's measurements."""

    def __init__(self, environment_id: str, capacity: int = DEFAULT_QUEUE_CAPACITY):
        self.environment_id = environment_id
        self.capacity = capacity
        self.dropped = 0
        self._q: queue.Queue[Measurement] = queue.Queue(maxsize=capacity)
        self._drop_lock = threading.Lock()

    def offer(self, m: Measurement) -> bool:
        """Non-blocking enqueue; drops the offered item when full."""
        assert m.environment_id == self.environment_id
        try:
            self._q.put_nowait(m)
            return True
        except queue.Full:
            with self._drop_lock:
                self.dropped += 1
            return False

    def get(self, timeout: float | None = None) -> Measurement | None:
        try:
            return self._q.get(timeout=timeout) if timeout else self._q.get_nowait()
        except queue.Empty:
            return None

    def drain(self) -> list[Measurement]:
        out = []
        while True:
            item = self.get()
            if item is None:
                return out
            out.append(item)

    def __len__(self) -> int:
        return self._q.qsize()


class Router:
    """Translate + fan-out stage shared by every receiver."""

    def __init__(self, config: EngineConfig, queues: dict[str, EnvQueue],
                 metrics: Metrics):
        self.config = config
        self.queues = queues
        self.metrics = metrics
        self._sources = {s.source_id: s for s in config.sources}
        # translators reject timestamps no subscribed environment could window
        self._origins = {
            s.source_id: min(config.environment(e).epoch_origin_ns
                             for e in s.environments)
            for s in config.sources
        }
        for source in config.sources:
            for env_id in source.environments:
                if env_id not in queues:
                    raise UnknownEnvironment(env_id)

    def source(self, source_id: str) -> SourceSpec:
        spec = self._sources.get(source_id)
        if spec is None:
            raise UnknownSource(source_id)
        return spec

    def route(self, m: Measurement, spec: SourceSpec) -> list[tuple[str, bool]]:
        """Offer one copy per subscribed environment; returns outcomes."""
        outcomes = []
        for env_id in spec.environments:
            accepted = self.queues[env_id].offer(replace(m, environment_id=env_id))
            self.metrics.inc("enqueued" if accepted else "dropped_full")
            outcomes.append((env_id, accepted))
        return outcomes

    def ingest(self, source_id: str, payload: bytes,
               arrival_ns: int, protocol: str = "http") -> list[tuple[str, bool]]:
        """Full receive path: count, translate, route. Raises UnknownSource
        or a TranslateError; translate failures are counted."""
        spec = self.source(source_id)
        self.metrics.inc("events_received")
        event = RawEvent(source_id=source_id, arrival_time=arrival_ns,
                         payload=payload, protocol=protocol)
        try:
            m = translate(event, spec.translator, self._origins[source_id])
        except TranslateError:
            self.metrics.inc("translate_errors")
            raise
        self.metrics.inc("events_translated")
        return self.route(m, spec)


def reconnect_backoff_s(attempt: int, base_s: float = 1.0, cap_s: float = 60.0) -> float:
    """Exponential backoff schedule for receiver reconnects: 1, 2, 4, ... 60."""
    return min(cap_s, base_s * (2 ** attempt))


class MqttClientProtocol:
    """Minimal client surface the receiver depends on (paho-compatible)."""

    on_connect: Callable | None
    on_message: Callable | None
    on_disconnect: Callable | None

    def connect(self, host: str, port: int) -> None: ...
    def subscribe(self, topic: str, qos: int) -> None: ...
    def loop_start(self) -> None: ...
    def loop_stop(self) -> None: ...
    def disconnect(self) -> None: ...


def _paho_client_factory() -> MqttClientProtocol:
    try:
        import paho.mqtt.client as mqtt
    except ImportError:
        raise RuntimeError(
            "mqtt sources require the paho-mqtt extra (pip install edgeflow[mqtt])"
        ) from None
    return mqtt.Client()


class MqttReceiver:
    """Subscribes to one source's topic (QoS 1) and feeds the router.

    Connection loss triggers exponential-backoff reconnects; translate
    errors are counted and the message discarded.
    """

    def __init__(self, spec: SourceSpec, router: Router, metrics: Metrics,
                 client_factory: Callable[[], MqttClientProtocol] | None = None,
                 clock_ns: Callable[[], int] = time.time_ns,
                 sleep: Callable[[float], None] = time.sleep):
        self.spec = spec
        self.router = router
        self.metrics = metrics
        self._client_factory = client_factory or _paho_client_factory
        self._clock_ns = clock_ns
        self._sleep = sleep
        self._client: MqttClientProtocol | None = None
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.reconnects = 0
        metrics.set_source_status(spec.source_id, "disconnected")

    @property
    def topic(self) -> str:
        return self.spec.connection.get("topic", self.spec.source_id)

    def handle_message(self, topic: str, payload: bytes) -> None:
        """Translate + route one published message; mirrors the HTTP path."""
        if topic != self.topic:
            return
        try:
            self.router.ingest(self.spec.source_id, payload,
                               self._clock_ns(), protocol="mqtt")
        except TranslateError:
            pass  # counted by the router; message discarded

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name=f"mqtt-{self.spec.source_id}")
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._client is not None:
            try:
                self._client.loop_stop()
                self._client.disconnect()
            except Exception:
                pass
        if self._thread is not None:
            self._thread.join(timeout=5)

    def _run(self) -> None:
        attempt = 0
        host = self.spec.connection.get("host", "localhost")
        port = int(self.spec.connection.get("port", "1883"))
        while not self._stop.is_set():
            try:
                client = self._client_factory()
                client.on_message = lambda _c, _u, msg: self.handle_message(
                    msg.topic, msg.payload)
                client.on_disconnect = lambda *_: self.metrics.set_source_status(
                    self.spec.source_id, "disconnected")
                client.connect(host, port)
                client.subscribe(self.topic, qos=1)
                self._client = client
                self.metrics.set_source_status(self.spec.source_id, "connected")
                attempt = 0
                client.loop_start()
                while not self._stop.is_set():
                    self._sleep(0.2)
                return
            except Exception:
                self.metrics.set_source_status(self.spec.source_id, "disconnected")
                self.metrics.inc("source_reconnects")
                self.reconnects += 1
                self._sleep(reconnect_backoff_s(attempt))
                attempt += 1
