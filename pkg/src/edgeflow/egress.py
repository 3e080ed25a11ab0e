"""Delivery and persistence: forwarders, the transition store, and metrics.

Forwarding is fire-and-forget (one retry, then a counter); storage and
metrics are never on the control path.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from pathlib import Path
from typing import Any, Callable

import httpx

from .errors import StoreUnavailable
from .inference import Decision, Transition
from .types import ForwarderSpec, NS_PER_S, StoreSpec

GAP_POLICIES = ("historical_mean", "linear", "locf")

_COUNTERS = (
    "events_received",
    "events_translated",
    "translate_errors",
    "enqueued",
    "dropped_full",
    "late_events",
    "anomalies_corrected",
    "frames_emitted",
    "frames_degraded",
    "decisions_emitted",
    "fallbacks_used",
    "transitions_written",
    "forward_failures",
    "reward_errors",
    "store_errors",
    "source_reconnects",
)


class Metrics:
    """Monotonic pipeline counters plus per-source connection status."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counters = {name: 0 for name in _COUNTERS}
        self._gaps_filled = {policy: 0 for policy in GAP_POLICIES}
        self._sources: dict[str, str] = {}

    def inc(self, name: str, delta: int = 1) -> None:
        with self._lock:
            self._counters[name] += delta

    def inc_gap(self, policy: str, delta: int = 1) -> None:
        with self._lock:
            self._gaps_filled[policy] += delta

    def set_source_status(self, source_id: str, status: str) -> None:
        with self._lock:
            self._sources[source_id] = status

    def get(self, name: str) -> int:
        with self._lock:
            return self._counters[name]

    @property
    def gaps_filled_total(self) -> int:
        with self._lock:
            return sum(self._gaps_filled.values())

    def snapshot(self) -> dict[str, Any]:
        """Consistent point-in-time copy of every counter."""
        with self._lock:
            out: dict[str, Any] = dict(self._counters)
            out["gaps_filled"] = dict(self._gaps_filled)
            out["sources"] = dict(self._sources)
        return out

    def to_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True, indent=2) + "\n"


def anonymize_env_id(environment_id: str, salt: str) -> str:
    """Salted hash of the environment id, truncated to 64 bits, lowercase hex."""
    digest = hashlib.sha256(salt.encode() + b"\x00" + environment_id.encode())
    return digest.digest()[:8].hex()


def anonymize(t: Transition, salt: str) -> Transition:
    """Replace the environment id with its salted hash; nothing else changes."""
    return Transition(
        environment_id=anonymize_env_id(t.environment_id, salt),
        window_start=t.window_start,
        obs=t.obs,
        qual=t.qual,
        enc=t.enc,
        raw_action=t.raw_action,
        action=t.action,
        valid=t.valid,
        fallback_used=t.fallback_used,
        reward=t.reward,
        degraded=t.degraded,
    )


def _json_safe(value: Any) -> Any:
    """Hostile raw_action values may be non-finite floats; keep lines parseable."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def transition_to_wire(t: Transition) -> dict[str, Any]:
    return {
        "env": t.environment_id,
        "window_start": t.window_start,
        "obs": t.obs,
        "qual": t.qual,
        "enc": list(t.enc),
        "raw_action": _json_safe(t.raw_action),
        "action": t.action,
        "valid": t.valid,
        "fallback_used": t.fallback_used,
        "reward": t.reward,
        "degraded": t.degraded,
    }


class JsonlAppender:
    """Append-only JSON Lines sink; one flushed line per record, keys sorted."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: dict[str, Any]) -> None:
        line = json.dumps(record, sort_keys=True) + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()


class TransitionStore:
    """Append-only transition log, optionally anonymized."""

    def __init__(self, spec: StoreSpec, path: Path, metrics: Metrics):
        self.spec = spec
        self.metrics = metrics
        try:
            self._sink = JsonlAppender(path)
        except OSError as e:
            raise StoreUnavailable(str(e)) from None

    def append(self, t: Transition) -> None:
        if self.spec.anonymize:
            t = anonymize(t, self.spec.salt)
        try:
            self._sink.append(transition_to_wire(t))
        except (OSError, ValueError):
            self.metrics.inc("store_errors")
            return
        self.metrics.inc("transitions_written")

    def close(self) -> None:
        self._sink.close()


MqttPublish = Callable[[str, bytes], None]  # (topic, payload), raises on failure


class Forwarder:
    """Delivers one action field of each decision to one destination."""

    def __init__(self, spec: ForwarderSpec, metrics: Metrics,
                 decisions_sink: JsonlAppender | None = None,
                 http_client: httpx.Client | None = None,
                 mqtt_publish: MqttPublish | None = None,
                 retry_delay_s: float = 0.25):
        self.spec = spec
        self.metrics = metrics
        self.decisions_sink = decisions_sink
        self.retry_delay_s = retry_delay_s
        self._http = http_client
        self._mqtt_publish = mqtt_publish

    def forward(self, decision: Decision) -> bool:
        """At-most-once-plus-one-retry delivery; never raises upstream."""
        try:
            self._deliver(decision)
            return True
        except Exception:
            time.sleep(self.retry_delay_s)
            try:
                self._deliver(decision)
                return True
            except Exception:
                self.metrics.inc("forward_failures")
                return False

    def _deliver(self, decision: Decision) -> None:
        value = decision.action[self.spec.action_field]
        if self.spec.kind == "log":
            assert self.decisions_sink is not None
            self.decisions_sink.append({
                "env": decision.environment_id,
                "window_start": decision.window_start,
                "forwarder": self.spec.id,
                "field": self.spec.action_field,
                "value": value,
                "valid": decision.valid,
                "fallback_used": decision.fallback_used,
            })
            return
        if self.spec.kind == "http_post":
            client = self._http or _default_http_client()
            payload = {self.spec.action_field: value,
                       "window_start": decision.window_start // NS_PER_S}
            response = client.post(self.spec.target, json=payload, timeout=2.0)
            if response.status_code // 100 != 2:
                raise RuntimeError(f"forward target returned {response.status_code}")
            return
        if self.spec.kind == "mqtt_publish":
            publish = self._mqtt_publish or _paho_publish
            payload = json.dumps({self.spec.action_field: value,
                                  "window_start": decision.window_start // NS_PER_S},
                                 sort_keys=True).encode()
            publish(self.spec.target, payload)
            return
        raise ValueError(f"unknown forwarder kind {self.spec.kind!r}")


_http_client: httpx.Client | None = None


def _default_http_client() -> httpx.Client:
    global _http_client
    if _http_client is None:
        _http_client = httpx.Client()
    return _http_client


def _paho_publish(target: str, payload: bytes) -> None:
    """One-shot QoS-1 publish; target is mqtt://host[:port]/topic."""
    try:
        import paho.mqtt.publish as mqtt_publish
    except ImportError:
        raise RuntimeError(
            "mqtt_publish requires the paho-mqtt extra "
            "(pip install edgeflow[mqtt]) or an injected publish callable"
        ) from None
    from urllib.parse import urlparse

    parsed = urlparse(target)
    mqtt_publish.single(parsed.path.lstrip("/"), payload=payload, qos=1,
                        hostname=parsed.hostname or "localhost",
                        port=parsed.port or 1883)
