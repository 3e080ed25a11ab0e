import json

import pytest

from edgeflow.egress import Metrics
from edgeflow.errors import (
    FieldMissing,
    NonFiniteValue,
    PayloadParseError,
    TimestampInvalid,
    UnknownSource,
)
from edgeflow.ingest import (
    EnvQueue,
    MqttReceiver,
    RawEvent,
    Router,
    reconnect_backoff_s,
    translate,
)
from edgeflow.types import Measurement, Quality, TranslatorSpec, NS_PER_S

from builders import environment, make_config, signal, sim_source

S = NS_PER_S


def _event(payload: dict | bytes, arrival_s: float = 0.0, source="s1") -> RawEvent:
    body = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
    return RawEvent(source_id=source, arrival_time=int(arrival_s * S), payload=body)


class TestTranslate:
    def test_payload_timestamp(self):
        spec = TranslatorSpec(signal_id="temp", value_path="/temp",
                              timestamp_path="/ts", timestamp_unit="s", unit="C")
        m = translate(_event({"temp": 21.5, "ts": 1700000000}), spec)
        assert m.value == 21.5
        assert m.event_time == 1700000000 * 10**9
        assert m.quality is Quality.MEASURED
        assert m.unit == "C"

    def test_scale_offset_and_arrival_time(self):
        spec = TranslatorSpec(signal_id="temp", value_path="/raw", scale=0.1)
        m = translate(_event({"raw": 215}, arrival_s=42.0), spec)
        assert m.value == pytest.approx(21.5)
        assert m.event_time == 42 * S

    def test_non_numeric_value(self):
        spec = TranslatorSpec(signal_id="temp", value_path="/temp")
        with pytest.raises(NonFiniteValue):
            translate(_event({"temp": "oops"}), spec)

    def test_malformed_json(self):
        spec = TranslatorSpec(signal_id="temp", value_path="/temp")
        with pytest.raises(PayloadParseError):
            translate(_event(b"{nope"), spec)

    def test_missing_field(self):
        spec = TranslatorSpec(signal_id="temp", value_path="/a/b")
        with pytest.raises(FieldMissing):
            translate(_event({"a": {"c": 1}}), spec)

    def test_nested_path(self):
        spec = TranslatorSpec(signal_id="p", value_path="/quote/eur",
                              timestamp_path="/quote/ts", timestamp_unit="ms")
        m = translate(_event({"quote": {"eur": 0.3, "ts": 1700000000123}}), spec)
        assert m.event_time == 1700000000123 * 10**6

    def test_timestamp_before_origin(self):
        spec = TranslatorSpec(signal_id="t", value_path="/v",
                              timestamp_path="/ts", timestamp_unit="s")
        with pytest.raises(TimestampInvalid):
            translate(_event({"v": 1.0, "ts": 10}), spec, origin_ns=100 * S)

    def test_non_numeric_timestamp(self):
        spec = TranslatorSpec(signal_id="t", value_path="/v",
                              timestamp_path="/ts", timestamp_unit="s")
        with pytest.raises(TimestampInvalid):
            translate(_event({"v": 1.0, "ts": "noon"}), spec)

    def test_pure_function(self):
        spec = TranslatorSpec(signal_id="temp", value_path="/v", scale=2.0, offset=1.0)
        event = _event({"v": 3.0}, arrival_s=5.0)
        assert translate(event, spec) == translate(event, spec)

    def test_bool_value_rejected(self):
        spec = TranslatorSpec(signal_id="t", value_path="/v")
        with pytest.raises(NonFiniteValue):
            translate(_event({"v": True}), spec)


class TestEnvQueue:
    def _measurement(self, env="env-a", t=0):
        return Measurement(environment_id=env, signal_id="temp", event_time=t,
                           value=1.0, unit="", quality=Quality.MEASURED,
                           source_id="s1")

    def test_fifo_order(self):
        q = EnvQueue("env-a", capacity=10)
        for t in range(5):
            q.offer(self._measurement(t=t))
        assert [m.event_time for m in q.drain()] == [0, 1, 2, 3, 4]

    def test_reject_on_full_drops_newest(self):
        q = EnvQueue("env-a", capacity=2)
        assert q.offer(self._measurement(t=0))
        assert q.offer(self._measurement(t=1))
        assert not q.offer(self._measurement(t=2))
        assert q.dropped == 1
        assert [m.event_time for m in q.drain()] == [0, 1]


def _two_env_config():
    return make_config(
        [environment("env-a", signals=[signal("temp")]),
         environment("env-b", signals=[signal("temp")])],
        [sim_source("shared", "temp", ["env-a", "env-b"]),
         sim_source("only-b", "temp", ["env-b"])],
    )


class TestRouter:
    def _router(self, config=None, capacity=16):
        config = config or _two_env_config()
        metrics = Metrics()
        queues = {env.environment_id: EnvQueue(env.environment_id, capacity)
                  for env in config.environments}
        return Router(config, queues, metrics), queues, metrics

    def test_fanout_isolation(self):
        router, queues, metrics = self._router()
        router.ingest("shared", json.dumps({"value": 1.0}).encode(), 10 * S)
        router.ingest("only-b", json.dumps({"value": 2.0}).encode(), 11 * S)
        in_a = queues["env-a"].drain()
        in_b = queues["env-b"].drain()
        assert [m.value for m in in_a] == [1.0]
        assert [m.value for m in in_b] == [1.0, 2.0]
        assert all(m.environment_id == "env-a" for m in in_a)
        assert all(m.environment_id == "env-b" for m in in_b)

    def test_unknown_source(self):
        router, _, metrics = self._router()
        with pytest.raises(UnknownSource):
            router.ingest("ghost", b"{}", 0)
        assert metrics.get("events_received") == 0

    def test_translate_error_counted(self):
        router, _, metrics = self._router()
        with pytest.raises(NonFiniteValue):
            router.ingest("shared", json.dumps({"value": "x"}).encode(), 0)
        assert metrics.get("events_received") == 1
        assert metrics.get("translate_errors") == 1
        assert metrics.get("events_translated") == 0

    def test_conservation_identity(self):
        router, queues, metrics = self._router(capacity=3)
        good = json.dumps({"value": 1.0}).encode()
        bad = json.dumps({"value": "x"}).encode()
        for i in range(5):
            router.ingest("shared", good, i * S)  # 2 queues each
        for i in range(2):
            try:
                router.ingest("shared", bad, (10 + i) * S)
            except NonFiniteValue:
                pass
        received = metrics.get("events_received")
        translated = metrics.get("events_translated")
        errors = metrics.get("translate_errors")
        assert received == translated + errors == 7
        # every translated event was offered to both subscriptions
        assert translated * 2 == metrics.get("enqueued") + metrics.get("dropped_full")
        assert metrics.get("dropped_full") == 2 * 2  # capacity 3 per queue

    def test_fifo_per_source_per_queue(self):
        router, queues, _ = self._router()
        for i in range(4):
            router.ingest("shared", json.dumps({"value": float(i)}).encode(), i * S)
        assert [m.value for m in queues["env-a"].drain()] == [0.0, 1.0, 2.0, 3.0]


class _FakeMessage:
    def __init__(self, topic, payload):
        self.topic = topic
        self.payload = payload


class _FakeMqttClient:
    def __init__(self, fail_connects: int = 0):
        self.fail_connects = fail_connects
        self.on_message = None
        self.on_disconnect = None
        self.subscribed = []
        self.connected = False

    def connect(self, host, port):
        if self.fail_connects > 0:
            self.fail_connects -= 1
            raise ConnectionRefusedError("broker down")
        self.connected = True

    def subscribe(self, topic, qos):
        self.subscribed.append((topic, qos))

    def loop_start(self):
        pass

    def loop_stop(self):
        pass

    def disconnect(self):
        self.connected = False

    def publish_to(self, receiver, topic, payload: dict):
        self.on_message(self, None, _FakeMessage(topic, json.dumps(payload).encode()))


class TestMqttReceiver:
    def _setup(self, fail_connects=0):
        config = make_config(
            [environment("env-a", signals=[signal("temp")])],
            [{"source_id": "meter", "kind": "mqtt",
              "connection": {"host": "broker", "port": "1883", "topic": "tele/temp"},
              "translator": {"signal_id": "temp", "value_path": "/value"},
              "environments": ["env-a"]}],
        )
        metrics = Metrics()
        queues = {"env-a": EnvQueue("env-a", 16)}
        router = Router(config, queues, metrics)
        client = _FakeMqttClient(fail_connects)
        receiver = MqttReceiver(config.sources[0], router, metrics,
                                client_factory=lambda: client,
                                clock_ns=lambda: 123 * S,
                                sleep=lambda s: None)
        return receiver, client, queues, metrics

    def test_message_on_topic_enqueues(self):
        receiver, client, queues, metrics = self._setup()
        client.on_message = lambda c, u, msg: receiver.handle_message(msg.topic, msg.payload)
        client.publish_to(receiver, "tele/temp", {"value": 9.0})
        items = queues["env-a"].drain()
        assert len(items) == 1
        assert items[0].value == 9.0
        assert items[0].event_time == 123 * S  # arrival clock

    def test_unsubscribed_topic_ignored(self):
        receiver, client, queues, _ = self._setup()
        client.on_message = lambda c, u, msg: receiver.handle_message(msg.topic, msg.payload)
        client.publish_to(receiver, "other/topic", {"value": 9.0})
        assert queues["env-a"].drain() == []

    def test_translate_error_discards_message(self):
        receiver, client, queues, metrics = self._setup()
        client.on_message = lambda c, u, msg: receiver.handle_message(msg.topic, msg.payload)
        client.publish_to(receiver, "tele/temp", {"value": "bad"})
        assert queues["env-a"].drain() == []
        assert metrics.get("translate_errors") == 1

    def test_backoff_schedule(self):
        assert [reconnect_backoff_s(i) for i in range(8)] == \
            [1, 2, 4, 8, 16, 32, 60, 60]

    def test_broker_down_then_recovers(self):
        import time

        receiver, client, _, metrics = self._setup(fail_connects=2)
        receiver.start()
        deadline = time.monotonic() + 2.0
        while time.monotonic() < deadline:
            if metrics.snapshot()["sources"]["meter"] == "connected":
                break
            time.sleep(0.01)
        receiver.stop()
        assert receiver.reconnects == 2
        assert metrics.snapshot()["sources"]["meter"] == "connected"
