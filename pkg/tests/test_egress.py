import json

import httpx

from edgeflow.egress import (
    Forwarder,
    JsonlAppender,
    Metrics,
    TransitionStore,
    anonymize,
    anonymize_env_id,
    transition_to_wire,
)
from edgeflow.inference import Decision, Transition
from edgeflow.types import ForwarderSpec, StoreSpec


def _transition(env="building-a", reward=1.5, raw_action=None) -> Transition:
    return Transition(
        environment_id=env,
        window_start=900 * 10**9,
        obs={"price": 0.2, "soc": 0.5},
        qual={"price": "measured", "soc": "carried"},
        enc=(0.25, 0.5),
        raw_action=raw_action if raw_action is not None else {"power": 0.7},
        action={"power": 0.7},
        valid=True,
        fallback_used=False,
        reward=reward,
        degraded=False,
    )


def _decision(env="env-a") -> Decision:
    return Decision(environment_id=env, window_start=0, raw_action={"power": 1.0},
                    action={"power": 1.0}, valid=True, fallback_used=False)


class TestAnonymize:
    def test_deterministic_for_fixed_salt(self):
        assert anonymize_env_id("building-a", "s1") == anonymize_env_id("building-a", "s1")

    def test_distinct_envs_distinct_hashes(self):
        # direct enumeration over a fixture-sized environment set
        env_ids = [f"env-{i}" for i in range(50)] + ["building-a", "building-b"]
        hashes = {anonymize_env_id(e, "pepper") for e in env_ids}
        assert len(hashes) == len(env_ids)

    def test_salt_changes_hash(self):
        assert anonymize_env_id("building-a", "s1") != anonymize_env_id("building-a", "s2")

    def test_format_is_16_hex(self):
        digest = anonymize_env_id("building-a", "s1")
        assert len(digest) == 16
        assert digest == digest.lower()
        int(digest, 16)

    def test_only_env_field_changes(self):
        t = _transition()
        anonymized = anonymize(t, "pepper")
        assert anonymized.environment_id != t.environment_id
        assert anonymized.obs == t.obs
        assert anonymized.reward == t.reward
        assert anonymized.action == t.action


class TestTransitionWire:
    def test_exact_schema(self):
        wire = transition_to_wire(_transition())
        assert set(wire) == {
            "env", "window_start", "obs", "qual", "enc", "raw_action",
            "action", "valid", "fallback_used", "reward", "degraded",
        }

    def test_null_reward(self):
        wire = transition_to_wire(_transition(reward=None))
        assert wire["reward"] is None

    def test_hostile_raw_action_stays_parseable(self):
        wire = transition_to_wire(_transition(raw_action={"power": float("nan")}))
        line = json.dumps(wire, sort_keys=True)
        assert json.loads(line)["raw_action"]["power"] is None


class TestJsonlAppender:
    def test_sorted_keys_one_line_per_record(self, tmp_path):
        sink = JsonlAppender(tmp_path / "out.jsonl")
        sink.append({"b": 1, "a": 2})
        sink.append({"z": None})
        sink.close()
        lines = (tmp_path / "out.jsonl").read_text().splitlines()
        assert lines == ['{"a": 2, "b": 1}', '{"z": null}']


class TestTransitionStore:
    def test_append_and_reread(self, tmp_path):
        metrics = Metrics()
        store = TransitionStore(StoreSpec(), tmp_path / "t.jsonl", metrics)
        store.append(_transition())
        store.append(_transition(reward=None))
        store.close()
        lines = (tmp_path / "t.jsonl").read_text().splitlines()
        assert len(lines) == 2
        records = [json.loads(line) for line in lines]
        assert records[0]["env"] == "building-a"
        assert records[1]["reward"] is None
        assert metrics.get("transitions_written") == 2
        for line in lines:  # keys sorted on disk
            assert line == json.dumps(json.loads(line), sort_keys=True)

    def test_anonymized_store_leaks_no_env_id(self, tmp_path):
        metrics = Metrics()
        spec = StoreSpec(anonymize=True, salt="pepper")
        store = TransitionStore(spec, tmp_path / "t.jsonl", metrics)
        store.append(_transition(env="secret-building"))
        store.close()
        blob = (tmp_path / "t.jsonl").read_bytes()
        assert b"secret-building" not in blob
        assert json.loads(blob)["env"] == anonymize_env_id("secret-building", "pepper")


class TestForwarders:
    def test_log_forwarder_writes_decision_line(self, tmp_path):
        metrics = Metrics()
        sink = JsonlAppender(tmp_path / "decisions.jsonl")
        fw = Forwarder(ForwarderSpec(id="f1", kind="log", action_field="power"),
                       metrics, decisions_sink=sink)
        assert fw.forward(_decision())
        sink.close()
        record = json.loads((tmp_path / "decisions.jsonl").read_text())
        assert record["field"] == "power"
        assert record["value"] == 1.0
        assert metrics.get("forward_failures") == 0

    def test_http_forwarder_posts_payload(self):
        metrics = Metrics()
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen.update(json.loads(request.content))
            return httpx.Response(200)

        fw = Forwarder(
            ForwarderSpec(id="f1", kind="http_post", action_field="power",
                          target="http://device.local/setpoint"),
            metrics, http_client=httpx.Client(transport=httpx.MockTransport(handler)))
        assert fw.forward(_decision())
        assert seen == {"power": 1.0, "window_start": 0}

    def test_http_failure_retries_once_then_counts(self):
        metrics = Metrics()
        calls = []

        def handler(request: httpx.Request) -> httpx.Response:
            calls.append(1)
            raise httpx.ConnectError("refused")

        fw = Forwarder(
            ForwarderSpec(id="f1", kind="http_post", action_field="power",
                          target="http://dead.local/x"),
            metrics, http_client=httpx.Client(transport=httpx.MockTransport(handler)),
            retry_delay_s=0.001)
        assert fw.forward(_decision()) is False
        assert len(calls) == 2
        assert metrics.get("forward_failures") == 1

    def test_each_forwarder_delivers_only_its_action_field(self, tmp_path):
        # a decision with two fields fans out to per-destination forwarders
        metrics = Metrics()
        sink = JsonlAppender(tmp_path / "decisions.jsonl")
        light = Forwarder(ForwarderSpec(id="light", kind="log", action_field="switch"),
                          metrics, decisions_sink=sink)
        hvac = Forwarder(ForwarderSpec(id="hvac", kind="log", action_field="setpoint"),
                         metrics, decisions_sink=sink)
        decision = Decision(environment_id="env-a", window_start=0,
                            raw_action={}, action={"switch": 1.0, "setpoint": 21.0},
                            valid=True, fallback_used=False)
        light.forward(decision)
        hvac.forward(decision)
        sink.close()
        records = [json.loads(l)
                   for l in (tmp_path / "decisions.jsonl").read_text().splitlines()]
        assert [(r["forwarder"], r["field"], r["value"]) for r in records] == \
            [("light", "switch", 1.0), ("hvac", "setpoint", 21.0)]

    def test_mqtt_forwarder_uses_injected_publish(self):
        metrics = Metrics()
        published = []
        fw = Forwarder(
            ForwarderSpec(id="f1", kind="mqtt_publish", action_field="power",
                          target="mqtt://broker.local/setpoints"),
            metrics, mqtt_publish=lambda topic, payload: published.append((topic, payload)))
        assert fw.forward(_decision())
        assert published[0][0] == "mqtt://broker.local/setpoints"
        assert json.loads(published[0][1]) == {"power": 1.0, "window_start": 0}


class TestMetrics:
    def test_zero_at_startup(self):
        snapshot = Metrics().snapshot()
        assert all(v == 0 for k, v in snapshot.items()
                   if isinstance(v, int))
        assert snapshot["gaps_filled"] == {"historical_mean": 0, "linear": 0, "locf": 0}

    def test_counters_accumulate(self):
        metrics = Metrics()
        metrics.inc("events_received", 3)
        metrics.inc("events_received")
        metrics.inc_gap("locf", 2)
        assert metrics.get("events_received") == 4
        assert metrics.gaps_filled_total == 2

    def test_snapshot_is_a_copy(self):
        metrics = Metrics()
        snap = metrics.snapshot()
        metrics.inc("frames_emitted")
        assert snap["frames_emitted"] == 0

    def test_json_is_stable(self):
        metrics = Metrics()
        metrics.set_source_status("s1", "connected")
        assert metrics.to_json() == metrics.to_json()
