"""Domain types shared by every pipeline stage.

Internal timestamps are UTC nanoseconds since the Unix epoch; all telemetry
values are 64-bit floats. Config types are immutable after load and safe to
share across threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Union

NS_PER_S = 1_000_000_000


def seconds_to_ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


class Quality(enum.IntEnum):
    """Provenance of a frame value. Ordering is total: lower is better."""

    MEASURED = 0
    CORRECTED = 1
    CARRIED = 2
    PREDICTED = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "Quality":
        return cls[label.upper()]


@dataclass(frozen=True, slots=True)
class Measurement:
    """One standardized sample emitted by a translator."""

    environment_id: str
    signal_id: str
    event_time: int  # ns
    value: float
    unit: str
    quality: Quality
    source_id: str

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError("measurement value must be finite")


@dataclass(frozen=True)
class MinMaxNorm:
    lo: float
    hi: float


@dataclass(frozen=True)
class ZScoreNorm:
    mean: float
    std: float


Normalization = Union[MinMaxNorm, ZScoreNorm, None]


@dataclass(frozen=True)
class AnomalyParams:
    buffer_len: int  # >= 5
    z_threshold: float  # > 0


@dataclass(frozen=True)
class SignalSpec:
    """Per-signal contract: cadence, aggregation, gap policy, normalization."""

    signal_id: str
    expected_period_s: float
    unit: str = ""
    aggregation: str = "last"  # last | mean | sum | min | max
    gap_fill: str = "locf"  # locf | linear | historical_mean | fail
    max_staleness_s: float = 3600.0
    bounds: tuple[float, float] | None = None
    anomaly: AnomalyParams | None = None
    normalization: Normalization = None


@dataclass(frozen=True)
class DerivedSignalSpec:
    """Weighted fusion of member signals within one environment."""

    signal_id: str
    members: tuple[tuple[str, float], ...]  # (member_signal_id, weight > 0)


@dataclass(frozen=True)
class ActionSpec:
    name: str
    min: float
    max: float
    default: float
    on_invalid: str = "clamp"  # clamp | substitute_default


@dataclass(frozen=True)
class ModelSpec:
    kind: str  # stub_constant | stub_linear | sidecar_http
    features: tuple[str, ...]
    actions: tuple[ActionSpec, ...]
    endpoint: str = ""
    timeout_ms: int = 1000
    # stub_linear only: per-action weight vector aligned with features, plus bias
    weights: dict[str, tuple[float, ...]] = field(default_factory=dict)
    bias: dict[str, float] = field(default_factory=dict)

    def action(self, name: str) -> ActionSpec:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)


@dataclass(frozen=True)
class ForwarderSpec:
    id: str
    kind: str  # log | http_post | mqtt_publish
    action_field: str
    target: str = ""


@dataclass(frozen=True)
class StoreSpec:
    path: str = "transitions.jsonl"
    anonymize: bool = False
    salt: str = ""


@dataclass(frozen=True)
class TranslatorSpec:
    signal_id: str
    value_path: str  # "/a/b" into the JSON payload
    unit: str = ""
    payload_format: str = "json"
    timestamp_path: str | None = None  # absent => arrival time
    timestamp_unit: str = "s"  # s | ms
    scale: float = 1.0  # != 0
    offset: float = 0.0


@dataclass(frozen=True)
class SourceSpec:
    source_id: str
    kind: str  # sim | http | mqtt
    translator: TranslatorSpec
    environments: tuple[str, ...]
    connection: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class EnvironmentConfig:
    """One isolated processing context: signals, model, reward, sinks."""

    environment_id: str
    signals: tuple[SignalSpec, ...]
    model: ModelSpec
    window_seconds: int = 900
    grace_seconds: float = 0.0
    epoch_origin_ns: int = 0
    derived: tuple[DerivedSignalSpec, ...] = ()
    reward_expr: str = "0"
    forwarders: tuple[ForwarderSpec, ...] = ()
    store: StoreSpec = StoreSpec()
    history_days: float = 7.0
    day_seconds: float = 86400.0
    queue_capacity: int = 4096

    @property
    def window_ns(self) -> int:
        return self.window_seconds * NS_PER_S

    @property
    def grace_ns(self) -> int:
        return seconds_to_ns(self.grace_seconds)

    def signal(self, signal_id: str) -> SignalSpec:
        for s in self.signals:
            if s.signal_id == signal_id:
                return s
        raise KeyError(signal_id)

    @property
    def signal_ids(self) -> tuple[str, ...]:
        return tuple(s.signal_id for s in self.signals)

    @property
    def derived_ids(self) -> tuple[str, ...]:
        return tuple(d.signal_id for d in self.derived)


@dataclass(frozen=True)
class EngineConfig:
    """Fully materialized configuration: environments plus sources."""

    environments: tuple[EnvironmentConfig, ...]
    sources: tuple[SourceSpec, ...]

    def environment(self, environment_id: str) -> EnvironmentConfig:
        for e in self.environments:
            if e.environment_id == environment_id:
                return e
        raise KeyError(environment_id)

    def source(self, source_id: str) -> SourceSpec:
        for s in self.sources:
            if s.source_id == source_id:
                return s
        raise KeyError(source_id)
