"""Loading and validation of the single declarative configuration document.

`load_config` enforces syntax, shape, and local value constraints
(SchemaError carries the config path); `validate_config` checks
cross-references and returns violations instead of raising.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import expr as exprlang
from .errors import ConfigParseError, ExprError, SchemaError
from .types import (
    ActionSpec,
    AnomalyParams,
    DerivedSignalSpec,
    EngineConfig,
    EnvironmentConfig,
    ForwarderSpec,
    MinMaxNorm,
    ModelSpec,
    SignalSpec,
    SourceSpec,
    StoreSpec,
    TranslatorSpec,
    ZScoreNorm,
    seconds_to_ns,
)

_REQUIRED = object()


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


def _obj(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise SchemaError(path, f"expected an object, got {type(value).__name__}")
    return value


def _list(value: Any, path: str) -> list:
    if not isinstance(value, list):
        raise SchemaError(path, f"expected an array, got {type(value).__name__}")
    return value


def _reject_unknown(obj: dict, path: str, known: set[str]) -> None:
    for key in obj:
        if key not in known:
            raise SchemaError(f"{path}.{key}", "unknown key")


def _take(obj: dict, path: str, key: str, default: Any = _REQUIRED) -> Any:
    if key in obj:
        return obj[key]
    if default is _REQUIRED:
        raise SchemaError(f"{path}.{key}", "required field is missing")
    return default


def _str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise SchemaError(path, f"expected a string, got {type(value).__name__}")
    return value


def _bool(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise SchemaError(path, f"expected a boolean, got {type(value).__name__}")
    return value


def _int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, f"expected an integer, got {type(value).__name__}")
    return value


def _float(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"expected a number, got {type(value).__name__}")
    value = float(value)
    if not math.isfinite(value):
        raise SchemaError(path, "must be finite")
    return value


def _positive(value: float, path: str) -> float:
    if value <= 0:
        raise SchemaError(path, "must be positive")
    return value


def _enum(value: str, path: str, allowed: tuple[str, ...]) -> str:
    if value not in allowed:
        raise SchemaError(path, f"must be one of {', '.join(allowed)}")
    return value


def _origin_ns(value: Any, path: str) -> int:
    """Epoch origin: unix seconds (number) or an ISO-8601 UTC timestamp."""
    if isinstance(value, str):
        text = value.replace("Z", "+00:00")
        try:
            dt = datetime.fromisoformat(text)
        except ValueError:
            raise SchemaError(path, f"invalid timestamp {value!r}") from None
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return seconds_to_ns(dt.timestamp())
    return seconds_to_ns(_float(value, path))


def _parse_signal(raw: Any, path: str) -> SignalSpec:
    obj = _obj(raw, path)
    _reject_unknown(obj, path, {
        "signal_id", "unit", "expected_period_s", "aggregation", "gap_fill",
        "max_staleness_s", "bounds", "anomaly", "normalization",
    })
    bounds = None
    if obj.get("bounds") is not None:
        bpath = f"{path}.bounds"
        bobj = _obj(obj["bounds"], bpath)
        _reject_unknown(bobj, bpath, {"min", "max"})
        lo = _float(_take(bobj, bpath, "min"), f"{bpath}.min")
        hi = _float(_take(bobj, bpath, "max"), f"{bpath}.max")
        if not lo < hi:
            raise SchemaError(bpath, "min must be < max")
        bounds = (lo, hi)
    anomaly = None
    if obj.get("anomaly") is not None:
        apath = f"{path}.anomaly"
        aobj = _obj(obj["anomaly"], apath)
        _reject_unknown(aobj, apath, {"buffer_len", "z_threshold"})
        buffer_len = _int(_take(aobj, apath, "buffer_len"), f"{apath}.buffer_len")
        if buffer_len < 5:
            raise SchemaError(f"{apath}.buffer_len", "must be >= 5")
        z = _positive(_float(_take(aobj, apath, "z_threshold"), f"{apath}.z_threshold"),
                      f"{apath}.z_threshold")
        anomaly = AnomalyParams(buffer_len=buffer_len, z_threshold=z)
    normalization = None
    if obj.get("normalization") is not None:
        npath = f"{path}.normalization"
        nobj = _obj(obj["normalization"], npath)
        kind = _enum(_str(_take(nobj, npath, "kind"), f"{npath}.kind"),
                     f"{npath}.kind", ("minmax", "zscore", "none"))
        if kind == "minmax":
            _reject_unknown(nobj, npath, {"kind", "min", "max"})
            lo = _float(_take(nobj, npath, "min"), f"{npath}.min")
            hi = _float(_take(nobj, npath, "max"), f"{npath}.max")
            if not lo < hi:
                raise SchemaError(npath, "min must be < max")
            normalization = MinMaxNorm(lo, hi)
        elif kind == "zscore":
            _reject_unknown(nobj, npath, {"kind", "mean", "std"})
            mean = _float(_take(nobj, npath, "mean"), f"{npath}.mean")
            std = _float(_take(nobj, npath, "std"), f"{npath}.std")
            if std <= 0:
                raise SchemaError(f"{npath}.std", "must be positive")
            normalization = ZScoreNorm(mean, std)
        else:
            _reject_unknown(nobj, npath, {"kind"})
    return SignalSpec(
        signal_id=_str(_take(obj, path, "signal_id"), f"{path}.signal_id"),
        unit=_str(_take(obj, path, "unit", ""), f"{path}.unit"),
        expected_period_s=_positive(
            _float(_take(obj, path, "expected_period_s"), f"{path}.expected_period_s"),
            f"{path}.expected_period_s"),
        aggregation=_enum(_str(_take(obj, path, "aggregation", "last"), f"{path}.aggregation"),
                          f"{path}.aggregation", ("last", "mean", "sum", "min", "max")),
        gap_fill=_enum(_str(_take(obj, path, "gap_fill", "locf"), f"{path}.gap_fill"),
                       f"{path}.gap_fill", ("locf", "linear", "historical_mean", "fail")),
        max_staleness_s=_positive(
            _float(_take(obj, path, "max_staleness_s", 3600.0), f"{path}.max_staleness_s"),
            f"{path}.max_staleness_s"),
        bounds=bounds,
        anomaly=anomaly,
        normalization=normalization,
    )


def _parse_derived(raw: Any, path: str) -> DerivedSignalSpec:
    obj = _obj(raw, path)
    _reject_unknown(obj, path, {"signal_id", "members"})
    members_raw = _list(_take(obj, path, "members"), f"{path}.members")
    if not members_raw:
        raise SchemaError(f"{path}.members", "must be non-empty")
    members = []
    for i, m in enumerate(members_raw):
        mpath = f"{path}.members[{i}]"
        mobj = _obj(m, mpath)
        _reject_unknown(mobj, mpath, {"signal_id", "weight"})
        weight = _float(_take(mobj, mpath, "weight", 1.0), f"{mpath}.weight")
        if weight <= 0:
            raise SchemaError(f"{mpath}.weight", "must be positive")
        members.append((_str(_take(mobj, mpath, "signal_id"), f"{mpath}.signal_id"), weight))
    return DerivedSignalSpec(
        signal_id=_str(_take(obj, path, "signal_id"), f"{path}.signal_id"),
        members=tuple(members),
    )


def _parse_model(raw: Any, path: str) -> ModelSpec:
    obj = _obj(raw, path)
    _reject_unknown(obj, path, {
        "kind", "endpoint", "timeout_ms", "features", "actions", "weights", "bias",
    })
    kind = _enum(_str(_take(obj, path, "kind"), f"{path}.kind"), f"{path}.kind",
                 ("stub_constant", "stub_linear", "sidecar_http"))
    features_raw = _list(_take(obj, path, "features"), f"{path}.features")
    if not features_raw:
        raise SchemaError(f"{path}.features", "must be non-empty")
    features = tuple(_str(f, f"{path}.features[{i}]") for i, f in enumerate(features_raw))
    actions = []
    for i, a in enumerate(_list(_take(obj, path, "actions", []), f"{path}.actions")):
        apath = f"{path}.actions[{i}]"
        aobj = _obj(a, apath)
        _reject_unknown(aobj, apath, {"name", "min", "max", "default", "on_invalid"})
        lo = _float(_take(aobj, apath, "min"), f"{apath}.min")
        hi = _float(_take(aobj, apath, "max"), f"{apath}.max")
        default = _float(_take(aobj, apath, "default"), f"{apath}.default")
        if not (lo <= default <= hi):
            raise SchemaError(apath, "must satisfy min <= default <= max")
        actions.append(ActionSpec(
            name=_str(_take(aobj, apath, "name"), f"{apath}.name"),
            min=lo, max=hi, default=default,
            on_invalid=_enum(_str(_take(aobj, apath, "on_invalid", "clamp"),
                                  f"{apath}.on_invalid"),
                             f"{apath}.on_invalid", ("clamp", "substitute_default")),
        ))
    weights: dict[str, tuple[float, ...]] = {}
    for name, vec in _obj(_take(obj, path, "weights", {}), f"{path}.weights").items():
        wpath = f"{path}.weights.{name}"
        weights[name] = tuple(_float(w, f"{wpath}[{i}]")
                              for i, w in enumerate(_list(vec, wpath)))
    bias = {name: _float(b, f"{path}.bias.{name}")
            for name, b in _obj(_take(obj, path, "bias", {}), f"{path}.bias").items()}
    timeout_ms = _int(_take(obj, path, "timeout_ms", 1000), f"{path}.timeout_ms")
    if timeout_ms <= 0:
        raise SchemaError(f"{path}.timeout_ms", "must be positive")
    return ModelSpec(
        kind=kind,
        features=features,
        actions=tuple(actions),
        endpoint=_str(_take(obj, path, "endpoint", ""), f"{path}.endpoint"),
        timeout_ms=timeout_ms,
        weights=weights,
        bias=bias,
    )


def _parse_forwarder(raw: Any, path: str) -> ForwarderSpec:
    obj = _obj(raw, path)
    _reject_unknown(obj, path, {"id", "kind", "target", "action_field"})
    return ForwarderSpec(
        id=_str(_take(obj, path, "id"), f"{path}.id"),
        kind=_enum(_str(_take(obj, path, "kind"), f"{path}.kind"), f"{path}.kind",
                   ("log", "http_post", "mqtt_publish")),
        action_field=_str(_take(obj, path, "action_field"), f"{path}.action_field"),
        target=_str(_take(obj, path, "target", ""), f"{path}.target"),
    )


def _parse_store(raw: Any, path: str) -> StoreSpec:
    obj = _obj(raw, path)
    _reject_unknown(obj, path, {"path", "anonymize", "salt"})
    return StoreSpec(
        path=_str(_take(obj, path, "path", "transitions.jsonl"), f"{path}.path"),
        anonymize=_bool(_take(obj, path, "anonymize", False), f"{path}.anonymize"),
        salt=_str(_take(obj, path, "salt", ""), f"{path}.salt"),
    )


def _parse_environment(raw: Any, path: str) -> EnvironmentConfig:
    obj = _obj(raw, path)
    _reject_unknown(obj, path, {
        "environment_id", "window_seconds", "grace_seconds", "epoch_origin",
        "signals", "derived", "model", "reward_expr", "forwarders", "store",
        "history_days", "day_seconds", "queue_capacity",
    })
    signals_raw = _list(_take(obj, path, "signals"), f"{path}.signals")
    if not signals_raw:
        raise SchemaError(f"{path}.signals", "must be non-empty")
    window_seconds = _int(_take(obj, path, "window_seconds", 900), f"{path}.window_seconds")
    if window_seconds <= 0:
        raise SchemaError(f"{path}.window_seconds", "must be positive")
    grace = _float(_take(obj, path, "grace_seconds", 0.0), f"{path}.grace_seconds")
    if grace < 0:
        raise SchemaError(f"{path}.grace_seconds", "must be non-negative")
    capacity = _int(_take(obj, path, "queue_capacity", 4096), f"{path}.queue_capacity")
    if capacity <= 0:
        raise SchemaError(f"{path}.queue_capacity", "must be positive")
    return EnvironmentConfig(
        environment_id=_str(_take(obj, path, "environment_id"), f"{path}.environment_id"),
        window_seconds=window_seconds,
        grace_seconds=grace,
        epoch_origin_ns=_origin_ns(_take(obj, path, "epoch_origin", 0), f"{path}.epoch_origin"),
        signals=tuple(_parse_signal(s, f"{path}.signals[{i}]")
                      for i, s in enumerate(signals_raw)),
        derived=tuple(_parse_derived(d, f"{path}.derived[{i}]")
                      for i, d in enumerate(_list(_take(obj, path, "derived", []),
                                                  f"{path}.derived"))),
        model=_parse_model(_take(obj, path, "model"), f"{path}.model"),
        reward_expr=_str(_take(obj, path, "reward_expr", "0"), f"{path}.reward_expr"),
        forwarders=tuple(_parse_forwarder(f, f"{path}.forwarders[{i}]")
                         for i, f in enumerate(_list(_take(obj, path, "forwarders", []),
                                                     f"{path}.forwarders"))),
        store=_parse_store(_take(obj, path, "store", {}), f"{path}.store"),
        history_days=_positive(_float(_take(obj, path, "history_days", 7.0),
                                      f"{path}.history_days"), f"{path}.history_days"),
        day_seconds=_positive(_float(_take(obj, path, "day_seconds", 86400.0),
                                     f"{path}.day_seconds"), f"{path}.day_seconds"),
        queue_capacity=capacity,
    )


def _parse_translator(raw: Any, path: str) -> TranslatorSpec:
    obj = _obj(raw, path)
    _reject_unknown(obj, path, {
        "payload_format", "value_path", "timestamp_path", "timestamp_unit",
        "scale", "offset", "signal_id", "unit",
    })
    scale = _float(_take(obj, path, "scale", 1.0), f"{path}.scale")
    if scale == 0:
        raise SchemaError(f"{path}.scale", "must be non-zero")
    ts_path = _take(obj, path, "timestamp_path", None)
    if ts_path is not None:
        ts_path = _str(ts_path, f"{path}.timestamp_path")
    return TranslatorSpec(
        signal_id=_str(_take(obj, path, "signal_id"), f"{path}.signal_id"),
        value_path=_str(_take(obj, path, "value_path"), f"{path}.value_path"),
        unit=_str(_take(obj, path, "unit", ""), f"{path}.unit"),
        payload_format=_enum(_str(_take(obj, path, "payload_format", "json"),
                                  f"{path}.payload_format"),
                             f"{path}.payload_format", ("json",)),
        timestamp_path=ts_path,
        timestamp_unit=_enum(_str(_take(obj, path, "timestamp_unit", "s"),
                                  f"{path}.timestamp_unit"),
                             f"{path}.timestamp_unit", ("s", "ms")),
        scale=scale,
        offset=_float(_take(obj, path, "offset", 0.0), f"{path}.offset"),
    )


def _parse_source(raw: Any, path: str) -> SourceSpec:
    obj = _obj(raw, path)
    _reject_unknown(obj, path, {"source_id", "kind", "connection", "translator", "environments"})
    envs_raw = _list(_take(obj, path, "environments"), f"{path}.environments")
    if not envs_raw:
        raise SchemaError(f"{path}.environments", "must be non-empty")
    connection = {
        k: _str(v, f"{path}.connection.{k}")
        for k, v in _obj(_take(obj, path, "connection", {}), f"{path}.connection").items()
    }
    return SourceSpec(
        source_id=_str(_take(obj, path, "source_id"), f"{path}.source_id"),
        kind=_enum(_str(_take(obj, path, "kind"), f"{path}.kind"), f"{path}.kind",
                   ("sim", "http", "mqtt")),
        translator=_parse_translator(_take(obj, path, "translator"), f"{path}.translator"),
        environments=tuple(_str(e, f"{path}.environments[{i}]")
                           for i, e in enumerate(envs_raw)),
        connection=connection,
    )


def load_config(text: str) -> EngineConfig:
    """Materialize the configuration document; deterministic in its input bytes."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(e.msg, line=e.lineno) from None
    root = _obj(doc, "$")
    _reject_unknown(root, "$", {"environments", "sources"})
    envs_raw = _list(_take(root, "$", "environments"), "environments")
    if not envs_raw:
        raise SchemaError("environments", "environments must be non-empty")
    environments = tuple(_parse_environment(e, f"environments[{i}]")
                         for i, e in enumerate(envs_raw))
    sources = tuple(_parse_source(s, f"sources[{i}]")
                    for i, s in enumerate(_list(_take(root, "$", "sources", []), "sources")))
    return EngineConfig(environments=environments, sources=sources)


def load_config_file(path: str | Path) -> EngineConfig:
    return load_config(Path(path).read_text(encoding="utf-8"))


def validate_config(config: EngineConfig) -> list[Violation]:
    """Cross-reference checks; empty list means the configuration is sound."""
    out: list[Violation] = []
    seen_envs: set[str] = set()
    for i, env in enumerate(config.environments):
        path = f"environments[{i}]"
        if env.environment_id in seen_envs:
            out.append(Violation(f"{path}.environment_id",
                                 f"duplicate environment_id {env.environment_id!r}"))
        seen_envs.add(env.environment_id)
        base_ids = set()
        for j, sig in enumerate(env.signals):
            if sig.signal_id in base_ids:
                out.append(Violation(f"{path}.signals[{j}].signal_id",
                                     f"duplicate signal_id {sig.signal_id!r}"))
            base_ids.add(sig.signal_id)
        all_ids = set(base_ids)
        for j, der in enumerate(env.derived):
            dpath = f"{path}.derived[{j}]"
            if der.signal_id in all_ids:
                out.append(Violation(f"{dpath}.signal_id",
                                     f"duplicate signal_id {der.signal_id!r}"))
            all_ids.add(der.signal_id)
            for member_id, _w in der.members:
                if member_id not in base_ids:
                    out.append(Violation(f"{dpath}.members",
                                         f"member {member_id!r} is not a configured signal"))
        mpath = f"{path}.model"
        for j, feat in enumerate(env.model.features):
            if feat not in all_ids:
                out.append(Violation(f"{mpath}.features[{j}]",
                                     f"feature {feat!r} is not a configured signal"))
        action_names = {a.name for a in env.model.actions}
        if env.model.kind == "stub_linear":
            for a in env.model.actions:
                vec = env.model.weights.get(a.name)
                if vec is None:
                    out.append(Violation(f"{mpath}.weights",
                                         f"missing weights for action {a.name!r}"))
                elif len(vec) != len(env.model.features):
                    out.append(Violation(f"{mpath}.weights.{a.name}",
                                         "weight vector length must match features"))
        if env.model.kind == "sidecar_http" and not env.model.endpoint:
            out.append(Violation(f"{mpath}.endpoint", "sidecar_http requires an endpoint"))
        for j, fw in enumerate(env.forwarders):
            if fw.action_field not in action_names:
                out.append(Violation(f"{path}.forwarders[{j}].action_field",
                                     f"action_field {fw.action_field!r} is not a model action"))
        out.extend(_check_reward_expr(env, f"{path}.reward_expr", all_ids, action_names))
    stores_by_path: dict[str, tuple[int, object]] = {}
    for i, env in enumerate(config.environments):
        seen = stores_by_path.get(env.store.path)
        if seen is None:
            stores_by_path[env.store.path] = (i, env.store)
        elif seen[1] != env.store:
            out.append(Violation(
                f"environments[{i}].store",
                f"store path {env.store.path!r} is shared with "
                f"environments[{seen[0]}] but anonymize/salt settings differ"))
    seen_sources: set[str] = set()
    for i, src in enumerate(config.sources):
        spath = f"sources[{i}]"
        if src.source_id in seen_sources:
            out.append(Violation(f"{spath}.source_id",
                                 f"duplicate source_id {src.source_id!r}"))
        seen_sources.add(src.source_id)
        for j, env_id in enumerate(src.environments):
            if env_id not in seen_envs:
                out.append(Violation(f"{spath}.environments[{j}]",
                                     f"unknown environment {env_id!r}"))
                continue
            env = config.environment(env_id)
            if src.translator.signal_id not in env.signal_ids:
                out.append(Violation(
                    f"{spath}.translator.signal_id",
                    f"signal {src.translator.signal_id!r} is not configured "
                    f"in environment {env_id!r}"))
    return out


def _check_reward_expr(env: EnvironmentConfig, path: str,
                       signal_ids: set[str], action_names: set[str]) -> list[Violation]:
    try:
        tree = exprlang.parse_expr(env.reward_expr)
    except ExprError as e:
        return [Violation(path, f"reward expression does not parse: {e}")]
    out = []
    for name in sorted(exprlang.free_vars(tree)):
        prefix, _, rest = name.partition(".")
        if prefix in ("cur", "next") and rest in signal_ids:
            continue
        if prefix == "action" and rest in action_names:
            continue
        out.append(Violation(path, f"unresolvable variable {name!r}"))
    return out
