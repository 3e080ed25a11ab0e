"""Decision stage: frame encoding, model invocation, action validation,
reward computation, and transition assembly.

The reward for the action taken at window t is computed one window later,
when the successor state is known; degraded frames skip inference and break
the pending chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Protocol

import httpx

from . import expr as exprlang
from .errors import (
    ExprError,
    MissingFeature,
    ModelBadResponse,
    ModelError,
    ModelTimeout,
    ModelUnreachable,
    NonFiniteEncoding,
)
from .types import (
    EnvironmentConfig,
    MinMaxNorm,
    ModelSpec,
    NS_PER_S,
    Normalization,
    ZScoreNorm,
)
from .window import WindowFrame


@dataclass(frozen=True)
class FeatureVector:
    environment_id: str
    window_start: int
    values: tuple[float, ...]  # ordered as ModelSpec.features


@dataclass(frozen=True)
class Decision:
    environment_id: str
    window_start: int
    raw_action: dict  # verbatim model output, possibly hostile
    action: dict[str, float]  # validated, always within bounds
    valid: bool
    fallback_used: bool


@dataclass(frozen=True)
class Transition:
    environment_id: str
    window_start: int
    obs: dict[str, float]  # raw pre-normalization frame values
    qual: dict[str, str]
    enc: tuple[float, ...]
    raw_action: dict
    action: dict[str, float]
    valid: bool
    fallback_used: bool
    reward: float | None
    degraded: bool  # successor frame was degraded, breaking the chain


def normalize(x: float, norm: Normalization) -> float:
    if isinstance(norm, MinMaxNorm):
        return min(max((x - norm.lo) / (norm.hi - norm.lo), 0.0), 1.0)
    if isinstance(norm, ZScoreNorm):
        return (x - norm.mean) / norm.std
    return x


def decode_norm(v: float, norm: Normalization) -> float:
    """Inverse affine map of `normalize`; exposed for round-trip tests."""
    if isinstance(norm, MinMaxNorm):
        return norm.lo + v * (norm.hi - norm.lo)
    if isinstance(norm, ZScoreNorm):
        return norm.mean + v * norm.std
    return v


def encode(frame: WindowFrame, env: EnvironmentConfig) -> FeatureVector:
    """Normalize the frame into the model's feature order."""
    values = []
    for feature in env.model.features:
        if feature not in frame.values:
            raise MissingFeature(feature)
        norm = None
        if feature in env.signal_ids:
            norm = env.signal(feature).normalization
        x = normalize(frame.values[feature][0], norm)
        if not math.isfinite(x):
            raise NonFiniteEncoding(f"feature {feature!r} encoded to {x}")
        values.append(x)
    return FeatureVector(environment_id=frame.environment_id,
                         window_start=frame.window_start,
                         values=tuple(values))


class ModelClient(Protocol):
    def act(self, fv: FeatureVector) -> Mapping[str, float]: ...


class StubConstantClient:
    """Returns every action's configured default."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    def act(self, fv: FeatureVector) -> dict[str, float]:
        return {a.name: a.default for a in self.spec.actions}


class StubLinearClient:
    """Clamped linear policy over the encoded features."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    def act(self, fv: FeatureVector) -> dict[str, float]:
        out = {}
        for a in self.spec.actions:
            weights = self.spec.weights[a.name]
            raw = sum(w * x for w, x in zip(weights, fv.values))
            raw += self.spec.bias.get(a.name, 0.0)
            out[a.name] = min(max(raw, a.min), a.max)
        return out


class SidecarHttpClient:
    """Out-of-process model behind the POST /act wire protocol."""

    def __init__(self, spec: ModelSpec, client: httpx.Client | None = None):
        self.spec = spec
        self._client = client or httpx.Client()

    def act(self, fv: FeatureVector) -> dict[str, float]:
        request = {
            "env": fv.environment_id,
            "window_start": fv.window_start // NS_PER_S,
            "features": dict(zip(self.spec.features, fv.values)),
        }
        url = self.spec.endpoint.rstrip("/") + "/act"
        try:
            response = self._client.post(url, json=request,
                                         timeout=self.spec.timeout_ms / 1000.0)
        except httpx.TimeoutException as e:
            raise ModelTimeout(str(e)) from None
        except httpx.TransportError as e:
            raise ModelUnreachable(str(e)) from None
        if response.status_code != 200:
            raise ModelBadResponse(f"status {response.status_code}")
        try:
            body = response.json()
        except ValueError:
            raise ModelBadResponse("response body is not JSON") from None
        if not isinstance(body, dict) or not isinstance(body.get("action"), dict):
            raise ModelBadResponse("response missing action object")
        action = body["action"]
        expected = {a.name for a in self.spec.actions}
        if set(action) != expected:
            raise ModelBadResponse(
                f"action names {sorted(action)} != configured {sorted(expected)}")
        out = {}
        for name, value in action.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)) \
                    or not math.isfinite(value):
                raise ModelBadResponse(f"action {name!r} value {value!r} is not finite")
            out[name] = float(value)
        return out

    def health(self) -> bool:
        try:
            r = self._client.get(self.spec.endpoint.rstrip("/") + "/health",
                                 timeout=self.spec.timeout_ms / 1000.0)
            return r.status_code == 200
        except httpx.HTTPError:
            return False


def build_model_client(env: EnvironmentConfig) -> ModelClient:
    spec = env.model
    if spec.kind == "stub_constant":
        return StubConstantClient(spec)
    if spec.kind == "stub_linear":
        return StubLinearClient(spec)
    if spec.kind == "sidecar_http":
        return SidecarHttpClient(spec)
    raise ValueError(f"unknown model kind {spec.kind!r}")


def decide(raw_action: Mapping | None, spec: ModelSpec,
           environment_id: str, window_start: int) -> Decision:
    """Validate/decode model output into bounded action fields.

    A missing raw_action (model failure) yields the all-defaults fallback
    decision; per-field garbage is repaired per on_invalid.
    """
    if raw_action is None:
        return Decision(
            environment_id=environment_id,
            window_start=window_start,
            raw_action={},
            action={a.name: a.default for a in spec.actions},
            valid=False,
            fallback_used=True,
        )
    action: dict[str, float] = {}
    valid = True
    for a in spec.actions:
        value = raw_action.get(a.name)
        if isinstance(value, bool) or not isinstance(value, (int, float)) \
                or not math.isfinite(value):
            action[a.name] = a.default
            valid = False
            continue
        value = float(value)
        if value < a.min or value > a.max:
            valid = False
            if a.on_invalid == "clamp":
                action[a.name] = min(max(value, a.min), a.max)
            else:
                action[a.name] = a.default
        else:
            action[a.name] = value
    return Decision(
        environment_id=environment_id,
        window_start=window_start,
        raw_action=dict(raw_action),
        action=action,
        valid=valid,
        fallback_used=False,
    )


def reward_bindings(prev_frame: WindowFrame, action: Mapping[str, float],
                    cur_frame: WindowFrame) -> dict[str, float]:
    bindings = {f"cur.{k}": v for k, (v, _) in prev_frame.values.items()}
    bindings.update({f"next.{k}": v for k, (v, _) in cur_frame.values.items()})
    bindings.update({f"action.{k}": v for k, v in action.items()})
    return bindings


def compute_reward(reward: exprlang.Expr, prev_frame: WindowFrame,
                   action: Mapping[str, float], cur_frame: WindowFrame) -> float:
    """Reward of the action taken at prev_frame, observed at cur_frame."""
    return exprlang.eval_expr(reward, reward_bindings(prev_frame, action, cur_frame))


@dataclass
class StepResult:
    decision: Decision | None = None
    transition: Transition | None = None
    reward_error: bool = False
    model_error: ModelError | None = None


@dataclass
class _Pending:
    frame: WindowFrame
    fv: FeatureVector
    decision: Decision


class InferenceStage:
    """Serial per-environment orchestration of encode -> infer -> decide,
    with one-window-delayed reward completion."""

    def __init__(self, env: EnvironmentConfig, client: ModelClient | None = None):
        self.env = env
        self.client = client if client is not None else build_model_client(env)
        self._reward = exprlang.parse_expr(env.reward_expr)
        self._reward_fn = exprlang.compile_expr(self._reward)
        self._pending: _Pending | None = None

    def step(self, frame: WindowFrame) -> StepResult:
        result = StepResult()
        if self._pending is not None:
            pending = self._pending
            self._pending = None
            reward: float | None = None
            if frame.degraded:
                result.transition = self._complete(pending, None, degraded=True)
            else:
                try:
                    reward = exprlang.eval_expr(
                        self._reward,
                        reward_bindings(pending.frame, pending.decision.action, frame))
                except ExprError:
                    result.reward_error = True
                result.transition = self._complete(pending, reward, degraded=False)
        if not frame.degraded:
            fv = encode(frame, self.env)
            raw: Mapping | None
            try:
                raw = self.client.act(fv)
            except ModelError as e:
                raw = None
                result.model_error = e
            decision = decide(raw, self.env.model, frame.environment_id,
                              frame.window_start)
            self._pending = _Pending(frame=frame, fv=fv, decision=decision)
            result.decision = decision
        return result

    def flush(self) -> Transition | None:
        """Emit the final pending transition with a null reward at shutdown."""
        if self._pending is None:
            return None
        pending = self._pending
        self._pending = None
        return self._complete(pending, None, degraded=False)

    def _complete(self, pending: _Pending, reward: float | None,
                  degraded: bool) -> Transition:
        frame = pending.frame
        return Transition(
            environment_id=frame.environment_id,
            window_start=frame.window_start,
            obs={k: v for k, (v, _) in frame.values.items()},
            qual={k: q.label for k, (_, q) in frame.values.items()},
            enc=pending.fv.values,
            raw_action=pending.decision.raw_action,
            action=pending.decision.action,
            valid=pending.decision.valid,
            fallback_used=pending.decision.fallback_used,
            reward=reward,
            degraded=degraded,
        )
