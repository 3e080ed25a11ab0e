"""Per-environment tumbling-window harmonization.

Consumes measurements for one environment, assigns them to windows, and at
each watermark crossing emits exactly one complete frame per window:
aggregation over in-window samples, robust spike correction, gap filling
from recent or historical state, and weighted fusion of derived signals.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .errors import GapUnfillable, NoSamples, TimestampBeforeOrigin
from .types import (
    AnomalyParams,
    DerivedSignalSpec,
    EnvironmentConfig,
    Measurement,
    Quality,
    SignalSpec,
    seconds_to_ns,
)

# Robust z-score: 1.4826 scales MAD to the stddev of a normal distribution;
# the epsilon keeps constant buffers from dividing by zero.
MAD_SCALE = 1.4826
MAD_EPSILON = 1e-9
MIN_DETECT_SAMPLES = 5


def assign_window(event_time_ns: int, window_ns: int, origin_ns: int) -> tuple[int, int]:
    """Half-open window [start, end) containing the timestamp; boundaries
    belong to the later window."""
    if event_time_ns < origin_ns:
        raise TimestampBeforeOrigin(
            f"event time {event_time_ns} precedes epoch origin {origin_ns}")
    k = (event_time_ns - origin_ns) // window_ns
    start = origin_ns + k * window_ns
    return start, start + window_ns


def median(values: Iterable[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    if n == 0:
        raise ValueError("median of empty sequence")
    mid = n // 2
    if n % 2 == 1:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def detect_and_correct(x: float, buffer: Iterable[float],
                       params: AnomalyParams | None) -> tuple[float, Quality]:
    """Robust spike check against the trailing buffer.

    Returns the accepted value and its quality; the caller pushes the
    accepted value back into the buffer. Detection needs at least
    MIN_DETECT_SAMPLES buffered values.
    """
    if params is None:
        return x, Quality.MEASURED
    buf = list(buffer)
    if len(buf) < MIN_DETECT_SAMPLES:
        return x, Quality.MEASURED
    center = median(buf)
    mad = median(abs(v - center) for v in buf)
    z = abs(x - center) / (MAD_SCALE * mad + MAD_EPSILON)
    if z > params.z_threshold:
        return center, Quality.CORRECTED
    return x, Quality.MEASURED


def aggregate(samples: list[tuple[int, float]], method: str) -> float:
    """Reduce in-window (event_time, value) samples; `last` breaks timestamp
    ties by later list position."""
    if not samples:
        raise NoSamples("aggregate requires at least one sample")
    if method == "last":
        best_t, best_v = samples[0]
        for t, v in samples[1:]:
            if t >= best_t:
                best_t, best_v = t, v
        return best_v
    values = [v for _, v in samples]
    if method == "mean":
        return sum(values) / len(values)
    if method == "sum":
        return sum(values)
    if method == "min":
        return min(values)
    if method == "max":
        return max(values)
    raise ValueError(f"unknown aggregation {method!r}")


@dataclass
class SignalState:
    """Mutable per-signal state owned by one environment's worker."""

    spec: SignalSpec
    pending: list[tuple[int, float, int]] = field(default_factory=list)  # (t, value, seq)
    buffer: deque = field(default_factory=deque)  # accepted values, detection window
    last_good: tuple[int, float] | None = None
    prev_good: tuple[int, float] | None = None
    history: deque = field(default_factory=deque)  # (t, accepted value)

    def __post_init__(self) -> None:
        if self.spec.anomaly is not None:
            self.buffer = deque(maxlen=self.spec.anomaly.buffer_len)


def fill_gap(spec: SignalSpec, window_start: int, window_ns: int,
             state: SignalState, env: EnvironmentConfig) -> tuple[float, Quality]:
    """Produce a value for a signal with zero in-window samples."""
    if spec.gap_fill == "fail":
        raise GapUnfillable(spec.signal_id, "gap_fill policy is fail")
    if spec.gap_fill == "locf":
        return _locf(spec, window_start, state)
    if spec.gap_fill == "linear":
        if state.last_good is None or state.prev_good is None:
            # not enough points for a slope; degrade gracefully to a carry
            return _locf(spec, window_start, state)
        t0, v0 = state.prev_good
        t1, v1 = state.last_good
        midpoint = window_start + window_ns // 2
        value = v1 + (v1 - v0) * (float(midpoint - t1) / float(t1 - t0))
        if spec.bounds is not None:
            lo, hi = spec.bounds
            value = min(max(value, lo), hi)
        return value, Quality.PREDICTED
    if spec.gap_fill == "historical_mean":
        matched = _history_slot_values(spec, state, window_start, window_ns, env)
        if matched:
            return sum(matched) / len(matched), Quality.PREDICTED
        return _locf(spec, window_start, state)
    raise ValueError(f"unknown gap_fill {spec.gap_fill!r}")


def _locf(spec: SignalSpec, window_start: int, state: SignalState) -> tuple[float, Quality]:
    if state.last_good is None:
        raise GapUnfillable(spec.signal_id, "no previous value to carry")
    t, v = state.last_good
    if window_start - t > seconds_to_ns(spec.max_staleness_s):
        raise GapUnfillable(spec.signal_id, "last value exceeds staleness horizon")
    return v, Quality.CARRIED


def _history_slot_values(spec: SignalSpec, state: SignalState, window_start: int,
                         window_ns: int, env: EnvironmentConfig) -> list[float]:
    """History values whose time-of-day falls within half a window of the
    gap window's midpoint time-of-day (circular distance)."""
    day_ns = seconds_to_ns(env.day_seconds)
    half_window = window_ns // 2
    midpoint_tod = (window_start + window_ns // 2 - env.epoch_origin_ns) % day_ns
    matched = []
    for t, v in state.history:
        tod = (t - env.epoch_origin_ns) % day_ns
        dist = abs(tod - midpoint_tod)
        if min(dist, day_ns - dist) <= half_window:
            matched.append(v)
    return matched


def fuse(spec: DerivedSignalSpec,
         members: list[tuple[float, Quality, float]]) -> tuple[float, Quality]:
    """Weighted average of member (value, quality, weight); quality is the
    worst member quality under the total order."""
    weighted = 0.0
    total = 0.0
    worst = Quality.MEASURED
    for value, quality, weight in members:
        weighted += weight * value
        total += weight
        if quality > worst:
            worst = quality
    return weighted / total, worst


@dataclass(frozen=True)
class WindowFrame:
    """One closed window: a complete signal map plus provenance."""

    environment_id: str
    window_start: int
    window_end: int
    values: dict[str, tuple[float, Quality]]
    completeness: float
    degraded: bool

    def value(self, signal_id: str) -> float:
        return self.values[signal_id][0]

    def to_wire(self) -> dict:
        return {
            "env": self.environment_id,
            "window_start": self.window_start,
            "window_end": self.window_end,
            "values": {k: v for k, (v, _) in self.values.items()},
            "qual": {k: q.label for k, (_, q) in self.values.items()},
            "completeness": self.completeness,
            "degraded": self.degraded,
        }


@dataclass(frozen=True)
class CloseStats:
    """Bookkeeping from one window close, for the metrics counters."""

    corrected: int
    fills: dict[str, int]  # configured policy -> count
    unfillable: tuple[str, ...]


LateHook = Callable[[Measurement, int], None]  # (measurement, window_start)


class WindowWorker:
    """Owns all signal state for one environment; single-threaded consumer."""

    def __init__(self, env: EnvironmentConfig, on_late: LateHook | None = None):
        self.env = env
        self.on_late = on_late
        self.states = {s.signal_id: SignalState(s) for s in env.signals}
        self.next_window_start: int | None = None
        self._seq = 0
        self._last_emitted_start: int | None = None

    def start(self, at_ns: int) -> None:
        """Align the first window to the one containing `at_ns`."""
        start, _ = assign_window(at_ns, self.env.window_ns, self.env.epoch_origin_ns)
        self.next_window_start = start

    def offer(self, m: Measurement) -> bool:
        """Accept one measurement; returns False when it is late for every
        open window (counted, never merged)."""
        if self.next_window_start is None:
            self.start(m.event_time)
        if m.event_time < self.next_window_start:
            if self.on_late is not None:
                self.on_late(m, self.next_window_start)
            return False
        state = self.states[m.signal_id]
        state.pending.append((m.event_time, m.value, self._seq))
        self._seq += 1
        return True

    def advance_to(self, watermark_ns: int) -> list[tuple[WindowFrame, CloseStats]]:
        """Close every window whose grace period the watermark has passed,
        in strictly increasing window order."""
        if self.next_window_start is None:
            return []
        out = []
        while self.next_window_start + self.env.window_ns + self.env.grace_ns <= watermark_ns:
            out.append(self._close(self.next_window_start))
            self.next_window_start += self.env.window_ns
        return out

    def _close(self, start: int) -> tuple[WindowFrame, CloseStats]:
        env = self.env
        end = start + env.window_ns
        horizon_ns = seconds_to_ns(env.history_days * env.day_seconds)
        values: dict[str, tuple[float, Quality]] = {}
        corrected = 0
        fills: dict[str, int] = {}
        unfillable: list[str] = []
        for spec in env.signals:
            state = self.states[spec.signal_id]
            in_window = [s for s in state.pending if s[0] < end]
            state.pending = [s for s in state.pending if s[0] >= end]
            if in_window:
                in_window.sort(key=lambda s: (s[0], s[2]))
                accepted: list[tuple[int, float]] = []
                window_corrected = False
                for t, value, _seq in in_window:
                    value, quality = detect_and_correct(value, state.buffer, spec.anomaly)
                    if quality is Quality.CORRECTED:
                        corrected += 1
                        window_corrected = True
                    if spec.anomaly is not None:
                        state.buffer.append(value)
                    accepted.append((t, value))
                values[spec.signal_id] = (
                    aggregate(accepted, spec.aggregation),
                    Quality.CORRECTED if window_corrected else Quality.MEASURED,
                )
                for t, value in accepted:
                    state.prev_good = state.last_good
                    state.last_good = (t, value)
                    state.history.append((t, value))
            else:
                try:
                    values[spec.signal_id] = fill_gap(spec, start, env.window_ns, state, env)
                    fills[spec.gap_fill] = fills.get(spec.gap_fill, 0) + 1
                except GapUnfillable:
                    # last-resort substitution keeps the frame tiling time;
                    # inference skips degraded frames
                    values[spec.signal_id] = (0.0, Quality.PREDICTED)
                    unfillable.append(spec.signal_id)
            while state.history and state.history[0][0] < end - horizon_ns:
                state.history.popleft()
        for dspec in env.derived:
            if any(member in unfillable for member, _ in dspec.members):
                values[dspec.signal_id] = (0.0, Quality.PREDICTED)
                unfillable.append(dspec.signal_id)
                continue
            members = [(values[member][0], values[member][1], weight)
                       for member, weight in dspec.members]
            values[dspec.signal_id] = fuse(dspec, members)
        ok = sum(1 for s in env.signals
                 if values[s.signal_id][1] in (Quality.MEASURED, Quality.CORRECTED))
        frame = WindowFrame(
            environment_id=env.environment_id,
            window_start=start,
            window_end=end,
            values=values,
            completeness=ok / len(env.signals),
            degraded=bool(unfillable),
        )
        if self._last_emitted_start is not None:
            assert frame.window_start == self._last_emitted_start + env.window_ns, \
                "frame emission must tile time"
        self._last_emitted_start = frame.window_start
        return frame, CloseStats(corrected=corrected, fills=fills,
                                 unfillable=tuple(unfillable))
