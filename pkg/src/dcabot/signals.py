"""
Turn a raw function-call trace into the per-second PAMP / danger / safe signals (and the antigen stream).

- S1 (PAMP): how many keyboard-status calls the whole system made in that second.
- S2 (danger): how quickly any process sent data after receiving some; fast replies are dangerous.
- S3 (safe): how far apart two identical outbound calls of one process are; long gaps are safe, floods are not.
"""

import enum
import math
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, LogError, MalformedLine, TraceOutOfRange, UnknownCall, UnsortedTrace
from .logio import (
    SIGNAL_MAX,
    SIGNAL_MIN,
    AntigenRecord,
    CallCategory,
    Manifest,
    SignalRecord,
    call_category,
    normalize_call,
    read_lines,
    write_lines,
)


class Direction(enum.Enum):
    """
    Which way a communication call moves data; file and keyboard calls have none.
    """

    inbound = "inbound"
    outbound = "outbound"
    none = "none"


INBOUND_CALLS = ("recv", "recvfrom")
OUTBOUND_CALLS = ("send", "sendto", "socket", "connect")
# outbound calls that actually carry a reply; used to pair with a preceding recv
DATA_OUTBOUND_CALLS = ("send", "sendto")


def direction_of(call: str) -> Direction:
    """
    The direction a monitored call implies.
    """
    name = normalize_call(call)
    if name in INBOUND_CALLS:
        return Direction.inbound
    if name in OUTBOUND_CALLS:
        return Direction.outbound
    return Direction.none


@dataclass(frozen=True, slots=True)
class RawCallEvent:
    """
    One intercepted function call, as produced by the simulator or an external tracer.
    """

    t_ms: int
    pid: int
    proc_name: str
    call: str
    direction: Direction

    def __post_init__(self) -> None:
        """
        Normalize the call name and make sure the direction matches it.
        """
        if self.t_ms < 0:
            raise MalformedLine(f"negative time {self.t_ms}")
        if self.pid <= 0:
            raise MalformedLine(f"pid must be positive, got {self.pid}")
        object.__setattr__(self, "call", normalize_call(self.call))
        if self.direction is not direction_of(self.call):
            raise MalformedLine(f"{self.call} cannot be {self.direction.value}")

    @property
    def tick(self) -> int:
        """
        The whole second this call falls in.
        """
        return self.t_ms // 1000

    @classmethod
    def of(cls, t_ms: int, pid: int, proc_name: str, call: str) -> "RawCallEvent":
        """
        Build an event, deriving the direction from the call.
        """
        return cls(t_ms, pid, proc_name, call, direction_of(call))


@dataclass(frozen=True)
class NormalizationConfig:
    """
    Saturation points of the three signal maps.

    n_ps: keyboard-status calls per second that count as full-strength keylogging
    n_ds: send-after-recv latency (s) at or above which a reply is no longer dangerous
    n_ss1 / n_ss2: outbound gap (s) below which traffic is a flood / above which it is plainly human
    """

    n_ps: float = 40.0
    n_ds: float = 10.0
    n_ss1: float = 5.0
    n_ss2: float = 20.0

    def __post_init__(self) -> None:
        """
        Enforce positive scales and n_ss1 < n_ss2.
        """
        if self.n_ps <= 0 or self.n_ds <= 0:
            raise ConfigError(f"n_ps and n_ds must be positive (got {self.n_ps}, {self.n_ds})")
        if not 0 < self.n_ss1 < self.n_ss2:
            raise ConfigError(f"need 0 < n_ss1 < n_ss2 (got {self.n_ss1}, {self.n_ss2})")


DEFAULT_NORMALIZATION = NormalizationConfig()


def _clamp(value: float) -> float:
    return min(SIGNAL_MAX, max(SIGNAL_MIN, value))


def normalize_ps(rate: float, cfg: NormalizationConfig = DEFAULT_NORMALIZATION) -> float:
    """
    Keyboard-status call rate → PAMP, saturating at n_ps calls per second.
    """
    return _clamp(min(rate / cfg.n_ps, 1.0) * SIGNAL_MAX)


def normalize_ds(dt: float, cfg: NormalizationConfig = DEFAULT_NORMALIZATION) -> float:
    """
    Send-after-recv latency → danger: 0 s is 100, n_ds and beyond is 0, linear in between.
    """
    if dt >= cfg.n_ds:
        return SIGNAL_MIN
    return _clamp(SIGNAL_MAX * (1.0 - dt / cfg.n_ds))


def normalize_ss(dt: float, cfg: NormalizationConfig = DEFAULT_NORMALIZATION) -> float:
    """
    Gap between identical outbound calls → safe: min-safe (≤ n_ss1) is 0, max-safe (≥ n_ss2) is 100.
    """
    if dt <= cfg.n_ss1:
        return SIGNAL_MIN
    if dt >= cfg.n_ss2:
        return SIGNAL_MAX
    return _clamp(SIGNAL_MAX * (dt - cfg.n_ss1) / (cfg.n_ss2 - cfg.n_ss1))


def _check_sorted(trace: typing.Sequence[RawCallEvent]) -> None:
    for previous, current in zip(trace, trace[1:]):
        if current.t_ms < previous.t_ms:
            raise UnsortedTrace(f"trace goes back in time: {current.t_ms} ms after {previous.t_ms} ms")


def tick_count(trace: typing.Sequence[RawCallEvent], duration_s: Optional[float] = None) -> int:
    """
    How many one-second ticks a trace covers.

    With an explicit duration that is ceil(duration); otherwise the last event's second plus one.
    """
    if duration_s is not None:
        return math.ceil(duration_s)
    if not trace:
        return 0
    return trace[-1].tick + 1


def derive_signals(
    trace: typing.Sequence[RawCallEvent],
    cfg: NormalizationConfig = DEFAULT_NORMALIZATION,
    duration_s: Optional[float] = None,
) -> list[SignalRecord]:
    """
    Build one SignalRecord per elapsed second of a trace.

    Quiet seconds default to S1=0 (no keyboard polling), S2=0 (no reply seen) and S3=100 (no flood seen).
    Per-process latencies and gaps are reduced to the most dangerous value of the second (the minimum).

    Args:
        trace: calls sorted by t_ms
        cfg: normalization constants
        duration_s: session length; defaults to just past the last event

    Raises:
        UnsortedTrace: the trace is not sorted by time.
        TraceOutOfRange: an event falls at or after duration_s.
    """
    _check_sorted(trace)
    n_ticks = tick_count(trace, duration_s)
    if trace and trace[-1].tick >= n_ticks:
        raise TraceOutOfRange(f"event at {trace[-1].t_ms} ms is past the {n_ticks} s session")

    keyboard_calls = np.zeros(n_ticks, dtype=np.int64)
    min_latency = np.full(n_ticks, np.inf)
    min_gap = np.full(n_ticks, np.inf)

    # pid -> time of the latest recv not yet answered
    pending_recv: dict[int, int] = {}
    # (pid, call) -> time of the previous identical outbound call
    last_outbound: dict[tuple[int, str], int] = {}

    for event in trace:
        tick = event.tick
        if call_category(event.call) is CallCategory.keyboard:
            keyboard_calls[tick] += 1
        elif event.direction is Direction.inbound:
            pending_recv[event.pid] = event.t_ms
        elif event.direction is Direction.outbound:
            if event.call in DATA_OUTBOUND_CALLS and event.pid in pending_recv:
                latency = (event.t_ms - pending_recv.pop(event.pid)) / 1000
                min_latency[tick] = min(min_latency[tick], latency)

            key = (event.pid, event.call)
            if key in last_outbound:
                gap = (event.t_ms - last_outbound[key]) / 1000
                min_gap[tick] = min(min_gap[tick], gap)
            last_outbound[key] = event.t_ms

    return [
        SignalRecord(
            tick=tick,
            s1=normalize_ps(float(keyboard_calls[tick]), cfg),
            s2=normalize_ds(float(min_latency[tick]), cfg) if np.isfinite(min_latency[tick]) else SIGNAL_MIN,
            s3=normalize_ss(float(min_gap[tick]), cfg) if np.isfinite(min_gap[tick]) else SIGNAL_MAX,
        )
        for tick in range(n_ticks)
    ]


def derive_antigens(trace: Iterable[RawCallEvent]) -> list[AntigenRecord]:
    """
    Every intercepted call becomes an antigen carrying its process ID.
    """
    return [AntigenRecord(event.tick, event.pid, event.call) for event in trace]


def parse_trace_line(line: str) -> RawCallEvent:
    """
    Parse `t_ms pid proc_name call direction`.

    Raises:
        MalformedLine: wrong field count, bad numbers, bad direction or a direction that contradicts the call.
        UnknownCall: the call is not monitored.
    """
    text = line.strip()
    fields = text.split()
    if len(fields) != 5:
        raise MalformedLine(f"trace line needs 5 fields, got {len(fields)}", line=text)
    t_ms, pid, proc_name, call, direction = fields
    if not t_ms.isdigit() or not pid.isdigit():
        raise MalformedLine("time and pid must be non-negative integers", line=text)
    try:
        return RawCallEvent(int(t_ms), int(pid), proc_name, call, Direction(direction))
    except ValueError as e:
        if isinstance(e, UnknownCall):
            raise UnknownCall(e.call, line=text) from None
        message = e.message if isinstance(e, LogError) else f"unknown direction {direction!r}"
        raise MalformedLine(message, line=text) from None


def serialize_trace_line(event: RawCallEvent) -> str:
    """
    Canonical raw trace line.
    """
    return f"{event.t_ms} {event.pid} {event.proc_name} {event.call} {event.direction.value}"


def read_trace(path: str | Path) -> tuple[list[RawCallEvent], Optional[Manifest]]:
    """
    Read a raw trace file; returns its events and its manifest header (if any).
    """
    return read_lines(path, parse_trace_line)


def write_trace(path: str | Path, events: Iterable[RawCallEvent], manifest: Optional[Manifest] = None) -> int:
    """
    Write a raw trace file (manifest header first).

    Returns:
        the number of events written
    """
    return write_lines(path, (serialize_trace_line(event) for event in events), manifest)
