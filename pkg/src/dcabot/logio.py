"""
SigLog / AntigLog parsing, canonical serialization and the time-merge that feeds the DCA.

Line formats (one record per line, angle-bracketed fields separated by single spaces):

    <0001> <signal> <11> <32> <89>
    <0002> <antigen> <722> <GetAsyncKeyState()>

A file may start with a `# run-manifest: {...}` header; any other line starting with `#` is a comment.
"""

import enum
import heapq
import json
import math
import re
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, TypeAlias

from .errors import LogError, MalformedLine, OutOfRange, UnknownCall, UnsortedInput

SIGNAL_MIN = 0.0
SIGNAL_MAX = 100.0

SIGNAL_TAG = "signal"
ANTIGEN_TAG = "antigen"

MANIFEST_PREFIX = "# run-manifest: "


class CallCategory(enum.Enum):
    """
    The three families of intercepted function calls.
    """

    communication = "communication"
    file = "file"
    keyboard = "keyboard"


COMMUNICATION_CALLS = ("socket", "connect", "send", "sendto", "recv", "recvfrom")
FILE_CALLS = ("CreateFile", "OpenFile", "ReadFile", "WriteFile")
KEYBOARD_CALLS = ("GetAsyncKeyState", "GetKeyboardState", "GetKeyNameText", "keybd_event")

CALL_CATEGORIES: dict[str, CallCategory] = {
    **{name: CallCategory.communication for name in COMMUNICATION_CALLS},
    **{name: CallCategory.file for name in FILE_CALLS},
    **{name: CallCategory.keyboard for name in KEYBOARD_CALLS},
}

# spellings seen in the wild that mean a monitored call
CALL_ALIASES = {
    "GetAsyncKeyStat": "GetAsyncKeyState",
}


def normalize_call(name: str) -> str:
    """
    Strip whitespace and a trailing "()" and resolve known aliases.

    Raises:
        UnknownCall: the name is not a monitored call.
    """
    clean = name.strip()
    if clean.endswith("()"):
        clean = clean[:-2].rstrip()
    clean = CALL_ALIASES.get(clean, clean)
    if clean not in CALL_CATEGORIES:
        raise UnknownCall(clean)
    return clean


def call_category(name: str) -> CallCategory:
    """
    Which family a (normalized or raw) call name belongs to.
    """
    return CALL_CATEGORIES[normalize_call(name)]


def is_keyboard_call(name: str) -> bool:
    """
    True for the keyboard-status calls used by user-mode keyloggers.
    """
    return call_category(name) is CallCategory.keyboard


@dataclass(frozen=True, slots=True)
class SignalRecord:
    """
    One SigLog line: the PAMP (s1), danger (s2) and safe (s3) signal at one tick, each in [0, 100].
    """

    tick: int
    s1: float
    s2: float
    s3: float

    def __post_init__(self) -> None:
        """
        Check the tick and the signal range.
        """
        if self.tick < 0:
            raise MalformedLine(f"negative tick {self.tick}")
        for name in ("s1", "s2", "s3"):
            value = getattr(self, name)
            if not SIGNAL_MIN <= value <= SIGNAL_MAX:
                raise OutOfRange(f"{name}={value} outside [{SIGNAL_MIN:g}, {SIGNAL_MAX:g}]")

    @property
    def signals(self) -> tuple[float, float, float]:
        """
        The (s1, s2, s3) triple.
        """
        return self.s1, self.s2, self.s3


@dataclass(frozen=True, slots=True)
class AntigenRecord:
    """
    One AntigLog line: the process that made a monitored call at some tick.
    """

    tick: int
    pid: int
    call: str

    def __post_init__(self) -> None:
        """
        Check tick and pid, and store the call name in its normalized form.
        """
        if self.tick < 0:
            raise MalformedLine(f"negative tick {self.tick}")
        if self.pid <= 0:
            raise MalformedLine(f"pid must be positive, got {self.pid}")
        object.__setattr__(self, "call", normalize_call(self.call))


Event: TypeAlias = SignalRecord | AntigenRecord

_LINE_RE = re.compile(r"\s*(?:<[^<>]*>\s*)+")
_FIELD_RE = re.compile(r"<([^<>]*)>")


def _fields(line: str) -> list[str]:
    text = line.rstrip("\r\n")
    if not _LINE_RE.fullmatch(text):
        raise MalformedLine("expected angle-bracketed fields", line=text)
    return [field.strip() for field in _FIELD_RE.findall(text)]


def _parse_tick(raw: str, line: str) -> int:
    if not raw.isdigit():
        raise MalformedLine(f"tick {raw!r} is not a non-negative integer", line=line)
    return int(raw)


def _parse_signal(raw: str, line: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise MalformedLine(f"signal {raw!r} is not numeric", line=line) from None
    if not math.isfinite(value):
        raise MalformedLine(f"signal {raw!r} is not finite", line=line)
    return value


def parse_sig_record(line: str) -> SignalRecord:
    """
    Parse `<tick> <signal> <S1> <S2> <S3>`.

    Raises:
        MalformedLine: wrong field count, non-numeric field or a type tag other than `signal`.
        OutOfRange: a signal outside [0, 100].
    """
    fields = _fields(line)
    if len(fields) != 5:
        raise MalformedLine(f"signal line needs 5 fields, got {len(fields)}", line=line.strip())
    tick, tag, *values = fields
    if tag != SIGNAL_TAG:
        raise MalformedLine(f"type tag {tag!r} is not {SIGNAL_TAG!r}", line=line.strip())

    s1, s2, s3 = (_parse_signal(v, line.strip()) for v in values)
    try:
        return SignalRecord(_parse_tick(tick, line.strip()), s1, s2, s3)
    except OutOfRange as e:
        raise OutOfRange(e.message, line=line.strip()) from None


def parse_antigen_record(line: str) -> AntigenRecord:
    """
    Parse `<tick> <antigen> <PID> <CallName()>`; the trailing "()" is optional.

    Raises:
        MalformedLine: wrong field count, non-numeric field, wrong type tag or a pid that is not positive.
        UnknownCall: the call name is not monitored.
    """
    fields = _fields(line)
    if len(fields) != 4:
        raise MalformedLine(f"antigen line needs 4 fields, got {len(fields)}", line=line.strip())
    tick, tag, pid, call = fields
    if tag != ANTIGEN_TAG:
        raise MalformedLine(f"type tag {tag!r} is not {ANTIGEN_TAG!r}", line=line.strip())
    if not pid.isdigit():
        raise MalformedLine(f"pid {pid!r} is not a positive integer", line=line.strip())

    try:
        return AntigenRecord(_parse_tick(tick, line.strip()), int(pid), call)
    except UnknownCall as e:
        raise UnknownCall(e.call, line=line.strip()) from None
    except MalformedLine as e:
        raise MalformedLine(e.message, line=line.strip()) from None


def parse_event(line: str) -> Event:
    """
    Parse either kind of line, dispatching on the type tag.
    """
    fields = _fields(line)
    if len(fields) >= 2 and fields[1] == SIGNAL_TAG:
        return parse_sig_record(line)
    if len(fields) >= 2 and fields[1] == ANTIGEN_TAG:
        return parse_antigen_record(line)
    raise MalformedLine("type tag must be 'signal' or 'antigen'", line=line.strip())


def format_number(value: float) -> str:
    """
    Shortest decimal that reads back as the same float; whole numbers lose their '.0'.
    """
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def serialize_sig_record(record: SignalRecord) -> str:
    """
    Canonical SigLog line for a record.
    """
    s1, s2, s3 = (format_number(v) for v in record.signals)
    return f"<{record.tick:04d}> <{SIGNAL_TAG}> <{s1}> <{s2}> <{s3}>"


def serialize_antigen_record(record: AntigenRecord) -> str:
    """
    Canonical AntigLog line for a record.
    """
    return f"<{record.tick:04d}> <{ANTIGEN_TAG}> <{record.pid}> <{record.call}()>"


def serialize_event(record: Event) -> str:
    """
    Canonical line for either kind of record.
    """
    if isinstance(record, SignalRecord):
        return serialize_sig_record(record)
    return serialize_antigen_record(record)


def _check_sorted(records: typing.Sequence[Event], what: str) -> None:
    for previous, current in zip(records, records[1:]):
        if current.tick < previous.tick:
            raise UnsortedInput(f"{what} go back in time: tick {current.tick} after tick {previous.tick}")


def merge_events(signals: typing.Sequence[SignalRecord], antigens: typing.Sequence[AntigenRecord]) -> list[Event]:
    """
    Merge the signal and antigen streams by tick.

    Within one tick every signal comes before every antigen, so cells see the current signals before they sample.
    Each kind keeps its own order.

    Raises:
        UnsortedInput: either input decreases in tick.
    """
    _check_sorted(signals, "signals")
    _check_sorted(antigens, "antigens")
    # heapq.merge breaks key ties by iterable order: signals first
    return list(heapq.merge(signals, antigens, key=lambda record: record.tick))


Manifest: TypeAlias = dict[str, Any]

T_Record = typing.TypeVar("T_Record")


def _parse_manifest(text: str, lineno: int) -> Manifest:
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedLine(f"broken run manifest ({e.msg})", line=text, lineno=lineno) from None
    if not isinstance(manifest, dict):
        raise MalformedLine("run manifest is not a JSON object", line=text, lineno=lineno)
    return manifest


def read_lines(
    path: str | Path, parse: typing.Callable[[str], T_Record]
) -> tuple[list[T_Record], Optional[Manifest]]:
    """
    Parse every record line of a file with `parse`, picking up the manifest header on the way.

    Raises:
        LogError: annotated with the 1-based line number of the offending line.
    """
    records: list[T_Record] = []
    manifest: Optional[Manifest] = None
    with open(path, "rb") as f:
        for lineno, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise MalformedLine(f"not UTF-8 text ({e.reason})", lineno=lineno) from None
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith(MANIFEST_PREFIX.strip()):
                manifest = _parse_manifest(stripped[len(MANIFEST_PREFIX.strip()) :], lineno)
                continue
            if stripped.startswith("#"):
                continue
            try:
                records.append(parse(stripped))
            except LogError as e:
                raise e.at(lineno) from None
    return records, manifest


def read_sig_log(path: str | Path) -> tuple[list[SignalRecord], Optional[Manifest]]:
    """
    Read a SigLog file; returns its records and its manifest header (if any).
    """
    return read_lines(path, parse_sig_record)


def read_antigen_log(path: str | Path) -> tuple[list[AntigenRecord], Optional[Manifest]]:
    """
    Read an AntigLog file; returns its records and its manifest header (if any).
    """
    return read_lines(path, parse_antigen_record)


def read_events(path: str | Path) -> tuple[list[Event], Optional[Manifest]]:
    """
    Read a merged log (both kinds of lines).

    Raises:
        UnsortedInput: the log goes back in time.
    """
    events, manifest = read_lines(path, parse_event)
    _check_sorted(events, "events")
    return events, manifest


def manifest_header(manifest: Manifest) -> str:
    """
    The comment line that embeds a run manifest in a log file.
    """
    return MANIFEST_PREFIX + json.dumps(manifest, sort_keys=True, default=str)


def write_lines(path: str | Path, lines: Iterable[str], manifest: Optional[Manifest] = None) -> int:
    """
    Write text lines to a file, preceded by the manifest header when there is one.

    Returns:
        the number of lines written (header excluded)
    """
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if manifest is not None:
            f.write(manifest_header(manifest) + "\n")
        for line in lines:
            f.write(line + "\n")
            count += 1
    return count


def write_log(path: str | Path, records: Iterable[Event], manifest: Optional[Manifest] = None) -> int:
    """
    Write records as canonical lines, preceded by the manifest header.

    Returns:
        the number of records written
    """
    return write_lines(path, (serialize_event(record) for record in records), manifest)
