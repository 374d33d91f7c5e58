"""
Exceptions raised by the dcabot pipeline stages.

Every error is a ValueError so callers that only care about "bad input" can catch that.
"""

import typing


class DcaBotError(ValueError):
    """
    Base class for every domain error in this package.
    """


class ConfigError(DcaBotError):
    """
    A domain config violates one of its invariants.
    """


class LogError(DcaBotError):
    """
    Base for SigLog/AntigLog/trace parsing errors.

    When raised from a file reader, `lineno` and `line` point at the offending input.
    """

    def __init__(self, message: str, line: str = None, lineno: int = None) -> None:
        """
        Store the offending line (and its position if known) next to the message.
        """
        self.message = message
        self.line = line
        self.lineno = lineno
        super().__init__(str(self))

    def at(self, lineno: int) -> "LogError":
        """
        Return the same error, annotated with a 1-based line number.
        """
        self.lineno = lineno
        self.args = (str(self),)
        return self

    def __str__(self) -> str:
        """
        Render as `line 3: message: '<offending text>'`.
        """
        prefix = f"line {self.lineno}: " if self.lineno is not None else ""
        suffix = f": {self.line!r}" if self.line is not None else ""
        return f"{prefix}{self.message}{suffix}"


class MalformedLine(LogError):
    """
    Wrong field count, non-numeric field, wrong type tag or non-positive pid.
    """


class OutOfRange(LogError):
    """
    A signal value outside [0, 100].
    """


class UnknownCall(LogError):
    """
    A function call name outside the monitored vocabulary.
    """

    def __init__(self, call: str, line: str = None, lineno: int = None) -> None:
        """
        Keep the offending call name around for reporting.
        """
        self.call = call
        super().__init__(f"unknown call {call!r}", line=line, lineno=lineno)


class UnsortedInput(DcaBotError):
    """
    A record sequence handed to merge_events decreases in tick.
    """


class UnsortedTrace(LogError):
    """
    A raw call trace is not sorted by time.
    """


class TraceOutOfRange(LogError):
    """
    A trace event falls at or beyond the declared session duration.
    """


class EmptyPopulation(DcaBotError):
    """
    A DCA run was configured without cells.
    """


class NoAntigen(DcaBotError):
    """
    MAC needs at least one antigen across all processes.
    """


class EmptySample(DcaBotError):
    """
    A rank test got an empty sample.
    """


class AllZero(DcaBotError):
    """
    Every paired difference is zero, nothing left to rank.
    """


class LengthMismatch(DcaBotError):
    """
    Two series that must be paired have different lengths.
    """


class DegenerateSeries(DcaBotError):
    """
    A constant series has no rank correlation.
    """


class TickMismatch(DcaBotError):
    """
    Two signal series do not cover the same ticks.
    """


class InvalidScenario(DcaBotError):
    """
    Unknown scenario id or unusable scenario parameters.
    """

    def __init__(self, message: str, scenario: typing.Optional[str] = None) -> None:
        """
        Keep the scenario id (if any) for reporting.
        """
        self.scenario = scenario
        super().__init__(message)
