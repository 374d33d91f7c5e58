"""
The Spearman rank correlation baseline detector.

Correlates the PAMP and danger signals with the safe signal over a whole session
and grades a detection Normal / Weak / Medium / Strong, provided keylogging was seen at all.
"""

import enum
import typing
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateSeries, LengthMismatch, TickMismatch
from .logio import SIGNAL_MAX, SIGNAL_MIN, AntigenRecord, SignalRecord, is_keyboard_call

DEFAULT_SRC_THRESHOLD = 0.5


class Confidence(enum.Enum):
    """
    Detection confidence of the SRC detector.
    """

    normal = "Normal"
    weak = "Weak"
    medium = "Medium"
    strong = "Strong"


@dataclass(frozen=True)
class SignalSeries:
    """
    (tick, value) pairs of one signal, ticks strictly increasing.
    """

    pairs: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        """
        Check tick order and value range.
        """
        ticks = [tick for tick, _ in self.pairs]
        if any(later <= earlier for earlier, later in zip(ticks, ticks[1:])):
            raise ValueError("series ticks must be strictly increasing")
        if any(not SIGNAL_MIN <= value <= SIGNAL_MAX for _, value in self.pairs):
            raise ValueError("series values must lie in [0, 100]")

    @classmethod
    def of(cls, values: Iterable[float], start: int = 0) -> "SignalSeries":
        """
        Number consecutive values from `start`.
        """
        return cls(tuple((start + offset, float(value)) for offset, value in enumerate(values)))

    @property
    def ticks(self) -> list[int]:
        """
        The ticks in order.
        """
        return [tick for tick, _ in self.pairs]

    @property
    def values(self) -> list[float]:
        """
        The values in tick order.
        """
        return [value for _, value in self.pairs]

    def __len__(self) -> int:
        """
        Number of pairs.
        """
        return len(self.pairs)


@dataclass(frozen=True)
class SrcVerdict:
    """
    Outcome of the SRC detector; a rho of None could not be computed (constant or too short series).
    """

    rho13: Optional[float]
    rho23: Optional[float]
    keylog_seen: bool
    confidence: Confidence

    @property
    def undefined(self) -> bool:
        """
        Whether either correlation is missing.
        """
        return self.rho13 is None or self.rho23 is None


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Pearson correlation of the mid-ranks of x and y.

    Raises:
        LengthMismatch: x and y differ in length.
        DegenerateSeries: fewer than two points, or a constant series.
    """
    if len(x) != len(y):
        raise LengthMismatch(f"cannot pair {len(x)} values with {len(y)}")
    if len(x) < 2:
        raise DegenerateSeries("rank correlation needs at least two points")

    rx = rankdata(np.asarray(x, dtype=float))
    ry = rankdata(np.asarray(y, dtype=float))
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float((dx * dx).sum())
    syy = float((dy * dy).sum())
    if sxx == 0 or syy == 0:
        raise DegenerateSeries("a constant series has no rank correlation")

    rho = float((dx * dy).sum()) / float(np.sqrt(sxx * syy))
    return max(-1.0, min(1.0, rho))


def strip_idle(a: SignalSeries, b: SignalSeries) -> tuple[SignalSeries, SignalSeries]:
    """
    Drop every tick where both series are zero.

    Raises:
        TickMismatch: the series do not cover the same ticks.
    """
    if a.ticks != b.ticks:
        raise TickMismatch("series must cover identical ticks")

    kept = [(pa, pb) for pa, pb in zip(a.pairs, b.pairs) if pa[1] != 0 or pb[1] != 0]
    return SignalSeries(tuple(pa for pa, _ in kept)), SignalSeries(tuple(pb for _, pb in kept))


def classify_src(
    keylog_seen: bool, rho13: Optional[float], rho23: Optional[float], threshold: float = DEFAULT_SRC_THRESHOLD
) -> SrcVerdict:
    """
    Grade a detection.

    No keylogging is always Normal. With keylogging: both rho at or above the threshold is Strong,
    exactly one is Medium, neither is Weak. An undefined rho falls back to Weak.
    """
    if not keylog_seen:
        confidence = Confidence.normal
    elif rho13 is None or rho23 is None:
        confidence = Confidence.weak
    else:
        high = (rho13 >= threshold) + (rho23 >= threshold)
        confidence = (Confidence.weak, Confidence.medium, Confidence.strong)[high]
    return SrcVerdict(rho13, rho23, keylog_seen, confidence)


def _rho_or_none(a: SignalSeries, b: SignalSeries) -> Optional[float]:
    try:
        return spearman_rho(a.values, b.values)
    except DegenerateSeries:
        return None


def series_from_log(sig_log: Sequence[SignalRecord]) -> tuple[SignalSeries, SignalSeries, SignalSeries]:
    """
    Split a SigLog into its S1, S2 and S3 series.
    """
    return (
        SignalSeries(tuple((r.tick, r.s1) for r in sig_log)),
        SignalSeries(tuple((r.tick, r.s2) for r in sig_log)),
        SignalSeries(tuple((r.tick, r.s3) for r in sig_log)),
    )


def run_src(
    sig_log: Sequence[SignalRecord], keylog_seen: bool, threshold: float = DEFAULT_SRC_THRESHOLD
) -> tuple[SrcVerdict, SrcVerdict]:
    """
    Correlate (S1, S3) and (S2, S3) over the raw session (Z) and with idle ticks removed per pair (NZ).

    Returns:
        (verdict over raw series, verdict over stripped series)
    """
    s1, s2, s3 = series_from_log(sig_log)

    z = classify_src(keylog_seen, _rho_or_none(s1, s3), _rho_or_none(s2, s3), threshold)
    nz = classify_src(
        keylog_seen,
        _rho_or_none(*strip_idle(s1, s3)),
        _rho_or_none(*strip_idle(s2, s3)),
        threshold,
    )
    return z, nz


def keylog_seen(antigens: Iterable[AntigenRecord], pids: Optional[typing.Collection[int]] = None) -> bool:
    """
    Did any process (or any of `pids`) call a keyboard-status function?
    """
    return any(is_keyboard_call(record.call) for record in antigens if pids is None or record.pid in pids)


def _format_rho(rho: Optional[float]) -> str:
    return "NA" if rho is None else f"{rho:.2f}"


def format_verdict_line(z: SrcVerdict, nz: SrcVerdict) -> str:
    """
    `rho13_Z rho13_NZ rho23_Z rho23_NZ keylog confidence`; the confidence is the one over idle-stripped series.
    """
    return " ".join(
        [
            _format_rho(z.rho13),
            _format_rho(nz.rho13),
            _format_rho(z.rho23),
            _format_rho(nz.rho23),
            "Yes" if nz.keylog_seen else "No",
            nz.confidence.value,
        ]
    )
