"""
Post-run scoring of presented antigen (MCAV, MAC), thresholding and the rank tests used to compare runs.
"""

import enum
import functools
import math
import typing
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .dca import MATURE, PresentedAntigen
from .errors import AllZero, EmptySample, NoAntigen

DEFAULT_MCAV_THRESHOLD = 0.5
DEFAULT_MAC_THRESHOLD = 0.2

# sample sizes up to this use the exact null distribution
EXACT_LIMIT = 20


class Verdict(enum.Enum):
    """
    Outcome of thresholding an anomaly coefficient.
    """

    normal = "normal"
    anomalous = "anomalous"


class Method(enum.Enum):
    """
    How a p-value was obtained.
    """

    exact = "exact"
    normal_approximation = "normal-approximation"


@dataclass(frozen=True)
class AntigenTally:
    """
    Presentation counts of one process: Z_x (mature) out of Y_x (all).
    """

    pid: int
    mature_count: int
    antigen_count: int

    @property
    def mcav(self) -> float:
        """
        Mature context antigen value, Z_x / Y_x.
        """
        return self.mature_count / self.antigen_count


def mcav(presented: Iterable[PresentedAntigen]) -> dict[int, AntigenTally]:
    """
    Tally presentations per pid, ordered by pid. Pids that never presented are absent.
    """
    mature: dict[int, int] = {}
    total: dict[int, int] = {}
    for item in presented:
        total[item.pid] = total.get(item.pid, 0) + item.count
        if item.context == MATURE:
            mature[item.pid] = mature.get(item.pid, 0) + item.count

    return {
        pid: AntigenTally(pid, mature.get(pid, 0), count) for pid, count in sorted(total.items()) if count > 0
    }


def mac(scores: Mapping[int, tuple[float, float]]) -> dict[int, float]:
    """
    MCAV antigen coefficient: each MCAV weighted by the process's share of all antigen.

    Args:
        scores: pid -> (MCAV_x, Antigen_x); antigen amounts may be fractional (means over runs)

    Raises:
        NoAntigen: the antigen amounts sum to zero.
    """
    grand_total = sum(antigen for _, antigen in scores.values())
    if grand_total <= 0:
        raise NoAntigen("no antigen presented by any process")
    return {pid: value * antigen / grand_total for pid, (value, antigen) in scores.items()}


def classify(value: float, threshold: float) -> Verdict:
    """
    Strictly above the threshold is anomalous; equal is still normal.
    """
    return Verdict.anomalous if value > threshold else Verdict.normal


@dataclass(frozen=True)
class ProcessScore:
    """
    Everything the report says about one process in one run.
    """

    pid: int
    proc_name: str
    antigen_count: int
    mature_count: int
    mcav: float
    mac: float
    verdict_mcav: Verdict
    verdict_mac: Verdict

    @property
    def verdict(self) -> Verdict:
        """
        The verdict under the MCAV rule.
        """
        return self.verdict_mcav

    def as_dict(self) -> dict[str, typing.Any]:
        """
        JSON-friendly representation.
        """
        return {
            "pid": self.pid,
            "proc_name": self.proc_name,
            "antigen_count": self.antigen_count,
            "mature_count": self.mature_count,
            "mcav": self.mcav,
            "mac": self.mac,
            "verdict_mcav": self.verdict_mcav.value,
            "verdict_mac": self.verdict_mac.value,
        }


def score_processes(
    presented: Iterable[PresentedAntigen],
    names: Optional[Mapping[int, str]] = None,
    mcav_threshold: float = DEFAULT_MCAV_THRESHOLD,
    mac_threshold: float = DEFAULT_MAC_THRESHOLD,
) -> list[ProcessScore]:
    """
    Score every process that presented antigen, ordered by pid.

    Unknown pids are named "pid<N>". An empty input gives an empty list.
    """
    names = names or {}
    tallies = mcav(presented)
    if not tallies:
        return []

    coefficients = mac({pid: (tally.mcav, tally.antigen_count) for pid, tally in tallies.items()})
    return [
        ProcessScore(
            pid=pid,
            proc_name=names.get(pid, f"pid{pid}"),
            antigen_count=tally.antigen_count,
            mature_count=tally.mature_count,
            mcav=tally.mcav,
            mac=coefficients[pid],
            verdict_mcav=classify(tally.mcav, mcav_threshold),
            verdict_mac=classify(coefficients[pid], mac_threshold),
        )
        for pid, tally in tallies.items()
    ]


@dataclass(frozen=True)
class TestResult:
    """
    Statistic and two-sided p-value of a rank test.
    """

    __test__ = False  # not a pytest class

    statistic: float
    p_value: float
    method: Method


def _two_sided(lower: int, upper: int, total: int) -> float:
    # double the smaller tail, capped at 1
    return min(1.0, 2 * min(lower, upper) / total)


@functools.lru_cache(maxsize=None)
def _u_counts(m: int, n: int) -> tuple[int, ...]:
    """
    How many of the C(m+n, m) rank splits give each U = 0 .. m*n.
    """
    if m == 0 or n == 0:
        return (1,)
    counts = [0] * (m * n + 1)
    # largest observation from the first sample: it beats all n of the second
    for u, c in enumerate(_u_counts(m - 1, n)):
        counts[u + n] += c
    for u, c in enumerate(_u_counts(m, n - 1)):
        counts[u] += c
    return tuple(counts)


@functools.lru_cache(maxsize=None)
def _signed_rank_counts(n: int) -> tuple[int, ...]:
    """
    How many of the 2^n sign patterns give each W+ = 0 .. n(n+1)/2.
    """
    counts = [1]
    for rank in range(1, n + 1):
        grown = counts + [0] * rank
        for w, c in enumerate(counts):
            grown[w + rank] += c
        counts = grown
    return tuple(counts)


def _has_ties(values: np.ndarray) -> bool:
    return len(np.unique(values)) < len(values)


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """
    Two-sided Mann-Whitney U test; the statistic is U of the first sample.

    Exact when there are at most 20 observations and no ties,
    otherwise the normal approximation with tie and continuity correction.

    Raises:
        EmptySample: either sample is empty.
    """
    if not len(a) or not len(b):
        raise EmptySample("both samples need at least one observation")

    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    m, n = len(x), len(y)
    combined = np.concatenate([x, y])
    ranks = rankdata(combined)
    u = float(ranks[:m].sum() - m * (m + 1) / 2)

    if m + n <= EXACT_LIMIT and not _has_ties(combined):
        counts = _u_counts(m, n)
        k = int(round(u))
        return TestResult(u, _two_sided(sum(counts[: k + 1]), sum(counts[k:]), math.comb(m + n, m)), Method.exact)

    big_n = m + n
    _, tie_sizes = np.unique(combined, return_counts=True)
    tie_term = float((tie_sizes**3 - tie_sizes).sum()) / (big_n * (big_n - 1))
    variance = m * n / 12 * ((big_n + 1) - tie_term)
    if variance <= 0:
        # every observation tied
        return TestResult(u, 1.0, Method.normal_approximation)

    z = max(abs(u - m * n / 2) - 0.5, 0.0) / math.sqrt(variance)
    return TestResult(u, min(1.0, 2 * float(norm.sf(z))), Method.normal_approximation)


def wilcoxon_signed_rank(d: Sequence[float]) -> TestResult:
    """
    Two-sided Wilcoxon signed-rank test on paired differences; the statistic is W+.

    Zero differences are dropped first. Exact for up to 20 remaining differences without tied magnitudes,
    otherwise the normal approximation with tie and continuity correction.

    Raises:
        AllZero: no nonzero difference is left.
    """
    diffs = np.asarray(d, dtype=float)
    diffs = diffs[diffs != 0]
    n = len(diffs)
    if not n:
        raise AllZero("every paired difference is zero")

    magnitudes = np.abs(diffs)
    ranks = rankdata(magnitudes)
    w_plus = float(ranks[diffs > 0].sum())

    if n <= EXACT_LIMIT and not _has_ties(magnitudes):
        counts = _signed_rank_counts(n)
        k = int(round(w_plus))
        return TestResult(w_plus, _two_sided(sum(counts[: k + 1]), sum(counts[k:]), 2**n), Method.exact)

    _, tie_sizes = np.unique(magnitudes, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24 - float((tie_sizes**3 - tie_sizes).sum()) / 48
    if variance <= 0:  # pragma: no cover
        return TestResult(w_plus, 1.0, Method.normal_approximation)

    z = max(abs(w_plus - n * (n + 1) / 4) - 0.5, 0.0) / math.sqrt(variance)
    return TestResult(w_plus, min(1.0, 2 * float(norm.sf(z))), Method.normal_approximation)


def format_test(result: TestResult, label: str = "U") -> str:
    """
    Render as `U=…, p=…, method=…`.
    """
    return f"{label}={result.statistic:g}, p={result.p_value:.4g}, method={result.method.value}"


@dataclass(frozen=True)
class Summary:
    """
    The numbers a boxplot would show, in tabular form.
    """

    n: int
    mean: float
    median: float
    lower_quartile: float
    upper_quartile: float

    def as_dict(self) -> dict[str, float]:
        """
        JSON-friendly representation.
        """
        return {
            "n": self.n,
            "mean": self.mean,
            "median": self.median,
            "q1": self.lower_quartile,
            "q3": self.upper_quartile,
        }


def summarize(values: Sequence[float]) -> Summary:
    """
    Mean, median and quartiles of a sample.

    Raises:
        EmptySample: nothing to summarize.
    """
    if not len(values):
        raise EmptySample("cannot summarize an empty sample")
    data = np.asarray(values, dtype=float)
    q1, median, q3 = np.percentile(data, [25, 50, 75])
    return Summary(len(data), float(data.mean()), float(median), float(q1), float(q3))


SCORE_COLUMNS = ("pid", "proc_name", "antigen_count", "mcav", "mac", "verdict_mcav", "verdict_mac")


def format_scores(scores: Iterable[ProcessScore], delimiter: str = "\t") -> list[str]:
    """
    The per-process report as delimiter-separated lines, header first.
    """
    lines = [delimiter.join(SCORE_COLUMNS)]
    for score in scores:
        row = score.as_dict()
        row["mcav"] = f"{score.mcav:.4f}"
        row["mac"] = f"{score.mac:.4f}"
        lines.append(delimiter.join(str(row[column]) for column in SCORE_COLUMNS))
    return lines
