import math

import numpy as np
import pytest

from src.dcabot.correlation import (
    Confidence,
    SignalSeries,
    classify_src,
    format_verdict_line,
    keylog_seen,
    run_src,
    series_from_log,
    spearman_rho,
    strip_idle,
)
from src.dcabot.errors import DegenerateSeries, LengthMismatch, TickMismatch
from src.dcabot.logio import AntigenRecord, SignalRecord, read_antigen_log, read_sig_log

from ._shared import ANTIGEN_LOG, SIG_LOG


def _midranks(values):
    """Explicit rank construction: tied values share the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    start = 0
    while start < len(order):
        end = start
        while end + 1 < len(order) and values[order[end + 1]] == values[order[start]]:
            end += 1
        for position in range(start, end + 1):
            ranks[order[position]] = (start + end) / 2 + 1
        start = end + 1
    return ranks


def _pearson(x, y):
    mx = sum(x) / len(x)
    my = sum(y) / len(y)
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def test_spearman_examples():
    assert spearman_rho([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert spearman_rho([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert spearman_rho([1, 2, 2, 4], [4, 2, 2, 1]) == pytest.approx(-1.0)

    with pytest.raises(LengthMismatch):
        spearman_rho([1, 2], [1, 2, 3])
    with pytest.raises(DegenerateSeries):
        spearman_rho([1], [2])
    with pytest.raises(DegenerateSeries):
        spearman_rho([5, 5, 5], [1, 2, 3])


def test_spearman_matches_rank_then_pearson():
    rng = np.random.default_rng(1234)
    worst = 0.0
    checked = 0
    while checked < 1000:
        n = int(rng.integers(3, 201))
        # small alphabets force plenty of ties
        x = rng.integers(0, int(rng.integers(2, 30)), size=n).astype(float).tolist()
        y = rng.integers(0, int(rng.integers(2, 30)), size=n).astype(float).tolist()
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        expected = _pearson(_midranks(x), _midranks(y))
        worst = max(worst, abs(spearman_rho(x, y) - expected))
        checked += 1
    assert worst < 1e-12


def test_spearman_properties():
    rng = np.random.default_rng(7)
    x = rng.normal(size=50).tolist()
    y = rng.normal(size=50).tolist()
    assert spearman_rho(x, y) == pytest.approx(spearman_rho(y, x), abs=1e-15)
    # invariant under strictly increasing transforms
    assert spearman_rho([math.exp(v) for v in x], [v**3 for v in y]) == pytest.approx(spearman_rho(x, y), abs=1e-12)


def test_strip_idle():
    a, b = strip_idle(SignalSeries.of([0, 5, 0]), SignalSeries.of([0, 7, 0]))
    assert a.pairs == ((1, 5.0),)
    assert b.pairs == ((1, 7.0),)

    a, b = strip_idle(SignalSeries.of([0, 5]), SignalSeries.of([3, 7]))
    assert len(a) == len(b) == 2

    a, b = strip_idle(SignalSeries.of([0, 0]), SignalSeries.of([0, 0]))
    assert len(a) == len(b) == 0

    with pytest.raises(TickMismatch):
        strip_idle(SignalSeries.of([1, 2]), SignalSeries.of([1, 2], start=1))


def test_signal_series_invariants():
    with pytest.raises(ValueError):
        SignalSeries(((1, 0.0), (1, 2.0)))
    with pytest.raises(ValueError):
        SignalSeries(((0, 101.0),))
    assert SignalSeries.of([4, 5], start=10).ticks == [10, 11]


# keylogging seen, rho13, rho23 and the confidence for every session (idle periods removed)
SESSIONS = {
    "E1": (False, 0.72, 0.87, Confidence.normal),
    "E2.1.a": (True, 0.85, 0.69, Confidence.strong),
    "E2.1.b": (True, 0.87, 0.74, Confidence.strong),
    "E2.2.a": (False, 0.51, 0.59, Confidence.normal),
    "E2.2.b": (False, 0.50, 0.51, Confidence.normal),
    "E2.3.a": (True, 0.17, 0.52, Confidence.medium),
    "E2.3.b": (True, 0.32, 0.57, Confidence.medium),
    "E3": (False, 0.50, 0.58, Confidence.normal),
}


@pytest.mark.parametrize("session", sorted(SESSIONS))
def test_classify_src_sessions(session):
    seen, rho13, rho23, expected = SESSIONS[session]
    verdict = classify_src(seen, rho13, rho23)
    assert verdict.confidence is expected
    assert (verdict.rho13, verdict.rho23, verdict.keylog_seen) == (rho13, rho23, seen)


def _permutation_with_rho(target, n=60):
    """
    Ranks 0..n-1 with disjoint swaps laid out so that 1 - 6 * sum(d^2) / (n^3 - n) lands on `target`.
    """
    remaining = round(n * (n * n - 1) * (1 - target) / 12)
    ranks = list(range(n))
    free = list(range(n))
    while remaining > 0 and len(free) >= 2:
        lo = free[0]
        fitting = [hi for hi in free[1:] if (hi - lo) ** 2 <= remaining]
        free.remove(lo)
        if not fitting:
            continue
        hi = fitting[-1]
        free.remove(hi)
        ranks[lo], ranks[hi] = ranks[hi], ranks[lo]
        remaining -= (hi - lo) ** 2
    return ranks


@pytest.mark.parametrize("session", sorted(SESSIONS))
def test_run_src_sessions(session):
    seen, rho13, rho23, expected = SESSIONS[session]
    n = 60
    s1 = _permutation_with_rho(rho13, n)
    s2 = _permutation_with_rho(rho23, n)
    # values 1..n: no idle ticks, so both sets see the same series
    log = [SignalRecord(t, s1[t] + 1, s2[t] + 1, t + 1) for t in range(n)]

    z, nz = run_src(log, keylog_seen=seen)
    for verdict in (z, nz):
        assert verdict.rho13 == pytest.approx(rho13, abs=1e-3)
        assert verdict.rho23 == pytest.approx(rho23, abs=1e-3)
        assert verdict.confidence is expected


def test_classify_src_rules():
    assert classify_src(True, 0.2, 0.3).confidence is Confidence.weak
    assert classify_src(True, 0.5, 0.1).confidence is Confidence.medium
    # boundary is inclusive
    assert classify_src(True, 0.5, 0.5).confidence is Confidence.strong
    assert classify_src(True, 0.7, 0.7, threshold=0.8).confidence is Confidence.weak
    # undefined falls back to the keylog guard alone
    assert classify_src(True, None, 0.9).confidence is Confidence.weak
    assert classify_src(False, None, None).confidence is Confidence.normal
    assert classify_src(True, None, 0.9).undefined


def test_run_src_perfect_tracking():
    log = [SignalRecord(t, s, s, s) for t, s in enumerate([0, 10, 0, 40, 80, 20, 0, 60])]
    z, nz = run_src(log, keylog_seen=True)
    assert z.confidence is nz.confidence is Confidence.strong
    assert z.rho13 == pytest.approx(1.0)
    assert nz.rho23 == pytest.approx(1.0)


def test_run_src_idle_removal_changes_rho():
    # idle ticks inflate the raw correlation
    s1 = [0, 0, 0, 0, 0, 0, 30, 60, 90]
    s3 = [0, 0, 0, 0, 0, 0, 90, 30, 60]
    log = [SignalRecord(t, a, 0, c) for t, (a, c) in enumerate(zip(s1, s3))]
    z, nz = run_src(log, keylog_seen=True)
    assert z.rho13 > 0.5
    assert nz.rho13 == pytest.approx(-0.5)
    # S2 is constant zero: undefined in both sets
    assert z.rho23 is None and nz.rho23 is None
    assert nz.confidence is Confidence.weak


def test_run_src_all_zero():
    log = [SignalRecord(t, 0, 0, 0) for t in range(5)]
    z, nz = run_src(log, keylog_seen=False)
    assert nz.undefined and z.undefined
    assert nz.confidence is Confidence.normal
    assert format_verdict_line(z, nz) == "NA NA NA NA No Normal"


def test_keylog_seen():
    antigens = [AntigenRecord(0, 1003, "GetKeyboardState"), AntigenRecord(1, 722, "sendto")]
    assert keylog_seen(antigens)
    assert not keylog_seen(antigens, pids={722})
    assert keylog_seen(antigens, pids={722, 1003})
    assert not keylog_seen([])


def test_from_files():
    signals, _ = read_sig_log(SIG_LOG)
    antigens, _ = read_antigen_log(ANTIGEN_LOG)
    s1, s2, s3 = series_from_log(signals)
    assert s1.values == [0, 11, 100, 50]
    assert s3.ticks == [0, 1, 2, 3]

    z, nz = run_src(signals, keylog_seen(antigens, {722}))
    line = format_verdict_line(z, nz)
    fields = line.split()
    assert len(fields) == 6
    assert fields[4] == "Yes"
    assert fields[5] == nz.confidence.value
    assert fields[0] == f"{z.rho13:.2f}"
