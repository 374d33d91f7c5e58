import itertools
import math

import numpy as np
import pytest
import scipy.stats

from src.dcabot.analysis import (
    AntigenTally,
    Method,
    Verdict,
    classify,
    format_scores,
    format_test,
    mac,
    mann_whitney_u,
    mcav,
    score_processes,
    summarize,
    wilcoxon_signed_rank,
)
from src.dcabot.dca import MATURE, SAFE, PresentedAntigen
from src.dcabot.errors import AllZero, EmptySample, NoAntigen


def test_mcav():
    presented = [PresentedAntigen(7, MATURE, 3), PresentedAntigen(7, SAFE, 7), PresentedAntigen(8, SAFE, 5)]
    tallies = mcav(presented)
    assert tallies == {7: AntigenTally(7, 3, 10), 8: AntigenTally(8, 0, 5)}
    assert tallies[7].mcav == pytest.approx(0.3)
    assert tallies[8].mcav == 0.0
    assert mcav([PresentedAntigen(7, MATURE, 5)])[7].mcav == 1.0
    assert mcav([]) == {}
    # ordered by pid
    assert list(mcav([PresentedAntigen(9, SAFE, 1), PresentedAntigen(2, SAFE, 1)])) == [2, 9]


def test_mac():
    # bot and IRC mean figures of the keylogging session
    result = mac({722: (0.4736, 1329.7), 1001: (0.2881, 59)})
    assert result[722] == pytest.approx(0.4535, abs=0.002)
    assert result[1001] == pytest.approx(0.0122, abs=0.0005)

    assert mac({1: (0.5, 50)}) == {1: 0.5}
    assert mac({1: (1.0, 10), 2: (0.0, 990)})[1] == pytest.approx(0.01)

    with pytest.raises(NoAntigen):
        mac({1: (0.5, 0), 2: (0.1, 0)})
    with pytest.raises(NoAntigen):
        mac({})


def test_mac_is_scale_free():
    scores = {1: (0.7, 30), 2: (0.2, 120), 3: (0.0, 50)}
    scaled = {pid: (value, antigen * 7) for pid, (value, antigen) in scores.items()}
    assert mac(scaled) == pytest.approx(mac(scores))
    assert sum(mac(scores).values()) <= 1


def test_classify():
    assert classify(0.6047, 0.5) is Verdict.anomalous
    assert classify(0.1136, 0.5) is Verdict.normal
    assert classify(0.5, 0.5) is Verdict.normal
    assert classify(0.2001, 0.2) is Verdict.anomalous


def test_score_processes():
    presented = [
        PresentedAntigen(722, MATURE, 8),
        PresentedAntigen(722, SAFE, 2),
        PresentedAntigen(1001, SAFE, 9),
        PresentedAntigen(1001, MATURE, 1),
        PresentedAntigen(5, SAFE, 1),
    ]
    scores = score_processes(presented, {722: "bot", 1001: "irc"})
    assert [s.pid for s in scores] == [5, 722, 1001]
    assert [s.proc_name for s in scores] == ["pid5", "bot", "irc"]

    bot = scores[1]
    assert (bot.antigen_count, bot.mature_count) == (10, 8)
    assert bot.mcav == pytest.approx(0.8)
    assert bot.mac == pytest.approx(0.8 * 10 / 21)
    assert bot.verdict is bot.verdict_mcav is Verdict.anomalous
    assert bot.verdict_mac is Verdict.anomalous
    assert scores[2].verdict_mcav is Verdict.normal
    assert sum(s.mac for s in scores) <= 1

    assert score_processes([]) == []

    lines = format_scores(scores)
    assert lines[0] == "pid\tproc_name\tantigen_count\tmcav\tmac\tverdict_mcav\tverdict_mac"
    assert lines[2] == "722\tbot\t10\t0.8000\t0.3810\tanomalous\tanomalous"
    assert format_scores(scores, delimiter=",")[0].startswith("pid,proc_name,")


def test_mann_whitney_examples():
    result = mann_whitney_u([1, 2], [3, 4])
    assert result.statistic == 0
    assert result.p_value == pytest.approx(1 / 3)
    assert result.method is Method.exact

    assert mann_whitney_u([5, 5, 5], [5, 5, 5]).p_value == 1.0
    assert mann_whitney_u([5, 5, 5], [5, 5, 5]).method is Method.normal_approximation

    low = mann_whitney_u(list(range(10)), list(range(100, 110)))
    assert low.p_value == pytest.approx(2 / math.comb(20, 10), rel=1e-12)
    assert low.method is Method.exact

    with pytest.raises(EmptySample):
        mann_whitney_u([], [1.0])


def test_mann_whitney_is_symmetric():
    rng = np.random.default_rng(0)
    for size in ((3, 4), (6, 9), (15, 12)):
        a = rng.normal(size=size[0]).tolist()
        b = rng.normal(0.5, size=size[1]).tolist()
        assert mann_whitney_u(a, b).p_value == pytest.approx(mann_whitney_u(b, a).p_value)


def test_mann_whitney_normal_approximation():
    # 30 observations: too many for the exact path; scipy agrees on the asymptotic p
    a = [0.1 * i for i in range(15)]
    b = [0.1 * i + 0.75 for i in range(15)]
    result = mann_whitney_u(a, b)
    assert result.method is Method.normal_approximation
    assert 0 < result.p_value < 1

    reference = scipy.stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert result.p_value == pytest.approx(reference.pvalue, rel=1e-9)
    assert result.statistic == pytest.approx(reference.statistic)


def _mw_oracle(a, b):
    """Enumerate every split of the pooled ranks."""
    m, n = len(a), len(b)
    observed = sum(x > y for x in a for y in b)
    distribution = []
    for chosen in itertools.combinations(range(m + n), m):
        rest = [r for r in range(m + n) if r not in chosen]
        distribution.append(sum(x > y for x in chosen for y in rest))
    lower = sum(u <= observed for u in distribution)
    upper = sum(u >= observed for u in distribution)
    return observed, min(1.0, 2 * min(lower, upper) / len(distribution))


def test_mann_whitney_exact_matches_enumeration():
    rng = np.random.default_rng(1)
    for m in range(1, 8):
        for n in range(1, 9 - m):
            for _ in range(3):
                pooled = rng.permutation(50)[: m + n].astype(float)
                a, b = pooled[:m].tolist(), pooled[m:].tolist()
                statistic, p_value = _mw_oracle(a, b)
                result = mann_whitney_u(a, b)
                assert result.method is Method.exact
                assert result.statistic == statistic
                assert result.p_value == p_value


def test_wilcoxon_examples():
    result = wilcoxon_signed_rank([1, 2, 3])
    assert result.statistic == 6
    assert result.p_value == 0.25
    assert result.method is Method.exact

    assert wilcoxon_signed_rank([-1, -2, -3]).p_value == result.p_value
    assert wilcoxon_signed_rank([-1, -2, -3]).statistic == 0
    # zeros are dropped
    assert wilcoxon_signed_rank([0, 1, 0, 2, 3]).p_value == 0.25

    with pytest.raises(AllZero):
        wilcoxon_signed_rank([0, 0, 0])


def test_wilcoxon_ties_use_the_approximation():
    result = wilcoxon_signed_rank([1, -1, 2, 2, 3, 4, 5])
    assert result.method is Method.normal_approximation
    assert 0 < result.p_value <= 1


def _wilcoxon_oracle(d):
    """Enumerate every sign pattern over the ranks."""
    order = sorted(range(len(d)), key=lambda i: abs(d[i]))
    ranks = {index: rank for rank, index in enumerate(order, start=1)}
    observed = sum(ranks[i] for i in range(len(d)) if d[i] > 0)
    distribution = [
        sum(rank for rank, sign in zip(range(1, len(d) + 1), signs) if sign)
        for signs in itertools.product([False, True], repeat=len(d))
    ]
    lower = sum(w <= observed for w in distribution)
    upper = sum(w >= observed for w in distribution)
    return observed, min(1.0, 2 * min(lower, upper) / len(distribution))


def test_wilcoxon_exact_matches_enumeration():
    rng = np.random.default_rng(2)
    for n in range(1, 9):
        for _ in range(5):
            magnitudes = rng.permutation(40)[:n] + 1
            signs = rng.choice([-1, 1], size=n)
            d = (magnitudes * signs).astype(float).tolist()
            statistic, p_value = _wilcoxon_oracle(d)
            result = wilcoxon_signed_rank(d)
            assert result.method is Method.exact
            assert result.statistic == statistic
            assert result.p_value == p_value


def test_format_test():
    assert format_test(mann_whitney_u([1, 2], [3, 4])) == "U=0, p=0.3333, method=exact"
    assert format_test(wilcoxon_signed_rank([1, 2, 3]), "W") == "W=6, p=0.25, method=exact"


def test_summarize():
    summary = summarize([1, 2, 3, 4, 5])
    assert summary.n == 5
    assert summary.mean == 3
    assert summary.median == 3
    assert (summary.lower_quartile, summary.upper_quartile) == (2, 4)
    assert summary.as_dict() == {"n": 5, "mean": 3, "median": 3, "q1": 2, "q3": 4}

    with pytest.raises(EmptySample):
        summarize([])
