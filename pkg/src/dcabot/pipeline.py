"""
Multi-stage and multi-run drivers shared by the cli subcommands.

simulate -> derive -> detect is the single-shot chain; the repeated variants
run it once per seed and collect per-process scores for the statistics.
"""

import itertools
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

from .analysis import (
    ProcessScore,
    TestResult,
    classify,
    mann_whitney_u,
    score_processes,
    summarize,
    wilcoxon_signed_rank,
)
from .core import Config
from .correlation import SrcVerdict, format_verdict_line, keylog_seen, run_src
from .dca import WEIGHT_SETS, PresentedAntigen, WeightMatrix, run_dca
from .errors import AllZero, EmptySample
from .logio import AntigenRecord, Event, Manifest, SignalRecord, merge_events
from .signals import NormalizationConfig, RawCallEvent, derive_antigens, derive_signals
from .simulator import Scenario, generate_scenario, manifest_for, process_names

BOT_PID = 722


def simulate(
    config: Config, scenario: str | Scenario, seed: Optional[int] = None
) -> tuple[list[RawCallEvent], Manifest]:
    """
    Generate one session's trace together with its manifest.
    """
    cfg = config.scenario(scenario, seed)
    return generate_scenario(cfg), manifest_for(cfg)


def derive(
    trace: Sequence[RawCallEvent], norm: NormalizationConfig, duration_s: Optional[float] = None
) -> tuple[list[SignalRecord], list[AntigenRecord]]:
    """
    SigLog and AntigLog of a trace.
    """
    return derive_signals(trace, norm, duration_s), derive_antigens(trace)


def detect(
    events: Sequence[Event], config: Config, seed: Optional[int] = None, weights: Optional[WeightMatrix] = None
) -> list[PresentedAntigen]:
    """
    Run the DCA over an already merged stream.
    """
    return run_dca(events, config.dca(seed, weights))


@dataclass
class Session:
    """
    Everything derived from one simulated session.
    """

    seed: int
    signals: list[SignalRecord]
    antigens: list[AntigenRecord]
    names: dict[int, str]
    manifest: Manifest

    @property
    def events(self) -> list[Event]:
        """
        The merged stream the DCA consumes.
        """
        return merge_events(self.signals, self.antigens)

    def score(
        self, config: Config, weights: Optional[WeightMatrix] = None
    ) -> tuple[list[PresentedAntigen], list[ProcessScore]]:
        """
        Run the DCA (seeded like the session) and score every process.
        """
        presented = detect(self.events, config, self.seed, weights)
        scores = score_processes(presented, self.names, config.mcav_threshold, config.mac_threshold)
        return presented, scores

    def src(self, config: Config, pid: Optional[int] = None) -> tuple[SrcVerdict, SrcVerdict]:
        """
        SRC verdicts, with the keylog guard scoped to `pid` when given.
        """
        seen = keylog_seen(self.antigens, None if pid is None else {pid})
        return run_src(self.signals, seen, config.src_threshold)


def session(config: Config, scenario: str | Scenario, seed: Optional[int] = None) -> Session:
    """
    Simulate and derive one session in memory.
    """
    cfg = config.scenario(scenario, seed)
    trace = generate_scenario(cfg)
    signals, antigens = derive(trace, config.normalization(), cfg.duration_s)
    manifest = manifest_for(cfg)
    return Session(cfg.seed, signals, antigens, process_names(manifest), manifest)


def sessions(config: Config, scenario: str | Scenario) -> list[Session]:
    """
    One session per configured seed.
    """
    return [session(config, scenario, seed) for seed in config.seeds()]


def _score_of(scores: Sequence[ProcessScore], pid: int) -> Optional[ProcessScore]:
    return next((score for score in scores if score.pid == pid), None)


@dataclass
class Comparison:
    """
    The named process against one other process across runs.
    """

    pid: int
    proc_name: str
    mcav: Optional[TestResult]
    mac: Optional[TestResult]


def _test_or_none(a: Sequence[float], b: Sequence[float]) -> Optional[TestResult]:
    try:
        return mann_whitney_u(a, b)
    except EmptySample:
        return None


def compare(runs: Sequence[Sequence[ProcessScore]], pid: int = BOT_PID) -> list[Comparison]:
    """
    Mann-Whitney of `pid`'s MCAV and MAC samples against every other pid's, one sample value per run.

    A process missing from a run contributes nothing for that run; a missing `pid` gives no tests.
    """
    others: dict[int, str] = {}
    for scores in runs:
        for score in scores:
            if score.pid != pid:
                others.setdefault(score.pid, score.proc_name)

    own = [s for s in (_score_of(scores, pid) for scores in runs) if s]
    result = []
    for other, name in sorted(others.items()):
        theirs = [s for s in (_score_of(scores, other) for scores in runs) if s]
        result.append(
            Comparison(
                pid=other,
                proc_name=name,
                mcav=_test_or_none([s.mcav for s in own], [s.mcav for s in theirs]),
                mac=_test_or_none([s.mac for s in own], [s.mac for s in theirs]),
            )
        )
    return result


@dataclass
class ProcessMeans:
    """
    Per-process means across runs (one block of the report).
    """

    pid: int
    proc_name: str
    runs: int
    antigen_count: float
    mcav: float
    mac: float

    def as_dict(self) -> dict[str, Any]:
        """
        JSON-friendly representation.
        """
        return self.__dict__.copy()


def means(runs: Sequence[Sequence[ProcessScore]]) -> list[ProcessMeans]:
    """
    Mean antigen count, MCAV and MAC per pid over the runs it appears in.
    """
    by_pid: dict[int, list[ProcessScore]] = {}
    for scores in runs:
        for score in scores:
            by_pid.setdefault(score.pid, []).append(score)

    return [
        ProcessMeans(
            pid=pid,
            proc_name=scores[0].proc_name,
            runs=len(scores),
            antigen_count=sum(s.antigen_count for s in scores) / len(scores),
            mcav=sum(s.mcav for s in scores) / len(scores),
            mac=sum(s.mac for s in scores) / len(scores),
        )
        for pid, scores in sorted(by_pid.items())
    ]


@dataclass
class Sweep:
    """
    `pid`'s MCAV and MAC for every weight set, one entry per seed (None where the process was absent).
    """

    pid: int
    seeds: list[int]
    mcav: dict[str, list[Optional[float]]] = field(default_factory=dict)
    mac: dict[str, list[Optional[float]]] = field(default_factory=dict)

    def present(self, name: str, coefficient: str = "mcav") -> list[float]:
        """
        The values of one weight set, skipping runs without the process.
        """
        return [value for value in getattr(self, coefficient)[name] if value is not None]

    def summary(self) -> dict[str, dict[str, Any]]:
        """
        Mean, median and quartiles per weight set (the tabular form of a boxplot).
        """
        result = {}
        for name in self.mcav:
            try:
                result[name] = {
                    "mcav": summarize(self.present(name, "mcav")).as_dict(),
                    "mac": summarize(self.present(name, "mac")).as_dict(),
                }
            except EmptySample:
                result[name] = {"mcav": None, "mac": None}
        return result

    def wilcoxon(self) -> dict[str, Optional[TestResult]]:
        """
        Signed-rank test on the paired (same seed) MCAV values of every pair of weight sets.
        """
        result: dict[str, Optional[TestResult]] = {}
        for first, second in itertools.combinations(self.mcav, 2):
            pairs = [(a, b) for a, b in zip(self.mcav[first], self.mcav[second]) if a is not None and b is not None]
            try:
                result[f"{first}-{second}"] = wilcoxon_signed_rank([b - a for a, b in pairs])
            except AllZero:
                result[f"{first}-{second}"] = None
        return result


def sweep_weights(config: Config, runs: Sequence[Session], pid: int = BOT_PID) -> Sweep:
    """
    Rerun the DCA over the same sessions with each preset weight set.
    """
    sweep = Sweep(pid=pid, seeds=[run.seed for run in runs])
    for name, weights in WEIGHT_SETS.items():
        found = [_score_of(run.score(config, weights)[1], pid) for run in runs]
        sweep.mcav[name] = [s.mcav if s else None for s in found]
        sweep.mac[name] = [s.mac if s else None for s in found]
    return sweep


def src_versus_dca(verdict: SrcVerdict, own: Optional[ProcessMeans], config: Config) -> dict[str, Any]:
    """
    The SRC confidence next to the DCA verdicts on the same process's mean MCAV and MAC.
    """
    if own is None:
        return {"src": verdict.confidence.value, "dca_mcav": None, "dca_mac": None}
    return {
        "src": verdict.confidence.value,
        "dca_mcav": classify(own.mcav, config.mcav_threshold).value,
        "dca_mac": classify(own.mac, config.mac_threshold).value,
        "mean_mcav": own.mcav,
        "mean_mac": own.mac,
    }


def verdict_as_dict(verdict: SrcVerdict) -> dict[str, Any]:
    """
    JSON-friendly representation of an SRC verdict.
    """
    return {
        "rho13": verdict.rho13,
        "rho23": verdict.rho23,
        "keylog_seen": verdict.keylog_seen,
        "confidence": verdict.confidence.value,
    }


def build_report(config: Config, scenario: str | Scenario, pid: int = BOT_PID) -> dict[str, Any]:
    """
    Everything known about one scenario across the configured seeds, as one document.

    SRC runs on the first seed's session with the keylog guard scoped to `pid`;
    the DCA blocks use every seed.
    """
    runs = sessions(config, scenario)
    if not runs:
        raise EmptySample("a report needs at least one repetition")
    scored = [run.score(config)[1] for run in runs]
    z, nz = runs[0].src(config, pid)
    per_process = means(scored)
    own = next((item for item in per_process if item.pid == pid), None)
    sweep = sweep_weights(config, runs, pid)

    def test(result: Optional[TestResult]) -> Optional[dict[str, Any]]:
        if result is None:
            return None
        return {"statistic": result.statistic, "p_value": result.p_value, "method": result.method.value}

    return {
        "scenario": Scenario.parse(scenario).value,
        "pid": pid,
        "seeds": [run.seed for run in runs],
        "src": {"z": verdict_as_dict(z), "nz": verdict_as_dict(nz), "line": format_verdict_line(z, nz)},
        "means": [item.as_dict() for item in per_process],
        "comparisons": [
            {"pid": c.pid, "proc_name": c.proc_name, "mcav": test(c.mcav), "mac": test(c.mac)}
            for c in compare(scored, pid)
        ],
        "sweep": sweep.summary(),
        "wilcoxon": {pair: test(result) for pair, result in sweep.wilcoxon().items()},
        "src_vs_dca": src_versus_dca(nz, own, config),
    }
