"""
The Dendritic Cell Algorithm: a population of cells that fuse signals, sample antigen and migrate.

Every cell adds the weighted sum of each incoming signal record to its cumulative outputs
(csm = o1, semi = o2, mat = o3). Once o1 reaches the cell's own migration threshold the cell leaves:
it presents everything it sampled, in the safe context (0) when o2 > o3 and in the mature context (1) otherwise,
and a fresh cell takes its place.

Randomness (migration thresholds, which cells sample an antigen) comes from one
numpy PCG64 generator per engine, seeded from DcaConfig.seed.
"""

import collections
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, EmptyPopulation, MalformedLine
from .logio import AntigenRecord, Event, Manifest, SignalRecord, read_lines, write_lines

SAFE = 0
MATURE = 1

T_Row = tuple[float, float, float]


@dataclass(frozen=True)
class WeightMatrix:
    """
    Weights from the inputs (S1, S2, S3) to each output: csm (o1), semi (o2) and mat (o3).
    """

    csm: T_Row
    semi: T_Row
    mat: T_Row

    @classmethod
    def from_flat(cls, values: Sequence[float]) -> "WeightMatrix":
        """
        Build from nine numbers, row by row: csm S1..S3, semi S1..S3, mat S1..S3.
        """
        if len(values) != 9:
            raise ConfigError(f"a weight matrix needs 9 values, got {len(values)}")
        v = [float(_) for _ in values]
        return cls((v[0], v[1], v[2]), (v[3], v[4], v[5]), (v[6], v[7], v[8]))

    def flat(self) -> list[float]:
        """
        The nine weights row by row (inverse of from_flat).
        """
        return [*self.csm, *self.semi, *self.mat]


WEIGHT_SETS: dict[str, WeightMatrix] = {
    "WS1": WeightMatrix(csm=(2, 1, 2), semi=(0, 0, 1), mat=(2, 1, -3)),
    "WS2": WeightMatrix(csm=(4, 2, 6), semi=(0, 0, 1), mat=(8, 4, -12)),
    "WS3": WeightMatrix(csm=(4, 2, 3), semi=(0, 0, 1), mat=(8, 4, -6)),
    "WS4": WeightMatrix(csm=(2, 1, 1.5), semi=(0, 0, 1), mat=(8, 4, -6)),
    "WS5": WeightMatrix(csm=(8, 4, 0.6), semi=(0, 0, 1), mat=(16, 8, -1.2)),
}

DEFAULT_WEIGHT_SET = "WS3"


def weight_set(name: str) -> WeightMatrix:
    """
    Look up one of the preset weight sets WS1..WS5 (case-insensitive).
    """
    try:
        return WEIGHT_SETS[name.upper()]
    except KeyError:
        raise ConfigError(f"unknown weight set {name!r}, choose from {', '.join(WEIGHT_SETS)}") from None


def interim_outputs(s: SignalRecord, w: WeightMatrix) -> tuple[float, float, float]:
    """
    Weighted sum of one signal record for each of the three outputs.
    """
    signals = s.signals
    return (
        sum(weight * value for weight, value in zip(w.csm, signals)),
        sum(weight * value for weight, value in zip(w.semi, signals)),
        sum(weight * value for weight, value in zip(w.mat, signals)),
    )


@dataclass
class DendriticCell:
    """
    One member of the population.
    """

    id: int
    migration_threshold: float
    o1: float = 0.0
    o2: float = 0.0
    o3: float = 0.0
    store: collections.Counter[int] = field(default_factory=collections.Counter)
    absorbed: int = 0

    def absorb(self, outputs: tuple[float, float, float]) -> None:
        """
        Add one record's interim outputs to the cumulative ones.
        """
        self.o1 += outputs[0]
        self.o2 += outputs[1]
        self.o3 += outputs[2]
        self.absorbed += 1

    @property
    def ready(self) -> bool:
        """
        Has the costimulatory output reached the migration threshold?
        """
        return self.o1 >= self.migration_threshold


def context_of(cell: DendriticCell) -> int:
    """
    0 (safe) when the semi-mature output beats the mature output, 1 otherwise; ties are mature.
    """
    return SAFE if cell.o2 > cell.o3 else MATURE


@dataclass(frozen=True)
class PresentedAntigen:
    """
    Antigen of one process presented by one migrating cell in one context.
    """

    pid: int
    context: int
    count: int

    def __post_init__(self) -> None:
        """
        Context is a bit and counts are positive.
        """
        if self.context not in (SAFE, MATURE):
            raise ValueError(f"context must be 0 or 1, got {self.context}")
        if self.count <= 0:
            raise ValueError(f"count must be positive, got {self.count}")


@dataclass(frozen=True)
class DcaConfig:
    """
    Population parameters.

    Migration thresholds are drawn uniformly from [threshold_low, threshold_high];
    every antigen is copied to `replication` distinct, randomly chosen cells.
    """

    population_size: int = 100
    threshold_low: float = 100.0
    threshold_high: float = 500.0
    weights: WeightMatrix = WEIGHT_SETS[DEFAULT_WEIGHT_SET]
    replication: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        """
        Check thresholds and replication.

        An empty population is reported by the engine itself (EmptyPopulation).
        """
        if not 0 < self.threshold_low <= self.threshold_high:
            raise ConfigError(
                f"need 0 < threshold_low <= threshold_high (got {self.threshold_low}, {self.threshold_high})"
            )
        if self.replication < 1:
            raise ConfigError(f"replication must be at least 1, got {self.replication}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if 0 < self.population_size < self.replication:
            raise ConfigError(f"replication {self.replication} exceeds population size {self.population_size}")


class DcaEngine:
    """
    A live population. Feed it events in stream order from a single caller, then flush().
    """

    def __init__(self, cfg: DcaConfig) -> None:
        """
        Seed the generator and create the initial population.

        Raises:
            EmptyPopulation: population_size is not positive.
        """
        if cfg.population_size <= 0:
            raise EmptyPopulation(f"population size must be positive, got {cfg.population_size}")
        self.cfg = cfg
        self._rng = np.random.Generator(np.random.PCG64(cfg.seed))
        self._next_id = 0
        self.population: list[DendriticCell] = [self._new_cell() for _ in range(cfg.population_size)]
        self.presented: list[PresentedAntigen] = []
        self.migrations = 0
        self._last_outputs: Optional[tuple[float, float, float]] = None

    def _new_cell(self) -> DendriticCell:
        threshold = float(self._rng.uniform(self.cfg.threshold_low, self.cfg.threshold_high))
        cell = DendriticCell(id=self._next_id, migration_threshold=threshold)
        self._next_id += 1
        return cell

    def _present(self, cell: DendriticCell) -> None:
        context = context_of(cell)
        self.presented.extend(PresentedAntigen(pid, context, count) for pid, count in sorted(cell.store.items()))
        self.migrations += 1

    def feed_signal(self, record: SignalRecord) -> None:
        """
        Every cell absorbs the record; cells past their threshold migrate and are replaced.
        """
        outputs = interim_outputs(record, self.cfg.weights)
        self._last_outputs = outputs
        for index, cell in enumerate(self.population):
            cell.absorb(outputs)
            if cell.ready:
                self._present(cell)
                self.population[index] = self._new_cell()

    def feed_antigens(self, records: Sequence[AntigenRecord]) -> None:
        """
        Hand each antigen to `replication` distinct random cells.

        Antigens between two signal records are drawn for as one batch.
        """
        if not records:
            return
        size = len(self.population)
        replication = self.cfg.replication
        if replication == 1:
            chosen = self._rng.integers(0, size, size=len(records))
            for record, index in zip(records, chosen):
                self.population[index].store[record.pid] += 1
            return

        for record in records:
            for index in self._rng.choice(size, size=replication, replace=False):
                self.population[index].store[record.pid] += 1

    def feed(self, event: Event) -> None:
        """
        Process a single event of either kind.
        """
        if isinstance(event, SignalRecord):
            self.feed_signal(event)
        else:
            self.feed_antigens([event])

    def flush(self) -> list[PresentedAntigen]:
        """
        End of stream: every cell still holding antigen presents in its current context and is replaced.

        A cell that sampled antigen but never absorbed a signal record takes the outputs
        of the last record in the stream, so it has a context to present in.

        Returns:
            everything presented over the engine's lifetime
        """
        for index, cell in enumerate(self.population):
            if cell.store:
                if not cell.absorbed and self._last_outputs is not None:
                    cell.absorb(self._last_outputs)
                self._present(cell)
                self.population[index] = self._new_cell()
        return self.presented


def run_dca(stream: Iterable[Event], cfg: DcaConfig) -> list[PresentedAntigen]:
    """
    Run a whole merged stream through a fresh population and return every presentation.

    Raises:
        EmptyPopulation: population_size is not positive.
    """
    engine = DcaEngine(cfg)
    pending: list[AntigenRecord] = []
    for event in stream:
        if isinstance(event, SignalRecord):
            engine.feed_antigens(pending)
            pending = []
            engine.feed_signal(event)
        else:
            pending.append(event)
    engine.feed_antigens(pending)
    return engine.flush()


def serialize_presented(item: PresentedAntigen) -> str:
    """
    One `pid context count` dump line.
    """
    return f"{item.pid} {item.context} {item.count}"


def parse_presented(line: str) -> PresentedAntigen:
    """
    Parse a `pid context count` dump line.
    """
    fields = line.split()
    if len(fields) != 3 or not all(_.isdigit() for _ in fields):
        raise MalformedLine("expected 'pid context count'", line=line.strip())
    pid, context, count = (int(_) for _ in fields)
    try:
        return PresentedAntigen(pid, context, count)
    except ValueError as e:
        raise MalformedLine(str(e), line=line.strip()) from None


def write_presented(
    path: str | Path, presented: Iterable[PresentedAntigen], manifest: Optional[Manifest] = None
) -> int:
    """
    Write the presented-antigen dump, manifest header first.
    """
    return write_lines(path, (serialize_presented(item) for item in presented), manifest)


def read_presented(path: str | Path) -> tuple[list[PresentedAntigen], Optional[Manifest]]:
    """
    Read a presented-antigen dump.
    """
    return read_lines(path, parse_presented)


def total_presented(presented: Iterable[PresentedAntigen]) -> int:
    """
    Sum of all presentation counts (replication × antigen records, for a complete run).
    """
    return sum(item.count for item in presented)
