"""Sampler benchmark: time to sample a batch of queries with negatives, per branching factor.

Writes one CSV row per (structure, C, sampler):

    structure,C,sampler,median_ms,p90_ms,timeout

A cell that exceeds its time budget is marked `timeout` and reports no times.
Records also carry `edges`, the mean number of adjacency entries one query
read through `neighbors` or `project` (traversal work, independent of the
machine). Random cells report `purity`, measured outside the timed region.
"""

import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from app.kg.store import Direction, KnowledgeGraph
from app.kg.synthetic import synthetic_kg
from app.logging_utils import get_logger
from app.query.structure import QueryStructure
from app.sampler.grounding import (
    GroundedQuery,
    forward_cache,
    ground_query,
    instantiate_with_cache,
    plan_cut,
    verify_candidate,
)
from app.sampler.negatives import NegativeStrategy, sample_negatives
from app.settings import SamplerSettings

log = get_logger(__name__)

CSV_COLUMNS = ["structure", "C", "sampler", "median_ms", "p90_ms", "timeout"]
DEFAULT_TIMEOUT = 60.0


@dataclass(frozen=True)
class BenchRecord:
    structure: str
    C: int
    sampler: str
    median_ms: float | None
    p90_ms: float | None
    timeout: bool
    purity: float | None = None
    edges: float | None = None

    def as_row(self) -> dict:
        return {c: getattr(self, c) for c in CSV_COLUMNS}


class _Timeout(Exception):
    pass


@dataclass(frozen=True, eq=False)
class _CountingGraph(KnowledgeGraph):
    """Graph that tallies the adjacency entries `neighbors` and `project` return."""

    touched: list[int] = field(default_factory=lambda: [0])

    @classmethod
    def wrap(cls, kg: KnowledgeGraph) -> "_CountingGraph":
        return cls(**{f.name: getattr(kg, f.name) for f in fields(KnowledgeGraph)})

    def neighbors(self, v: int, r: int, direction: Direction = Direction.FORWARD) -> np.ndarray:
        out = super().neighbors(v, r, direction)
        self.touched[0] += len(out)
        return out

    def project(
        self, ids: np.ndarray, r: int, direction: Direction = Direction.FORWARD
    ) -> np.ndarray:
        out = super().project(ids, r, direction)
        self.touched[0] += len(out)
        return out


def _sample_batch(
    q: QueryStructure,
    kg: KnowledgeGraph,
    strategy: NegativeStrategy,
    batch_size: int,
    negatives: int,
    rng: np.random.Generator,
    settings: SamplerSettings,
    deadline: float,
) -> list[tuple[GroundedQuery, np.ndarray]]:
    """Sample one batch of queries with their negatives."""
    out = []
    for _ in range(batch_size):
        if time.perf_counter() > deadline:
            raise _Timeout
        if strategy is NegativeStrategy.BIDIRECTIONAL:
            gq, cache = instantiate_with_cache(q, kg, rng, settings)
        else:
            gq, cache = ground_query(q, kg, rng, settings), None
        negs = sample_negatives(gq, negatives, kg, rng, settings, strategy, cache)
        out.append((gq, negs.entities))
    return out


def _purity(
    batch: list[tuple[GroundedQuery, np.ndarray]], kg: KnowledgeGraph, settings: SamplerSettings
) -> tuple[int, int]:
    """(negatives emitted, negatives that are true non-answers)."""
    emitted = pure = 0
    for gq, negs in batch:
        cache = forward_cache(gq, kg, plan_cut(gq.structure), settings)
        emitted += len(negs)
        pure += sum(not verify_candidate(int(v), gq, cache, kg) for v in negs)
    return emitted, pure


def bench_cell(
    q: QueryStructure,
    kg: KnowledgeGraph,
    branching: int,
    strategy: NegativeStrategy,
    *,
    seed: int,
    batch_size: int = 1024,
    negatives: int = 32,
    repeats: int = 3,
    timeout: float = DEFAULT_TIMEOUT,
    settings: SamplerSettings | None = None,
) -> BenchRecord:
    """Time `repeats` batches of one cell; random cells also report their purity, untimed."""
    settings = settings if settings is not None else SamplerSettings()
    rng = np.random.default_rng([seed, branching])
    deadline = time.perf_counter() + timeout
    counted = _CountingGraph.wrap(kg)
    times: list[float] = []
    emitted = pure = 0
    try:
        for _ in range(repeats):
            start = time.perf_counter()
            batch = _sample_batch(
                q, counted, strategy, batch_size, negatives, rng, settings, deadline
            )
            times.append((time.perf_counter() - start) * 1000.0)
            if strategy is NegativeStrategy.RANDOM:
                paused = time.perf_counter()
                e, p = _purity(batch, kg, settings)
                emitted, pure = emitted + e, pure + p
                # purity time does not count against the budget
                deadline += time.perf_counter() - paused
    except _Timeout:
        log.info("bench %s C=%d %s: timeout after %.0fs", q.label, branching, strategy.value, timeout)
        return BenchRecord(q.label, branching, strategy.value, None, None, True)
    purity = pure / emitted if strategy is NegativeStrategy.RANDOM and emitted else None
    record = BenchRecord(
        q.label,
        branching,
        strategy.value,
        float(np.median(times)),
        float(np.percentile(times, 90)),
        False,
        purity,
        counted.touched[0] / (repeats * batch_size),
    )
    log.info(
        "bench %s C=%d %s: median=%.1fms p90=%.1fms edges=%.1f%s",
        q.label, branching, strategy.value, record.median_ms, record.p90_ms, record.edges,
        f" purity={purity:.4f}" if purity is not None else "",
    )
    return record


def bench_sampler(
    structures: list[QueryStructure],
    branchings: list[int],
    *,
    num_entities: int = 5000,
    num_relations: int = 4,
    seed: int = 0,
    timeout: float = DEFAULT_TIMEOUT,
    samplers: tuple[NegativeStrategy, ...] = tuple(NegativeStrategy),
    batch_size: int = 1024,
    negatives: int = 32,
    repeats: int = 3,
    settings: SamplerSettings | None = None,
) -> list[BenchRecord]:
    """Run every (structure, C, sampler) cell on synthetic graphs with branching C."""
    records = []
    for c in branchings:
        kg = synthetic_kg(num_entities, num_relations, c, np.random.default_rng([seed, c, 1]))
        log.info("bench graph C=%d: %d edges", c, kg.stats.edge_count)
        for q in structures:
            for strategy in samplers:
                records.append(
                    bench_cell(
                        q, kg, c, NegativeStrategy(strategy),
                        seed=seed, batch_size=batch_size, negatives=negatives,
                        repeats=repeats, timeout=timeout, settings=settings,
                    )
                )
    return records


def write_bench_csv(records: list[BenchRecord], path: str | Path) -> None:
    """Append records to `path`, writing the header only for a new file."""
    path = Path(path)
    frame = pd.DataFrame([r.as_row() for r in records], columns=CSV_COLUMNS)
    new = not path.exists() or path.stat().st_size == 0
    frame.to_csv(path, mode="a", header=new, index=False)


def loglog_slope(
    records: list[BenchRecord], structure: str, sampler: str, metric: str = "median_ms"
) -> float:
    """Least-squares slope of log(metric) against log(C) over completed cells.

    `metric` is `median_ms` (wall time) or `edges` (traversal work).
    """
    pts = [
        (math.log(r.C), math.log(getattr(r, metric)))
        for r in records
        if r.structure == structure
        and r.sampler == sampler
        and not r.timeout
        and getattr(r, metric)
    ]
    if len(pts) < 2:
        raise ValueError(f"need two completed cells for {structure}/{sampler}")
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])
