"""Negative answers: rejection sampling per query and shared pools per batch."""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from app.errors import RejectionCapError, StructureError
from app.kg.store import KnowledgeGraph
from app.query.structure import QueryStructure
from app.sampler.grounding import (
    ForwardCache,
    GroundedQuery,
    exhaustive_answers,
    forward_cache,
    plan_cut,
    verify_candidate,
)
from app.settings import SamplerSettings


class NegativeStrategy(str, Enum):
    """How negatives are checked against the query's answers."""

    BIDIRECTIONAL = "bidirectional"
    EXHAUSTIVE = "exhaustive"
    RANDOM = "random"


@dataclass(frozen=True, eq=False)
class NegativeSet:
    entities: np.ndarray
    target: int


@dataclass(frozen=True, eq=False)
class TrainingBatch:
    """Queries of one structure sharing a negative pool.

    `mask[i, j]` is True iff `negatives[j]` is a verified non-answer of query i
    (all True when the batch was built without verification).
    """

    structure: QueryStructure
    queries: tuple[GroundedQuery, ...]
    negatives: np.ndarray
    mask: np.ndarray

    @property
    def size(self) -> int:
        return len(self.queries)

    @property
    def anchors(self) -> np.ndarray:
        return np.array([q.anchors for q in self.queries], dtype=np.int64)

    @property
    def relations(self) -> np.ndarray:
        return np.array([q.relations for q in self.queries], dtype=np.int64).reshape(
            self.size, len(self.structure.projections)
        )

    @property
    def positives(self) -> np.ndarray:
        return np.array([q.positive for q in self.queries], dtype=np.int64)


def _propose(kg: KnowledgeGraph, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, kg.num_entities, size=n)


def _bidirectional(
    gq: GroundedQuery,
    k: int,
    kg: KnowledgeGraph,
    rng: np.random.Generator,
    settings: SamplerSettings,
    cache: ForwardCache | None,
) -> np.ndarray:
    cache = cache if cache is not None else forward_cache(gq, kg, plan_cut(gq.structure), settings)
    per_round = math.ceil(settings.oversample * k)
    found: list[int] = []
    seen: set[int] = set()
    for _ in range(settings.max_rounds):
        for v in _propose(kg, per_round, rng):
            v = int(v)
            if v in seen:
                continue
            seen.add(v)
            if not verify_candidate(v, gq, cache, kg):
                found.append(v)
                if len(found) == k:
                    return np.array(found, dtype=np.int64)
    raise RejectionCapError(
        f"{gq.structure.label}: found {len(found)} of {k} negatives after "
        f"{settings.max_rounds} rounds of {per_round} proposals"
    )


def _exhaustive(
    gq: GroundedQuery,
    k: int,
    kg: KnowledgeGraph,
    rng: np.random.Generator,
    settings: SamplerSettings,
) -> np.ndarray:
    answers = exhaustive_answers(gq, kg, settings)
    pool = np.setdiff1d(np.arange(kg.num_entities, dtype=np.int64), answers, assume_unique=True)
    if len(pool) < k:
        raise RejectionCapError(
            f"{gq.structure.label}: only {len(pool)} non-answers, {k} requested"
        )
    return rng.choice(pool, size=k, replace=False)


def sample_negatives(
    gq: GroundedQuery,
    k: int,
    kg: KnowledgeGraph,
    rng: np.random.Generator,
    settings: SamplerSettings | None = None,
    strategy: NegativeStrategy = NegativeStrategy.BIDIRECTIONAL,
    cache: ForwardCache | None = None,
) -> NegativeSet:
    """Draw `k` distinct negatives for `gq`.

    Proposals are uniform over V, `ceil(oversample * k)` per round for up to
    `max_rounds` rounds; each is kept only if backward verification rejects it.

    Raises:
        RejectionCapError: when `k` negatives cannot be found (near-universal query).
    """
    settings = settings if settings is not None else SamplerSettings()
    if k <= 0:
        return NegativeSet(np.empty(0, dtype=np.int64), 0)
    strategy = NegativeStrategy(strategy)
    if strategy is NegativeStrategy.BIDIRECTIONAL:
        ids = _bidirectional(gq, k, kg, rng, settings, cache)
    elif strategy is NegativeStrategy.EXHAUSTIVE:
        ids = _exhaustive(gq, k, kg, rng, settings)
    else:
        ids = rng.choice(kg.num_entities, size=k, replace=k > kg.num_entities).astype(np.int64)
    return NegativeSet(ids, k)


def build_batch(
    queries: list[GroundedQuery],
    k_shared: int,
    kg: KnowledgeGraph,
    rng: np.random.Generator,
    settings: SamplerSettings | None = None,
    caches: list[ForwardCache] | None = None,
    verify: bool = True,
) -> TrainingBatch:
    """Draw one shared negative pool and mark, per query, which entries are true negatives.

    A pool that leaves some query without any negative is redrawn, up to
    `max_rounds` times.

    Raises:
        StructureError: if the queries do not share one structure.
        RejectionCapError: when every redraw leaves a query with an all-zero mask row.
    """
    settings = settings if settings is not None else SamplerSettings()
    if not queries:
        raise StructureError("batch has no queries")
    structure = queries[0].structure
    if any(q.structure != structure for q in queries):
        raise StructureError("all queries in a batch must share one structure")
    replace = k_shared > kg.num_entities

    if not verify:
        pool = rng.choice(kg.num_entities, size=k_shared, replace=replace).astype(np.int64)
        mask = np.ones((len(queries), k_shared), dtype=bool)
        return TrainingBatch(structure, tuple(queries), pool, mask)

    if caches is None:
        cut = plan_cut(structure)
        caches = [forward_cache(q, kg, cut, settings) for q in queries]
    for _ in range(settings.max_rounds):
        pool = rng.choice(kg.num_entities, size=k_shared, replace=replace).astype(np.int64)
        mask = np.array(
            [
                [not verify_candidate(int(v), q, cache, kg) for v in pool]
                for q, cache in zip(queries, caches, strict=True)
            ],
            dtype=bool,
        ).reshape(len(queries), k_shared)
        if mask.any(axis=1).all():
            return TrainingBatch(structure, tuple(queries), pool, mask)
    raise RejectionCapError(
        f"{structure.label}: shared pool of {k_shared} left a query without negatives "
        f"after {settings.max_rounds} draws"
    )
