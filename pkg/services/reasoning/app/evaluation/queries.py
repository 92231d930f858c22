"""Held-out evaluation queries built from nested edge splits.

A query sampled on G_test (or G_valid for the valid phase) gets its answer
set on each of G_train ⊆ G_valid ⊆ G_test. Only queries whose answers grow
monotonically along the splits and that gain at least one answer in the
evaluated split are kept; the gained answers are the ones that get ranked.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from app.errors import SamplerExhaustedError
from app.kg.store import KnowledgeGraph
from app.logging_utils import get_logger
from app.query.structure import QueryStructure
from app.sampler.grounding import GroundedQuery, exhaustive_answers, instantiate
from app.settings import SamplerSettings

log = get_logger(__name__)


class Phase(str, Enum):
    VALID = "valid"
    TEST = "test"


@dataclass(frozen=True, eq=False)
class EvalQuery:
    query: GroundedQuery
    answers_train: np.ndarray
    answers_valid: np.ndarray
    answers_test: np.ndarray

    @property
    def structure_name(self) -> str:
        return self.query.structure.label

    def missing(self, phase: Phase | str) -> np.ndarray:
        """Answers first reachable in the evaluated split."""
        if Phase(phase) is Phase.TEST:
            return np.setdiff1d(self.answers_test, self.answers_valid, assume_unique=True)
        return np.setdiff1d(self.answers_valid, self.answers_train, assume_unique=True)

    def known(self, phase: Phase | str) -> np.ndarray:
        """Every answer on the evaluated split (the filter set)."""
        return self.answers_test if Phase(phase) is Phase.TEST else self.answers_valid

    def is_nested(self) -> bool:
        return bool(
            np.isin(self.answers_train, self.answers_valid).all()
            and np.isin(self.answers_valid, self.answers_test).all()
        )


def build_eval_queries(
    graphs: tuple[KnowledgeGraph, KnowledgeGraph, KnowledgeGraph],
    structures: list[QueryStructure],
    count: int,
    seed: int,
    phase: Phase | str = Phase.TEST,
    settings: SamplerSettings | None = None,
    attempts_per_query: int = 50,
) -> list[EvalQuery]:
    """Sample `count` evaluation queries per structure.

    Raises:
        SamplerExhaustedError: a structure produced fewer than `count` usable
            queries within `count * attempts_per_query` attempts.
        OracleCapError: an answer set exceeded the traversal cap.
    """
    phase = Phase(phase)
    train, valid, test = graphs
    source = test if phase is Phase.TEST else valid
    rng = np.random.default_rng(seed)
    out: list[EvalQuery] = []
    for q in structures:
        kept = 0
        for _ in range(count * attempts_per_query):
            if kept == count:
                break
            gq = instantiate(q, source, rng, settings)
            eq = EvalQuery(
                gq,
                exhaustive_answers(gq, train, settings),
                exhaustive_answers(gq, valid, settings),
                exhaustive_answers(gq, test, settings),
            )
            if not eq.is_nested() or not len(eq.missing(phase)):
                continue
            out.append(eq)
            kept += 1
        if kept < count:
            raise SamplerExhaustedError(
                f"{q.label}: {kept} of {count} {phase.value} queries with missing answers"
            )
        log.info("built %d %s queries for %s", kept, phase.value, q.label)
    return out
