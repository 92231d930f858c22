"""Filtered ranking metrics (MRR, Hit@k) with sampled negatives.

Each missing answer is ranked against up to `negatives` entities drawn once
per query from V minus every known answer. Ties count against the answer.
"""

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed

from app.errors import ConfigError
from app.evaluation.queries import EvalQuery, Phase
from app.models.embeddings import EmbeddingTable
from app.models.reasoners import ReasoningModel
from app.sampler.grounding import GroundedQuery
from app.settings import EvalSettings


class QueryScorer(Protocol):
    """Anything that returns distances from a grounded query to candidate entities."""

    num_entities: int

    def distances(self, gq: GroundedQuery, candidates: np.ndarray) -> np.ndarray: ...


class ModelScorer:
    """Scores candidates with a trained model (minimum over DNF disjuncts)."""

    def __init__(self, model: ReasoningModel, entities: EmbeddingTable, relations: EmbeddingTable):
        self.model = model
        self.entities = entities
        self.relations = relations
        self.num_entities = entities.num_rows

    def distances(self, gq: GroundedQuery, candidates: np.ndarray) -> np.ndarray:
        ids = torch.as_tensor(np.asarray(candidates, dtype=np.int64))
        self.entities.check_ids(ids)
        self.entities.check_ids(torch.as_tensor(gq.anchors, dtype=torch.int64))
        self.relations.check_ids(torch.as_tensor(gq.relations, dtype=torch.int64))
        with torch.no_grad():
            anchors = self.entities.rows[torch.as_tensor(gq.anchors, dtype=torch.int64)]
            relations = self.relations.rows[torch.as_tensor(gq.relations, dtype=torch.int64)]
            disjuncts = self.model.embed_query(
                gq.structure, anchors.unsqueeze(0), relations.reshape(1, len(gq.relations), -1)
            )
            entities = self.model.embed_entity(self.entities.rows[ids])
            return self.model.disjunct_distance(disjuncts, entities)[0].numpy()


def rank_answer(answer_distance: float, negative_distances: np.ndarray) -> int:
    """1 + number of negatives at distance <= the answer's (pessimistic ties)."""
    return 1 + int(np.count_nonzero(np.asarray(negative_distances) <= answer_distance))


def sample_eval_negatives(
    known: np.ndarray, num_entities: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Up to `n` distinct entities outside `known`, sorted."""
    pool = np.setdiff1d(np.arange(num_entities, dtype=np.int64), known)
    if len(pool) <= n:
        return pool
    return np.sort(rng.choice(pool, size=n, replace=False))


@dataclass(frozen=True)
class QueryMetrics:
    structure: str
    mrr: float
    hits: dict[int, float]
    ranks: tuple[int, ...]


def query_metrics(
    eq: EvalQuery,
    scorer: QueryScorer,
    phase: Phase | str,
    ks: tuple[int, ...],
    negatives: int,
    rng: np.random.Generator,
) -> QueryMetrics:
    """Average of 1/rank and 1[rank <= k] over the query's missing answers."""
    missing = eq.missing(phase)
    negs = sample_eval_negatives(eq.known(phase), scorer.num_entities, negatives, rng)
    dists = scorer.distances(eq.query, np.concatenate([missing, negs]))
    answer_d, neg_d = dists[: len(missing)], dists[len(missing) :]
    ranks = tuple(rank_answer(float(d), neg_d) for d in answer_d)
    arr = np.asarray(ranks, dtype=np.float64)
    return QueryMetrics(
        eq.structure_name,
        float(np.mean(1.0 / arr)),
        {k: float(np.mean(arr <= k)) for k in ks},
        ranks,
    )


@dataclass
class MetricReport:
    """Per-structure and overall MRR / Hit@k."""

    phase: str
    ks: tuple[int, ...]
    per_structure: pd.DataFrame
    overall: dict[str, float] = field(default_factory=dict)

    @property
    def mrr(self) -> float:
        return self.overall["mrr"]

    def hits(self, k: int) -> float:
        return self.overall[f"hits@{k}"]

    @property
    def count(self) -> int:
        return int(self.overall["queries"])

    def to_key_values(self) -> list[str]:
        lines = []
        for name, row in self.per_structure.iterrows():
            fields = " ".join(f"{c}={row[c]:.6f}" for c in self.per_structure.columns if c != "queries")
            lines.append(f"phase={self.phase} structure={name} queries={int(row['queries'])} {fields}")
        fields = " ".join(f"{k}={v:.6f}" for k, v in self.overall.items() if k != "queries")
        lines.append(f"phase={self.phase} structure=all queries={self.count} {fields}")
        return lines

    def render(self) -> str:
        table = self.per_structure.copy()
        table.loc["all"] = pd.Series(self.overall)
        table["queries"] = table["queries"].astype(int)
        return table.to_string(float_format=lambda x: f"{x:.4f}")


def metrics(
    queries: list[EvalQuery],
    scorer: QueryScorer,
    phase: Phase | str = Phase.TEST,
    ks: tuple[int, ...] = (1, 3, 10),
    settings: EvalSettings | None = None,
) -> MetricReport:
    """Filtered MRR and Hit@k, averaged per query, per structure and overall.

    Negatives are drawn per query from a generator seeded by (seed, query index),
    so reports do not depend on the worker count.
    """
    if not queries:
        raise ConfigError("metrics needs at least one query")
    settings = settings if settings is not None else EvalSettings()
    phase = Phase(phase)
    ks = tuple(sorted(ks))

    def one(i: int, eq: EvalQuery) -> QueryMetrics:
        rng = np.random.default_rng([settings.seed, i])
        return query_metrics(eq, scorer, phase, ks, settings.negatives, rng)

    results = Parallel(n_jobs=settings.workers, backend="threading")(
        delayed(one)(i, eq) for i, eq in enumerate(queries)
    )
    frame = pd.DataFrame(
        [{"structure": r.structure, "mrr": r.mrr, **{f"hits@{k}": r.hits[k] for k in ks}} for r in results]
    )
    per_structure = frame.groupby("structure", sort=False).mean()
    per_structure.insert(0, "queries", frame.groupby("structure", sort=False).size())
    overall = {"queries": float(len(frame)), **frame.drop(columns="structure").mean().to_dict()}
    return MetricReport(phase.value, ks, per_structure, overall)
