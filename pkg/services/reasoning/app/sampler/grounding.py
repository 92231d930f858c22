"""Grounding query structures on a graph and deciding answer membership.

Three pieces:

* `instantiate`: reverse (root-first) sampling, so the sampled root is an
  answer by construction. `ground_query` skips the forward cache
  `instantiate` builds to confirm it.
* `exhaustive_answers` / `forward_cache`: bottom-up set traversal. Sets are
  carried as `(ids, complemented)` so a complement is folded into the merge
  that consumes it and only materialized against V when a projection or the
  answer node needs it.
* `verify_candidate`: top-down membership check from a candidate answer to the
  cut, looking up the forward cache there.
"""

from collections.abc import Iterator
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from app.errors import CutError, OracleCapError, SamplerExhaustedError
from app.kg.store import Direction, KnowledgeGraph
from app.logging_utils import get_logger
from app.query.plan import NodeCut, check_cut, optimal_cut
from app.query.structure import Op, QueryStructure
from app.settings import SamplerSettings

log = get_logger(__name__)

_EMPTY = np.empty(0, dtype=np.int64)


@dataclass(frozen=True)
class GroundedQuery:
    """A structure with entities in its anchor slots and relations in its projection slots."""

    structure: QueryStructure
    anchors: tuple[int, ...]
    relations: tuple[int, ...]
    positive: int

    def relation_at(self, v: int) -> int:
        return self.relations[self.structure.relation_slot[v]]

    def anchor_at(self, v: int) -> int:
        return self.anchors[self.structure.anchor_slot[v]]


@dataclass(frozen=True, eq=False)
class EntitySet:
    """Sorted ids, or their complement against V when `complemented`."""

    ids: np.ndarray
    complemented: bool = False

    def contains(self, v: int) -> bool:
        i = int(np.searchsorted(self.ids, v))
        hit = i < len(self.ids) and int(self.ids[i]) == v
        return hit != self.complemented

    def contains_any(self, candidates: np.ndarray) -> bool:
        if not len(candidates):
            return False
        pos = np.searchsorted(self.ids, candidates)
        pos = np.minimum(pos, max(len(self.ids) - 1, 0))
        hits = (self.ids[pos] == candidates) if len(self.ids) else np.zeros(len(candidates), bool)
        return bool(np.any(hits != self.complemented))


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """Forward-traversal sets at the cut nodes of one grounded query."""

    cut: NodeCut
    sets: dict[int, EntitySet]


@lru_cache(maxsize=256)
def plan_cut(q: QueryStructure) -> NodeCut:
    """Optimal cut of `q`, memoized per structure."""
    return optimal_cut(q)


def _default_settings(settings: SamplerSettings | None) -> SamplerSettings:
    return settings if settings is not None else SamplerSettings()


# ---------------------------------------------------------------------------
# Forward traversal


def _capped(ids: np.ndarray, cap: int, v: int) -> np.ndarray:
    if len(ids) > cap:
        raise OracleCapError(f"set at node {v} has {len(ids)} entities (cap {cap})")
    return ids


def _materialize(s: EntitySet, kg: KnowledgeGraph, cap: int, v: int) -> np.ndarray:
    if not s.complemented:
        return s.ids
    if kg.num_entities - len(s.ids) > cap:
        raise OracleCapError(
            f"complement at node {v} has {kg.num_entities - len(s.ids)} entities (cap {cap})"
        )
    return np.setdiff1d(np.arange(kg.num_entities, dtype=np.int64), s.ids, assume_unique=True)


def _merge(op: Op, inputs: list[EntitySet]) -> EntitySet:
    pos = [s.ids for s in inputs if not s.complemented]
    neg = [s.ids for s in inputs if s.complemented]
    if op is Op.INTERSECTION:
        if pos:
            out = pos[0]
            for ids in pos[1:]:
                out = np.intersect1d(out, ids, assume_unique=True)
            for ids in neg:
                out = np.setdiff1d(out, ids, assume_unique=True)
            return EntitySet(out)
        out = neg[0]
        for ids in neg[1:]:
            out = np.union1d(out, ids)
        return EntitySet(out, complemented=True)
    # union
    out = pos[0] if pos else _EMPTY
    for ids in pos[1:]:
        out = np.union1d(out, ids)
    if not neg:
        return EntitySet(out)
    common = neg[0]
    for ids in neg[1:]:
        common = np.intersect1d(common, ids, assume_unique=True)
    return EntitySet(np.setdiff1d(common, out, assume_unique=True), complemented=True)


def _evaluate(
    gq: GroundedQuery,
    kg: KnowledgeGraph,
    v: int,
    cap: int,
    sink: dict[int, EntitySet] | None = None,
) -> EntitySet:
    q = gq.structure
    op = q.ops[v]
    kids = q.children[v]
    if op is Op.ANCHOR:
        out = EntitySet(np.array([gq.anchor_at(v)], dtype=np.int64))
    elif op is Op.PROJECTION:
        child = _evaluate(gq, kg, kids[0], cap, sink)
        src = _materialize(child, kg, cap, kids[0])
        out = EntitySet(_capped(kg.project(src, gq.relation_at(v)), cap, v))
    elif op is Op.NEGATION:
        child = _evaluate(gq, kg, kids[0], cap, sink)
        out = EntitySet(child.ids, not child.complemented)
    else:
        out = _merge(op, [_evaluate(gq, kg, c, cap, sink) for c in kids])
    if sink is not None:
        sink[v] = out
    return out


def exhaustive_answers(
    gq: GroundedQuery, kg: KnowledgeGraph, settings: SamplerSettings | None = None
) -> np.ndarray:
    """Exact answer set of `gq` by full traversal (the oracle).

    Raises:
        OracleCapError: if any intermediate set exceeds `settings.set_cap`.
    """
    cap = _default_settings(settings).set_cap
    root = _evaluate(gq, kg, 0, cap)
    return _materialize(root, kg, cap, 0)


def forward_cache(
    gq: GroundedQuery,
    kg: KnowledgeGraph,
    cut: NodeCut | None = None,
    settings: SamplerSettings | None = None,
) -> ForwardCache:
    """Traverse from the anchors up to each cut node and keep the sets there."""
    q = gq.structure
    cut = cut if cut is not None else plan_cut(q)
    check_cut(q, cut)
    cap = _default_settings(settings).set_cap
    return ForwardCache(cut, {v: _evaluate(gq, kg, v, cap) for v in cut})


def node_sets(
    gq: GroundedQuery, kg: KnowledgeGraph, settings: SamplerSettings | None = None
) -> dict[int, EntitySet]:
    """Traversal set at every node (for diagnostics and cache checks)."""
    sink: dict[int, EntitySet] = {}
    _evaluate(gq, kg, 0, _default_settings(settings).set_cap, sink)
    return sink


# ---------------------------------------------------------------------------
# Backward verification


def verify_candidate(
    v: int, gq: GroundedQuery, cache: ForwardCache, kg: KnowledgeGraph
) -> bool:
    """True iff entity `v` answers `gq`, walking inverse edges down to the cut."""
    q = gq.structure
    memo: dict[tuple[int, int], bool] = {}

    def member(node: int, entity: int) -> bool:
        hit = cache.sets.get(node)
        if hit is not None:
            return hit.contains(entity)
        key = (node, entity)
        if key in memo:
            return memo[key]
        op = q.ops[node]
        kids = q.children[node]
        if op is Op.PROJECTION:
            heads = kg.neighbors(entity, gq.relation_at(node), Direction.BACKWARD)
            below = cache.sets.get(kids[0])
            if below is not None:
                out = below.contains_any(heads)
            else:
                out = any(member(kids[0], int(w)) for w in heads)
        elif op is Op.NEGATION:
            out = not member(kids[0], entity)
        elif op is Op.INTERSECTION:
            out = all(member(c, entity) for c in kids)
        elif op is Op.UNION:
            out = any(member(c, entity) for c in kids)
        else:
            raise CutError(f"anchor node {node} lies above the cut")
        memo[key] = out
        return out

    return member(0, int(v))


# ---------------------------------------------------------------------------
# Reverse instantiation


def _ground(
    q: QueryStructure, kg: KnowledgeGraph, root: int, rng: np.random.Generator
) -> tuple[list[int], list[int]] | None:
    anchors = [-1] * len(q.anchors)
    relations = [-1] * len(q.projections)
    roots = kg.entities_with_in_edges
    stack = [(0, root)]
    while stack:
        v, entity = stack.pop()
        op = q.ops[v]
        kids = q.children[v]
        if op is Op.ANCHOR:
            anchors[q.anchor_slot[v]] = entity
        elif op is Op.PROJECTION:
            edge = kg.sample_incident(entity, Direction.BACKWARD, rng)
            if edge is None:
                return None
            relations[q.relation_slot[v]] = edge[0]
            stack.append((kids[0], edge[1]))
        elif op is Op.NEGATION:
            # negated branches start from an independent entity
            stack.append((kids[0], int(roots[rng.integers(len(roots))])))
        else:
            stack.extend((c, entity) for c in kids)
    return anchors, relations


def _groundings(
    q: QueryStructure,
    kg: KnowledgeGraph,
    rng: np.random.Generator,
    settings: SamplerSettings,
) -> Iterator[GroundedQuery]:
    roots = kg.entities_with_in_edges
    if not len(roots):
        raise SamplerExhaustedError("graph has no entity with an incoming edge")
    for _ in range(settings.retry_budget):
        root = int(roots[rng.integers(len(roots))])
        grounded = _ground(q, kg, root, rng)
        if grounded is not None:
            yield GroundedQuery(q, tuple(grounded[0]), tuple(grounded[1]), root)


def _exhausted(q: QueryStructure, settings: SamplerSettings) -> SamplerExhaustedError:
    return SamplerExhaustedError(
        f"no grounding of {q.label} after {settings.retry_budget} attempts"
    )


def instantiate_with_cache(
    q: QueryStructure,
    kg: KnowledgeGraph,
    rng: np.random.Generator,
    settings: SamplerSettings | None = None,
) -> tuple[GroundedQuery, ForwardCache]:
    """`instantiate`, also returning the forward cache built to verify the root."""
    settings = _default_settings(settings)
    cut = plan_cut(q)
    for gq in _groundings(q, kg, rng, settings):
        cache = forward_cache(gq, kg, cut, settings)
        if verify_candidate(gq.positive, gq, cache, kg):
            return gq, cache
    raise _exhausted(q, settings)


def anchor_cache(gq: GroundedQuery) -> ForwardCache:
    """Cache holding only the anchor singletons; verification then walks the whole query."""
    anchors = gq.structure.anchors
    return ForwardCache(
        NodeCut(frozenset(anchors)),
        {v: EntitySet(np.array([gq.anchor_at(v)], dtype=np.int64)) for v in anchors},
    )


def ground_query(
    q: QueryStructure,
    kg: KnowledgeGraph,
    rng: np.random.Generator,
    settings: SamplerSettings | None = None,
) -> GroundedQuery:
    """`instantiate` without a forward traversal.

    Without negation the root-first grounding already answers the query. With
    negation the root is checked top-down against `anchor_cache`.
    """
    settings = _default_settings(settings)
    for gq in _groundings(q, kg, rng, settings):
        if not q.has_negation or verify_candidate(gq.positive, gq, anchor_cache(gq), kg):
            return gq
    raise _exhausted(q, settings)


def instantiate(
    q: QueryStructure,
    kg: KnowledgeGraph,
    rng: np.random.Generator,
    settings: SamplerSettings | None = None,
) -> GroundedQuery:
    """Ground `q` root-first; the returned `positive` is a verified answer.

    Raises:
        SamplerExhaustedError: when the retry budget runs out.
    """
    return instantiate_with_cache(q, kg, rng, settings)[0]
