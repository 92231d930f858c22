"""Synthetic graph generators for benchmarks and learning checks."""

import numpy as np

from app.kg.store import KnowledgeGraph


def synthetic_kg(
    num_entities: int, num_relations: int, branching: int, rng: np.random.Generator
) -> KnowledgeGraph:
    """Random graph whose per-(entity, relation) out-degree is uniform in [C/2, C].

    Targets are uniform over all entities, so in-degrees concentrate around the
    same range and every projection expands a set by roughly `branching`.
    """
    low = max(1, branching // 2)
    degrees = rng.integers(low, branching + 1, size=num_entities * num_relations)
    pairs = np.arange(num_entities * num_relations, dtype=np.int64)
    owners = np.repeat(pairs, degrees)
    heads = owners // num_relations
    rels = owners % num_relations
    tails = rng.integers(0, num_entities, size=len(owners))
    return KnowledgeGraph.from_triples(heads, rels, tails, num_entities, num_relations)


def planted_kg(
    num_entities: int,
    num_relations: int,
    num_clusters: int,
    degree: int,
    rng: np.random.Generator,
) -> tuple[KnowledgeGraph, np.ndarray]:
    """Graph with planted relational structure.

    Entities are split into `num_clusters` clusters; each relation maps cluster
    `c` to cluster `perm_r[c]` and every entity links to `degree` random members
    of its target cluster. Returns the graph and the cluster label per entity.
    """
    clusters = rng.integers(0, num_clusters, size=num_entities)
    members = [np.flatnonzero(clusters == c) for c in range(num_clusters)]
    perms = [rng.permutation(num_clusters) for _ in range(num_relations)]
    heads, rels, tails = [], [], []
    for r, perm in enumerate(perms):
        for h in range(num_entities):
            pool = members[perm[clusters[h]]]
            if not len(pool):
                continue
            picks = rng.choice(pool, size=min(degree, len(pool)), replace=False)
            heads.append(np.full(len(picks), h))
            rels.append(np.full(len(picks), r))
            tails.append(picks)
    kg = KnowledgeGraph.from_triples(
        np.concatenate(heads), np.concatenate(rels), np.concatenate(tails),
        num_entities, num_relations,
    )
    return kg, clusters


def nested_splits(
    kg: KnowledgeGraph,
    valid_fraction: float,
    test_fraction: float,
    rng: np.random.Generator,
) -> tuple[KnowledgeGraph, KnowledgeGraph, KnowledgeGraph]:
    """Split edges at random into nested graphs G_train ⊆ G_valid ⊆ G_test = kg."""
    h, r, t = kg.triples()
    order = rng.permutation(len(h))
    n_test = int(round(len(h) * test_fraction))
    n_valid = int(round(len(h) * valid_fraction))
    train_idx = order[: len(h) - n_test - n_valid]
    valid_idx = order[: len(h) - n_test]

    def sub(idx: np.ndarray) -> KnowledgeGraph:
        return KnowledgeGraph.from_triples(
            h[idx], r[idx], t[idx], kg.num_entities, kg.num_relations,
            kg.entity_tokens, kg.relation_tokens,
        )

    return sub(train_idx), sub(valid_idx), kg
