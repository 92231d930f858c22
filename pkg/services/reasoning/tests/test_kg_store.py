"""Tests for `app/kg/store.py` and `app/kg/synthetic.py`.

Covers triple-file loading, adjacency lookups, incident-edge sampling and the
binary image round trip.
"""

from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from app.errors import GraphFormatError, GraphIndexError
from app.kg.store import (
    Direction,
    KnowledgeGraph,
    dump_triples,
    load_splits,
    load_triples,
    read_image,
    write_image,
)
from app.kg.synthetic import nested_splits, planted_kg, synthetic_kg


def _write(tmp_path: Path, name: str, text: str) -> Path:
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_comma_file(tmp_path: Path) -> None:
    """Two comma lines give three entities, one relation and forward(0,0)={1,2}."""
    kg = load_triples(_write(tmp_path, "g.csv", "0,0,1\n0,0,2\n"), "comma")
    assert kg.num_entities == 3
    assert kg.num_relations == 1
    assert kg.neighbors(0, 0).tolist() == [1, 2]


def test_load_empty_file(tmp_path: Path) -> None:
    """An empty file loads as the empty graph."""
    kg = load_triples(_write(tmp_path, "g.tsv", ""))
    assert (kg.num_entities, kg.num_relations, kg.stats.edge_count) == (0, 0, 0)


def test_duplicates_collapse(tmp_path: Path) -> None:
    """Duplicated lines count once."""
    kg = load_triples(_write(tmp_path, "g.csv", "0,0,1\n0,0,1\n"), "comma")
    assert kg.stats.edge_count == 1


def test_malformed_line_reports_line_number(tmp_path: Path) -> None:
    """A short line is rejected with its 1-based line number."""
    path = _write(tmp_path, "g.tsv", "0\t0\t1\n0\t1\n")
    with pytest.raises(GraphFormatError, match=":2:"):
        load_triples(path)


def test_token_files_get_dictionary(tmp_path: Path) -> None:
    """Non-numeric tokens are encoded in first-seen order."""
    kg = load_triples(_write(tmp_path, "g.tsv", "alice\tknows\tbob\nbob\tknows\tcarol\n"))
    assert kg.entity_tokens == ("alice", "bob", "carol")
    assert kg.relation_tokens == ("knows",)
    assert kg.has_edge(1, 0, 2)


def test_neighbors_and_mirror() -> None:
    """Backward lists mirror forward lists."""
    kg = KnowledgeGraph.from_triples([0, 0], [0, 0], [1, 2])
    assert kg.neighbors(0, 0, Direction.FORWARD).tolist() == [1, 2]
    assert kg.neighbors(1, 0, Direction.BACKWARD).tolist() == [0]
    assert kg.neighbors(2, 0, Direction.FORWARD).tolist() == []


def test_mirror_invariant_on_random_graph(small_kg: KnowledgeGraph) -> None:
    """u in forward(v, r) iff v in backward(u, r)."""
    h, r, t = small_kg.triples()
    for i in range(0, len(h), 37):
        assert h[i] in small_kg.neighbors(int(t[i]), int(r[i]), Direction.BACKWARD)
        assert t[i] in small_kg.neighbors(int(h[i]), int(r[i]), Direction.FORWARD)


def test_has_edge_is_directional() -> None:
    """has_edge respects direction and absent edges."""
    kg = KnowledgeGraph.from_triples([0], [0], [1])
    assert kg.has_edge(0, 0, 1)
    assert not kg.has_edge(1, 0, 0)
    with pytest.raises(GraphIndexError):
        kg.has_edge(0, 0, 2)


def test_out_of_range_ids_raise(toy_kg: KnowledgeGraph) -> None:
    """Lookups outside the id space raise GraphIndexError."""
    with pytest.raises(GraphIndexError):
        toy_kg.neighbors(5, 0)
    with pytest.raises(GraphIndexError):
        toy_kg.neighbors(0, 2)


def test_project_is_union_of_neighbors(toy_kg: KnowledgeGraph) -> None:
    """Set projection unions the per-entity neighbor lists."""
    assert toy_kg.project(np.array([1, 2]), 1).tolist() == [3, 4]
    assert toy_kg.project(np.array([3, 4]), 1, Direction.BACKWARD).tolist() == [1, 2]
    assert toy_kg.project(np.array([], dtype=np.int64), 0).tolist() == []


def test_sample_incident_single_and_none() -> None:
    """One incident edge is drawn with probability 1; none gives None."""
    kg = KnowledgeGraph.from_triples([7], [3], [0], num_entities=8, num_relations=4)
    rng = np.random.default_rng(0)
    assert all(kg.sample_incident(0, Direction.BACKWARD, rng) == (3, 7) for _ in range(20))
    assert kg.sample_incident(7, Direction.BACKWARD, rng) is None


def test_sample_incident_is_uniform() -> None:
    """Each of k incident pairs is drawn with frequency 1/k (chi-square)."""
    k = 6
    kg = KnowledgeGraph.from_triples(list(range(1, k + 1)), [0, 1, 0, 1, 2, 2], [0] * k)
    rng = np.random.default_rng(11)
    draws = [kg.sample_incident(0, Direction.BACKWARD, rng) for _ in range(100_000)]
    counts = np.array([draws.count(pair) for pair in set(draws)])
    assert len(counts) == k
    assert stats.chisquare(counts).pvalue > 1e-3


def test_image_round_trip(tmp_path: Path, small_kg: KnowledgeGraph) -> None:
    """Images reload into the same adjacency."""
    path = tmp_path / "g.smkg"
    write_image(small_kg, path)
    back = read_image(path)
    assert back.num_entities == small_kg.num_entities
    assert back.stats == small_kg.stats
    for a, b in zip(back.triples(), small_kg.triples()):
        assert np.array_equal(a, b)


def test_image_keeps_dictionary(tmp_path: Path) -> None:
    """Token dictionaries travel in the sidecar file."""
    kg = load_triples(_write(tmp_path, "g.tsv", "a\tr\tb\n"))
    write_image(kg, tmp_path / "g.smkg")
    back = read_image(tmp_path / "g.smkg")
    assert back.entity_tokens == ("a", "b")
    assert back.relation_tokens == ("r",)


def test_bad_image_is_rejected(tmp_path: Path) -> None:
    """Bad magic and truncated images raise GraphFormatError."""
    bad = tmp_path / "bad.smkg"
    bad.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(GraphFormatError):
        read_image(bad)
    short = tmp_path / "short.smkg"
    short.write_bytes(b"SMKG")
    with pytest.raises(GraphFormatError):
        read_image(short)


def _same_graph(a: KnowledgeGraph, b: KnowledgeGraph) -> None:
    assert (a.num_entities, a.num_relations) == (b.num_entities, b.num_relations)
    assert a.entity_tokens == b.entity_tokens
    assert a.relation_tokens == b.relation_tokens
    for x, y in zip(a.triples(), b.triples()):
        assert np.array_equal(x, y)


def test_dump_then_load(tmp_path: Path, toy_kg: KnowledgeGraph) -> None:
    dump_triples(toy_kg, tmp_path / "g.tsv")
    _same_graph(load_triples(tmp_path / "g.tsv"), toy_kg)


def test_dump_then_load_keeps_token_ids(tmp_path: Path) -> None:
    """Tail-only tokens keep their ids even though the dump is ordered by head."""
    kg = load_triples(_write(tmp_path, "src.tsv", "a\tr\tb\nc\tr\td\na\tr\te\n"))
    assert kg.entity_tokens == ("a", "b", "c", "d", "e")
    dump_triples(kg, tmp_path / "g.tsv")
    _same_graph(load_triples(tmp_path / "g.tsv"), kg)


def test_dump_keeps_isolated_entities(tmp_path: Path) -> None:
    """Entities without edges survive through the sidecar counts."""
    kg = KnowledgeGraph.from_triples([0], [1], [1], num_entities=6, num_relations=3)
    dump_triples(kg, tmp_path / "g.tsv")
    _same_graph(load_triples(tmp_path / "g.tsv"), kg)


def test_token_outside_dictionary(tmp_path: Path) -> None:
    kg = load_triples(_write(tmp_path, "src.tsv", "a\tr\tb\n"))
    dump_triples(kg, tmp_path / "g.tsv")
    with open(tmp_path / "g.tsv", "a", encoding="utf-8") as f:
        f.write("a\tr\tzed\n")
    with pytest.raises(GraphFormatError, match=":2: entity 'zed' not in the dictionary"):
        load_triples(tmp_path / "g.tsv")


def test_splits_are_nested(tmp_path: Path) -> None:
    """Train ⊆ valid ⊆ test over one dictionary."""
    train = _write(tmp_path, "train.tsv", "a\tr\tb\n")
    valid = _write(tmp_path, "valid.tsv", "b\tr\tc\n")
    test = _write(tmp_path, "test.tsv", "c\tr\ta\n")
    g1, g2, g3 = load_splits(train, valid, test)
    assert (g1.stats.edge_count, g2.stats.edge_count, g3.stats.edge_count) == (1, 2, 3)
    assert g1.num_entities == g3.num_entities == 3


def test_synthetic_degrees_in_range() -> None:
    """Out-degree per (entity, relation) stays within [C/2, C] before dedup."""
    kg = synthetic_kg(300, 3, 8, np.random.default_rng(1))
    assert kg.stats.max_out_degree <= 8
    assert kg.degree(0) >= 3


def test_nested_splits_and_planted() -> None:
    rng = np.random.default_rng(2)
    kg, clusters = planted_kg(60, 2, 4, 3, rng)
    assert len(clusters) == 60
    g1, g2, g3 = nested_splits(kg, 0.1, 0.1, rng)
    assert g1.stats.edge_count <= g2.stats.edge_count <= g3.stats.edge_count
    h, r, t = g1.triples()
    assert all(g2.has_edge(int(a), int(b), int(c)) for a, b, c in zip(h, r, t))
