"""Tests for `app/query/plan.py`.

u/s/o tables, the top-down cut and agreement with exhaustive enumeration.
"""

import numpy as np
import pytest

from app.errors import CutError
from app.query.plan import (
    NodeCut,
    annotate,
    brute_force_cut,
    check_cut,
    cut_cost,
    optimal_cut,
    plan_table,
)
from app.query.structure import catalog, format_structure, parse_structure, random_structure

CATALOG = catalog()


def test_2p_tables() -> None:
    """anchor -> V1 -> root: u=(2,1,0), s=(0,1,2), o(V1)=1."""
    q = CATALOG["2p"]
    ann = annotate(q)
    # preorder ids: root 0, V1 1, anchor 2
    assert ann.u == (0, 1, 2)
    assert ann.s == (2, 1, 0)
    assert ann.o[1] == 1


def test_visit_counters_are_linear() -> None:
    """Each pass touches every node exactly once."""
    for q in CATALOG.values():
        assert annotate(q).visits == {"u": q.size, "s": q.size, "o": q.size, "f": q.size}


def test_2p_cut() -> None:
    q = CATALOG["2p"]
    cut = optimal_cut(q)
    assert cut.labels(q) == ["V1"]
    assert cut_cost(q, cut) == 1


@pytest.mark.parametrize(("nodes", "cost"), [({1}, 1), ({0}, 2), ({2}, 2)])
def test_2p_cut_costs(nodes: set[int], cost: int) -> None:
    assert cut_cost(CATALOG["2p"], NodeCut(frozenset(nodes))) == cost


def test_1p_anchor_cut_cost() -> None:
    """Both singleton cuts of 1p cost 1."""
    q = CATALOG["1p"]
    assert cut_cost(q, NodeCut(frozenset({1}))) == 1
    assert cut_cost(q, NodeCut(frozenset({0}))) == 1
    assert brute_force_cut(q)[1] == 1


def test_3p_cut() -> None:
    """3p cuts next to the middle and costs 2."""
    q = CATALOG["3p"]
    cut = optimal_cut(q)
    assert set(cut) == {2}
    assert cut_cost(q, cut) == 2
    assert brute_force_cut(q)[1] == 2


def test_ip_cut() -> None:
    """ip cuts at the node right after the intersection."""
    q = CATALOG["ip"]
    cut = optimal_cut(q)
    assert set(cut) == {1}
    assert cut_cost(q, cut) == 1


def test_ip_tie_goes_to_the_higher_cut() -> None:
    """{V1, V2} costs the same and caches as much; the single node wins."""
    q = CATALOG["ip"]
    lower = NodeCut(frozenset({2, 4}))
    assert cut_cost(q, lower) == 1
    ann = annotate(q)
    assert max(ann.s[v] for v in lower) == max(ann.s[v] for v in optimal_cut(q, ann)) == 1


def test_deeper_cut_when_it_shrinks_the_cache() -> None:
    """3p ties at cost 2 between nodes 1 and 2; node 2 caches one hop instead of two."""
    ann = annotate(CATALOG["3p"])
    assert (ann.own_cost(1), ann.own_cost(2)) == (2, 2)
    assert (ann.s[1], ann.s[2]) == (2, 1)
    assert ann.f[0] == 1


def test_2in_cut() -> None:
    """The anchors cache nothing beyond themselves, so 2in cuts there."""
    q = CATALOG["2in"]
    cut = optimal_cut(q)
    assert set(cut) == {2, 5}
    assert cut_cost(q, cut) == 1


def test_invalid_cuts() -> None:
    """Missing or doubly-covered paths are rejected."""
    q = CATALOG["2i"]
    with pytest.raises(CutError):
        check_cut(q, NodeCut(frozenset({1})))
    with pytest.raises(CutError):
        check_cut(q, NodeCut(frozenset({0, 1, 3})))
    with pytest.raises(CutError):
        cut_cost(q, NodeCut(frozenset({17})))


def test_catalog_matches_brute_force() -> None:
    """Optimal cut cost equals the enumerated minimum on every catalog structure."""
    for name, q in CATALOG.items():
        cut = optimal_cut(q)
        check_cut(q, cut)
        best, cost = brute_force_cut(q)
        assert cut_cost(q, cut) == cost, name
        assert cut == best, name
        assert annotate(q).o[0] == cut_cost(q, cut), name


def test_random_structures_match_brute_force() -> None:
    rng = np.random.default_rng(5)
    for _ in range(150):
        q = random_structure(rng, max_nodes=14)
        cut = optimal_cut(q)
        check_cut(q, cut)
        best, cost = brute_force_cut(q)
        assert cut_cost(q, cut) == cost
        assert cut == best, format_structure(q)


def test_brute_force_cap() -> None:
    expr = "(p " * 20 + "(a)" + ")" * 20
    with pytest.raises(CutError, match="capped"):
        brute_force_cut(parse_structure(expr))


def test_plan_table_columns() -> None:
    q = CATALOG["2p"]
    ann = annotate(q)
    table = plan_table(q, ann, optimal_cut(q, ann))
    assert list(table.columns) == ["node", "label", "op", "u", "s", "o", "f", "cut"]
    assert table["cut"].tolist() == [False, True, False]
