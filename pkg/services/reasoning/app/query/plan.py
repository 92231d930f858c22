"""Optimal node cut of a query plan.

A cut splits grounded-query evaluation in two: forward traversal from the
anchors up to the cut (cached), and backward verification from a candidate
answer down to the cut. Costs are integer exponents of the branching factor C.

Per node v:

    u(v)  projections strictly above v on the way to the root
    s(v)  max projections from v (inclusive) down to any anchor; negation adds 0
    o(v)  best cost of any cut inside v's subtree
    f(v)  smallest forward-cache exponent (max s over the cut) of a cut inside
          v's subtree whose cost stays within o(root)

Among cuts of minimum cost, the one with the smallest forward-cache exponent
wins; remaining ties go to the higher cut. The cut is read off top-down: v
joins the cut as soon as it meets both bounds, o(root) and f(root).
"""

import math
from dataclasses import dataclass, field
from itertools import product

import pandas as pd

from app.errors import CutError
from app.query.structure import Op, QueryStructure, validate

BRUTE_FORCE_MAX_NODES = 20


@dataclass(frozen=True)
class PlanAnnotation:
    """u/s/o/f tables indexed by node id, plus per-pass visit counters."""

    u: tuple[int, ...]
    s: tuple[int, ...]
    o: tuple[int, ...]
    f: tuple[float, ...]
    visits: dict[str, int] = field(default_factory=dict, compare=False)

    def own_cost(self, v: int) -> int:
        return max(self.u[v], self.s[v])


@dataclass(frozen=True)
class NodeCut:
    """Set of node ids meeting every anchor-to-root path exactly once."""

    nodes: frozenset[int]

    def __contains__(self, v: int) -> bool:
        return v in self.nodes

    def __iter__(self):
        return iter(sorted(self.nodes))

    def __len__(self) -> int:
        return len(self.nodes)

    def labels(self, q: QueryStructure) -> list[str]:
        return [q.labels[v] for v in sorted(self.nodes)]


def annotate(q: QueryStructure) -> PlanAnnotation:
    """Run the passes (u top-down, then s, o and f bottom-up)."""
    validate(q, authored=False)
    n = q.size
    visits = {"u": 0, "s": 0, "o": 0, "f": 0}

    u = [0] * n
    # preorder ids: parents come before children
    for v in range(n):
        visits["u"] += 1
        step = 1 if q.ops[v] is Op.PROJECTION else 0
        for c in q.children[v]:
            u[c] = u[v] + step

    s = [0] * n
    o = [0] * n
    order = q.postorder()
    for v in order:
        visits["s"] += 1
        kids = q.children[v]
        op = q.ops[v]
        if op is Op.ANCHOR:
            s[v] = 0
        elif op is Op.PROJECTION:
            s[v] = s[kids[0]] + 1
        elif op is Op.NEGATION:
            s[v] = s[kids[0]]
        else:
            s[v] = max(s[c] for c in kids)
    for v in order:
        visits["o"] += 1
        kids = q.children[v]
        if not kids:
            o[v] = u[v]
        else:
            o[v] = min(max(o[c] for c in kids), max(u[v], s[v]))
    bound = o[0]
    f = [math.inf] * n
    for v in order:
        visits["f"] += 1
        own = s[v] if max(u[v], s[v]) <= bound else math.inf
        kids = q.children[v]
        f[v] = min(own, max(f[c] for c in kids)) if kids else own
    return PlanAnnotation(tuple(u), tuple(s), tuple(o), tuple(f), visits)


def optimal_cut(q: QueryStructure, annotation: PlanAnnotation | None = None) -> NodeCut:
    """Minimum-cost cut, then smallest forward cache, then the highest nodes."""
    ann = annotation or annotate(q)
    cost, exponent = ann.o[0], ann.f[0]
    cut: set[int] = set()
    stack = [0]
    while stack:
        v = stack.pop()
        kids = q.children[v]
        if ann.own_cost(v) <= cost and ann.s[v] <= exponent:
            cut.add(v)
        else:
            stack.extend(kids)
    return NodeCut(frozenset(cut))


def check_cut(q: QueryStructure, cut: NodeCut) -> None:
    """Raise CutError unless every anchor-to-root path holds exactly one cut node."""
    for v in cut.nodes:
        if not 0 <= v < q.size:
            raise CutError(f"node {v} is not in the structure")
    for path in q.anchor_paths():
        hits = [v for v in path if v in cut.nodes]
        if len(hits) != 1:
            raise CutError(
                f"path from anchor node {path[0]} meets the cut {len(hits)} times, expected 1"
            )


def cut_cost(q: QueryStructure, cut: NodeCut) -> int:
    """Max over anchor paths of max(projections up to the cut node, projections above it)."""
    check_cut(q, cut)
    worst = 0
    for path in q.anchor_paths():
        i = next(k for k, v in enumerate(path) if v in cut.nodes)
        below = sum(1 for v in path[1 : i + 1] if q.ops[v] is Op.PROJECTION)
        above = sum(1 for v in path[i + 1 :] if q.ops[v] is Op.PROJECTION)
        worst = max(worst, below, above)
    return worst


def _all_cuts(q: QueryStructure, v: int) -> list[frozenset[int]]:
    kids = q.children[v]
    out = [frozenset([v])]
    if kids:
        for combo in product(*(_all_cuts(q, c) for c in kids)):
            out.append(frozenset().union(*combo))
    return out


def _depth(q: QueryStructure, v: int) -> int:
    d = 0
    while v:
        v = q.parent[v]
        d += 1
    return d


def brute_force_cut(q: QueryStructure) -> tuple[NodeCut, int]:
    """Enumerate every cut and return a minimizer with its cost (small structures only).

    Ties are broken like `optimal_cut`: smallest forward-cache exponent, then
    the smallest total depth.

    Raises:
        CutError: if the structure has more than 20 nodes.
    """
    if q.size > BRUTE_FORCE_MAX_NODES:
        raise CutError(
            f"brute force is capped at {BRUTE_FORCE_MAX_NODES} nodes, structure has {q.size}"
        )
    s = annotate(q).s

    def exponent(nodes: frozenset[int]) -> int:
        return max(s[v] for v in nodes)

    best: tuple[int, int, int, tuple[int, ...]] | None = None
    best_cut: frozenset[int] = frozenset()
    for nodes in _all_cuts(q, 0):
        cost = cut_cost(q, NodeCut(nodes))
        key = (cost, exponent(nodes), sum(_depth(q, v) for v in nodes), tuple(sorted(nodes)))
        if best is None or key < best:
            best, best_cut = key, nodes
    assert best is not None
    return NodeCut(best_cut), best[0]


def plan_table(q: QueryStructure, annotation: PlanAnnotation, cut: NodeCut) -> pd.DataFrame:
    """One row per node with its label, operator and u/s/o values."""
    return pd.DataFrame(
        {
            "node": range(q.size),
            "label": q.labels,
            "op": [op.value for op in q.ops],
            "u": annotation.u,
            "s": annotation.s,
            "o": annotation.o,
            "f": annotation.f,
            "cut": [v in cut for v in range(q.size)],
        }
    )
