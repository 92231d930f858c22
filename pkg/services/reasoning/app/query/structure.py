"""Query structures: the logical-query trees that get grounded on a graph.

Structures are written in a parenthesized prefix DSL:

    (a)            anchor entity
    (p X)          relation projection of X
    (n X)          complement of X
    (i X Y ...)    intersection
    (u X Y ...)    union

Every form is one node of the tree; the outermost form is the answer (root).
Nodes are numbered in DFS preorder from the root, and relation / anchor slots
follow that same order, so a grounding is just two id lists.
"""

import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from app.errors import StructureError


class Op(str, Enum):
    """Operation a node applies to its children."""

    ANCHOR = "a"
    PROJECTION = "p"
    NEGATION = "n"
    INTERSECTION = "i"
    UNION = "u"


class NodeKind(str, Enum):
    ANCHOR = "anchor"
    VARIABLE = "variable"
    ANSWER = "answer"


class EdgeKind(str, Enum):
    PROJECTION = "projection"
    NEGATION = "negation"
    MERGE = "merge"


class MergeOp(str, Enum):
    INTERSECTION = "intersection"
    UNION = "union"


# (op, children) nested tuples; the parser and the rewrites work on these.
Form = tuple[Op, tuple["Form", ...]]

CATALOG_EXPRESSIONS: dict[str, str] = {
    "1p": "(p (a))",
    "2p": "(p (p (a)))",
    "3p": "(p (p (p (a))))",
    "2i": "(i (p (a)) (p (a)))",
    "3i": "(i (p (a)) (p (a)) (p (a)))",
    "pi": "(i (p (p (a))) (p (a)))",
    "ip": "(p (i (p (a)) (p (a))))",
    "2u": "(u (p (a)) (p (a)))",
    "up": "(p (u (p (a)) (p (a))))",
    "2in": "(i (p (a)) (n (p (a))))",
    "3in": "(i (p (a)) (p (a)) (n (p (a))))",
    "inp": "(p (i (p (a)) (n (p (a)))))",
    "pin": "(i (p (p (a))) (n (p (a))))",
    "pni": "(i (n (p (p (a)))) (p (a)))",
}


@dataclass(frozen=True)
class QueryStructure:
    """Immutable query tree in preorder layout.

    Attributes:
        ops: Operation per node; node 0 is the root (answer).
        children: Child node ids per node, in DSL order.
        name: Catalog name when the structure came from the catalog.
    """

    ops: tuple[Op, ...]
    children: tuple[tuple[int, ...], ...]
    name: str | None = field(default=None, compare=False)

    @cached_property
    def parent(self) -> tuple[int, ...]:
        out = [-1] * len(self.ops)
        for v, kids in enumerate(self.children):
            for c in kids:
                out[c] = v
        return tuple(out)

    @property
    def size(self) -> int:
        return len(self.ops)

    @property
    def root(self) -> int:
        return 0

    def kind(self, v: int) -> NodeKind:
        if v == 0:
            return NodeKind.ANSWER
        return NodeKind.ANCHOR if self.ops[v] is Op.ANCHOR else NodeKind.VARIABLE

    def edge_kind(self, child: int) -> EdgeKind:
        """Kind of the edge from `child` up to its parent (the parent's op decides)."""
        op = self.ops[self.parent[child]]
        if op is Op.PROJECTION:
            return EdgeKind.PROJECTION
        if op is Op.NEGATION:
            return EdgeKind.NEGATION
        return EdgeKind.MERGE

    @property
    def nodes(self) -> list[dict]:
        return [{"id": v, "kind": self.kind(v)} for v in range(self.size)]

    @property
    def edges(self) -> list[dict]:
        return [
            {"child": c, "parent": self.parent[c], "kind": self.edge_kind(c)}
            for c in range(1, self.size)
        ]

    @property
    def merge_ops(self) -> dict[int, MergeOp]:
        out = {}
        for v, op in enumerate(self.ops):
            if op is Op.INTERSECTION:
                out[v] = MergeOp.INTERSECTION
            elif op is Op.UNION:
                out[v] = MergeOp.UNION
        return out

    @cached_property
    def anchors(self) -> tuple[int, ...]:
        """Anchor node ids in preorder (anchor slot order)."""
        return tuple(v for v, op in enumerate(self.ops) if op is Op.ANCHOR)

    @cached_property
    def projections(self) -> tuple[int, ...]:
        """Projection node ids in preorder (relation slot order)."""
        return tuple(v for v, op in enumerate(self.ops) if op is Op.PROJECTION)

    @cached_property
    def relation_slot(self) -> dict[int, int]:
        return {v: k for k, v in enumerate(self.projections)}

    @cached_property
    def anchor_slot(self) -> dict[int, int]:
        return {v: k for k, v in enumerate(self.anchors)}

    @cached_property
    def labels(self) -> tuple[str, ...]:
        """`V?` root, `e<k>` anchors, `V<k>` variables numbered bottom-up (post-order)."""
        labels = [""] * self.size
        counter = 0
        for v in self.postorder():
            if v == 0:
                labels[v] = "V?"
            elif self.ops[v] is Op.ANCHOR:
                labels[v] = f"e{self.anchor_slot[v]}"
            else:
                counter += 1
                labels[v] = f"V{counter}"
        return tuple(labels)

    def postorder(self) -> list[int]:
        out: list[int] = []
        stack = [(0, False)]
        while stack:
            v, done = stack.pop()
            if done:
                out.append(v)
                continue
            stack.append((v, True))
            for c in reversed(self.children[v]):
                stack.append((c, False))
        return out

    def anchor_paths(self) -> list[tuple[int, ...]]:
        """Every anchor-to-root path as a tuple of node ids (anchor first)."""
        paths = []
        for a in self.anchors:
            path = [a]
            while path[-1] != 0:
                path.append(self.parent[path[-1]])
            paths.append(tuple(path))
        return paths

    def subtree(self, v: int) -> list[int]:
        out, stack = [], [v]
        while stack:
            x = stack.pop()
            out.append(x)
            stack.extend(self.children[x])
        return out

    @property
    def has_union(self) -> bool:
        return Op.UNION in self.ops

    @property
    def has_negation(self) -> bool:
        return Op.NEGATION in self.ops

    @property
    def label(self) -> str:
        return self.name or format_structure(self)

    def form(self, v: int = 0) -> Form:
        return (self.ops[v], tuple(self.form(c) for c in self.children[v]))


# ---------------------------------------------------------------------------
# Construction, parsing, printing

_TOKEN = re.compile(r"\s*(\(|\)|[^\s()]+)")


def from_form(form: Form, name: str | None = None) -> QueryStructure:
    """Flatten a nested form into preorder layout."""
    ops: list[Op] = []
    children: list[list[int]] = []

    def visit(f: Form) -> int:
        v = len(ops)
        ops.append(f[0])
        children.append([])
        for child in f[1]:
            children[v].append(visit(child))
        return v

    visit(form)
    return QueryStructure(tuple(ops), tuple(tuple(c) for c in children), name)


def _tokenize(text: str) -> list[str]:
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise StructureError(f"syntax error at offset {pos}")
        out.append(m.group(1))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return out


def _parse_form(tokens: list[str], pos: int) -> tuple[Form, int]:
    if pos >= len(tokens) or tokens[pos] != "(":
        raise StructureError(f"syntax error: expected '(' at token {pos}")
    if pos + 1 >= len(tokens):
        raise StructureError("syntax error: unexpected end of input")
    try:
        op = Op(tokens[pos + 1])
    except ValueError:
        raise StructureError(f"syntax error: unknown operator {tokens[pos + 1]!r}") from None
    pos += 2
    kids: list[Form] = []
    while pos < len(tokens) and tokens[pos] != ")":
        child, pos = _parse_form(tokens, pos)
        kids.append(child)
    if pos >= len(tokens):
        raise StructureError("syntax error: missing ')'")
    return (op, tuple(kids)), pos + 1


def parse_structure(text: str, name: str | None = None) -> QueryStructure:
    """Parse and validate a structure expression.

    Raises:
        StructureError: on a syntax error, or naming the violated validation rule.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise StructureError("syntax error: empty expression")
    form, pos = _parse_form(tokens, 0)
    if pos != len(tokens):
        raise StructureError(f"syntax error: trailing tokens after position {pos}")
    q = from_form(form, name)
    validate(q)
    return q


def format_structure(q: QueryStructure, v: int = 0) -> str:
    """Print a structure back to the DSL."""
    kids = q.children[v]
    if not kids:
        return f"({q.ops[v].value})"
    return f"({q.ops[v].value} " + " ".join(format_structure(q, c) for c in kids) + ")"


def validate(q: QueryStructure, authored: bool = True) -> None:
    """Check the structural rules; `authored` adds the negation-placement rules.

    Raises:
        StructureError: naming the first violated rule.
    """
    if not q.size:
        raise StructureError("rule tree: structure has no nodes")
    for v, op in enumerate(q.ops):
        n = len(q.children[v])
        if op is Op.ANCHOR and n:
            raise StructureError(f"rule anchor-leaf: anchor node {v} has children")
        if op is not Op.ANCHOR and not n:
            raise StructureError(f"rule anchor-leaf: leaf node {v} is not an anchor")
        if op in (Op.PROJECTION, Op.NEGATION) and n != 1:
            raise StructureError(f"rule arity: node {v} ({op.value}) needs exactly one input")
        if op in (Op.INTERSECTION, Op.UNION) and n < 2:
            raise StructureError(f"rule arity: node {v} ({op.value}) needs at least two inputs")
    if q.ops[0] is Op.ANCHOR:
        raise StructureError("rule anchor-leaf: the answer node cannot be an anchor")
    for path in q.anchor_paths():
        if not any(q.ops[v] is Op.PROJECTION for v in path[1:]):
            raise StructureError(
                f"rule projection-path: path from anchor node {path[0]} has no projection"
            )
    if not authored:
        return
    for v, op in enumerate(q.ops):
        if op is Op.PROJECTION and q.ops[q.children[v][0]] is Op.NEGATION:
            raise StructureError(
                f"rule projection-after-negation: projection node {v} consumes a negation"
            )
        if op is Op.NEGATION and (v == 0 or q.ops[q.parent[v]] is not Op.INTERSECTION):
            raise StructureError(
                f"rule negation-input: negation node {v} must feed an intersection"
            )


# ---------------------------------------------------------------------------
# Union handling


def _negate(f: Form) -> Form:
    if f[0] is Op.NEGATION:
        return f[1][0]
    return (Op.NEGATION, (f,))


def _rewrite_unions(f: Form) -> Form:
    op, kids = f
    kids = tuple(_rewrite_unions(k) for k in kids)
    if op is Op.UNION:
        return _negate((Op.INTERSECTION, tuple(_negate(k) for k in kids)))
    return (op, kids)


def normalize_union(q: QueryStructure) -> QueryStructure:
    """Replace every union by complement-of-intersection-of-complements.

    The projection count is unchanged; double complements are cancelled.
    Structures without unions come back equal to the input.
    """
    if not q.has_union:
        return q
    out = from_form(_rewrite_unions(q.form()), q.name)
    validate(out, authored=False)
    return out


def _lift(f: Form) -> list[Form]:
    op, kids = f
    if op is Op.ANCHOR:
        return [f]
    if op is Op.UNION:
        return [d for k in kids for d in _lift(k)]
    if op is Op.PROJECTION:
        return [(op, (d,)) for d in _lift(kids[0])]
    lifted = [_lift(k) for k in kids]
    if any(len(ds) > 1 for ds in lifted):
        raise StructureError(
            f"union under {'negation' if op is Op.NEGATION else 'intersection'} "
            "cannot be split into disjuncts"
        )
    return [(op, tuple(ds[0] for ds in lifted))]


def dnf_disjuncts(q: QueryStructure) -> list[QueryStructure]:
    """Split unions that sit above every other merge into union-free disjuncts.

    Raises:
        StructureError: if a union sits below an intersection or negation.
    """
    if not q.has_union:
        return [q]
    return [from_form(d) for d in _lift(q.form())]


def catalog() -> dict[str, QueryStructure]:
    """The 14 standard structures by name."""
    return {name: parse_structure(expr, name) for name, expr in CATALOG_EXPRESSIONS.items()}


def resolve_structure(name_or_expr: str) -> QueryStructure:
    """Catalog lookup by name, else parse as an expression."""
    if name_or_expr in CATALOG_EXPRESSIONS:
        return parse_structure(CATALOG_EXPRESSIONS[name_or_expr], name_or_expr)
    return parse_structure(name_or_expr)


# ---------------------------------------------------------------------------
# Random structures for property checks


def _random_form(rng: np.random.Generator, depth: int, negation: bool, union: bool) -> Form:
    anchor: Form = (Op.ANCHOR, ())
    if depth <= 0:
        return (Op.PROJECTION, (anchor,))
    choice = rng.random()
    if choice < 0.45:
        inner = anchor if rng.random() < 0.4 else _random_form(rng, depth - 1, negation, union)
        return (Op.PROJECTION, (inner,))
    width = int(rng.integers(2, 4))
    kids = [_random_form(rng, depth - 1, negation, union) for _ in range(width)]
    if union and choice > 0.85:
        return (Op.UNION, tuple(kids))
    if negation:
        kids = [
            (Op.NEGATION, (k,)) if i > 0 and rng.random() < 0.35 else k for i, k in enumerate(kids)
        ]
    return (Op.INTERSECTION, tuple(kids))


def random_structure(
    rng: np.random.Generator,
    max_nodes: int = 12,
    negation: bool = True,
    union: bool = False,
    max_depth: int = 4,
) -> QueryStructure:
    """Random valid authored structure with at most `max_nodes` nodes."""
    while True:
        q = from_form(_random_form(rng, int(rng.integers(0, max_depth + 1)), negation, union))
        if q.size > max_nodes:
            continue
        try:
            validate(q)
        except StructureError:
            continue
        return q
