"""Immutable relation-partitioned knowledge-graph store.

A graph is kept as two compressed adjacency indexes (forward h -> t and
backward t -> h). Each index holds, per entity, a contiguous slice of
`(relation, neighbor)` pairs sorted by relation then neighbor, so the
neighbors of `(v, r)` are found with two binary searches inside the slice of
`v` and membership of a third id is one more.

Inputs are delimiter-separated triple files (ids or string tokens); the
binary image layout is:

    magic "SMKG" | version u32 | num_entities u64 | num_relations u64 | edges u64
    forward offsets u64[E+1] | forward relations u32[M] | forward tails u32[M]
    backward offsets u64[E+1] | backward relations u32[M] | backward heads u32[M]

all little-endian. String dictionaries live in `<image>.dict.json`.
"""

import json
import struct
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd

from app.errors import GraphFormatError, GraphIndexError
from app.logging_utils import get_logger

log = get_logger(__name__)

MAGIC = b"SMKG"
FORMAT_VERSION = 1
MAX_ID = np.iinfo(np.int32).max
_HEADER = struct.Struct("<4sIQQQ")

DELIMITERS = {"tab": "\t", "comma": ",", "space": " ", "\t": "\t", ",": ",", " ": " "}


class Direction(str, Enum):
    """Traversal direction over the stored edges."""

    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class GraphStats:
    """Degree statistics; max degrees are per (entity, relation, direction) list."""

    max_out_degree: int
    max_in_degree: int
    edge_count: int
    per_relation_edge_count: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Adjacency:
    """One direction of the graph: per-entity slices of sorted (relation, entity) pairs."""

    offsets: np.ndarray
    relations: np.ndarray
    entities: np.ndarray

    def max_list_length(self, num_relations: int) -> int:
        if not len(self.relations):
            return 0
        owner = np.repeat(np.arange(len(self.offsets) - 1, dtype=np.int64), np.diff(self.offsets))
        keys = owner * max(num_relations, 1) + self.relations
        _, counts = np.unique(keys, return_counts=True)
        return int(counts.max())


def _build_adjacency(src: np.ndarray, rel: np.ndarray, dst: np.ndarray, n: int) -> Adjacency:
    order = np.lexsort((dst, rel, src))
    src, rel, dst = src[order], rel[order], dst[order]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
    adj = Adjacency(offsets, rel.astype(np.int32), dst.astype(np.int32))
    for arr in (adj.offsets, adj.relations, adj.entities):
        arr.setflags(write=False)
    return adj


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Read-only graph over `num_entities` entities and `num_relations` relations.

    Safe to share between any number of threads; nothing mutates after
    construction.
    """

    num_entities: int
    num_relations: int
    forward: Adjacency
    backward: Adjacency
    stats: GraphStats
    entity_tokens: tuple[str, ...] | None = None
    relation_tokens: tuple[str, ...] | None = None

    @classmethod
    def from_triples(
        cls,
        heads: np.ndarray,
        relations: np.ndarray,
        tails: np.ndarray,
        num_entities: int | None = None,
        num_relations: int | None = None,
        entity_tokens: tuple[str, ...] | None = None,
        relation_tokens: tuple[str, ...] | None = None,
    ) -> "KnowledgeGraph":
        """Build a graph from id arrays; duplicate triples are collapsed."""
        h = np.asarray(heads, dtype=np.int64).ravel()
        r = np.asarray(relations, dtype=np.int64).ravel()
        t = np.asarray(tails, dtype=np.int64).ravel()
        if not (len(h) == len(r) == len(t)):
            raise GraphFormatError("head/relation/tail arrays differ in length")
        if num_entities is None:
            num_entities = int(max(h.max(initial=-1), t.max(initial=-1)) + 1)
        if num_relations is None:
            num_relations = int(r.max(initial=-1) + 1)
        if len(h) and (min(h.min(), t.min(), r.min()) < 0):
            raise GraphIndexError("negative id in triples")
        if len(h) and (max(h.max(), t.max()) >= num_entities or r.max() >= num_relations):
            raise GraphIndexError("triple id outside declared entity/relation counts")
        if num_entities > MAX_ID or num_relations > MAX_ID:
            raise GraphFormatError("id overflow: counts exceed the 32-bit id space")

        if len(h):
            uniq = np.unique(np.stack([h, r, t], axis=1), axis=0)
            h, r, t = uniq[:, 0], uniq[:, 1], uniq[:, 2]
        forward = _build_adjacency(h, r, t, num_entities)
        backward = _build_adjacency(t, r, h, num_entities)
        stats = GraphStats(
            max_out_degree=forward.max_list_length(num_relations),
            max_in_degree=backward.max_list_length(num_relations),
            edge_count=int(len(h)),
            per_relation_edge_count=tuple(
                int(c) for c in np.bincount(r, minlength=num_relations)
            ),
        )
        return cls(
            num_entities=num_entities,
            num_relations=num_relations,
            forward=forward,
            backward=backward,
            stats=stats,
            entity_tokens=entity_tokens,
            relation_tokens=relation_tokens,
        )

    def _check_entity(self, v: int) -> None:
        if not 0 <= v < self.num_entities:
            raise GraphIndexError(f"entity id {v} outside [0, {self.num_entities})")

    def _check_relation(self, r: int) -> None:
        if not 0 <= r < self.num_relations:
            raise GraphIndexError(f"relation id {r} outside [0, {self.num_relations})")

    def _adjacency(self, direction: Direction) -> Adjacency:
        return self.forward if Direction(direction) is Direction.FORWARD else self.backward

    def neighbors(self, v: int, r: int, direction: Direction = Direction.FORWARD) -> np.ndarray:
        """Sorted entity ids reachable from `v` over relation `r` (read-only view)."""
        self._check_entity(v)
        self._check_relation(r)
        adj = self._adjacency(direction)
        lo, hi = int(adj.offsets[v]), int(adj.offsets[v + 1])
        rels = adj.relations[lo:hi]
        a = int(np.searchsorted(rels, r, side="left"))
        b = int(np.searchsorted(rels, r, side="right"))
        return adj.entities[lo + a : lo + b]

    def project(
        self, ids: np.ndarray, r: int, direction: Direction = Direction.FORWARD
    ) -> np.ndarray:
        """Sorted union of `neighbors(v, r, direction)` over every v in `ids`."""
        self._check_relation(r)
        adj = self._adjacency(direction)
        parts = []
        for v in np.asarray(ids, dtype=np.int64):
            lo, hi = int(adj.offsets[v]), int(adj.offsets[v + 1])
            rels = adj.relations[lo:hi]
            a = int(np.searchsorted(rels, r, side="left"))
            b = int(np.searchsorted(rels, r, side="right"))
            if b > a:
                parts.append(adj.entities[lo + a : lo + b])
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(parts)).astype(np.int64)

    def has_edge(self, h: int, r: int, t: int) -> bool:
        """True iff (h, r, t) is an edge."""
        self._check_entity(t)
        tails = self.neighbors(h, r, Direction.FORWARD)
        i = int(np.searchsorted(tails, t))
        return i < len(tails) and int(tails[i]) == t

    def degree(self, v: int, direction: Direction = Direction.FORWARD) -> int:
        """Number of incident edges of `v` in `direction`, over all relations."""
        self._check_entity(v)
        adj = self._adjacency(direction)
        return int(adj.offsets[v + 1] - adj.offsets[v])

    def sample_incident(
        self, v: int, direction: Direction, rng: np.random.Generator
    ) -> tuple[int, int] | None:
        """Uniformly sample one `(relation, entity)` pair incident to `v`, or None."""
        self._check_entity(v)
        adj = self._adjacency(direction)
        lo, hi = int(adj.offsets[v]), int(adj.offsets[v + 1])
        if hi == lo:
            return None
        i = int(rng.integers(lo, hi))
        return int(adj.relations[i]), int(adj.entities[i])

    @cached_property
    def entities_with_in_edges(self) -> np.ndarray:
        """Entities that have at least one incoming edge (root grounding support)."""
        ids = np.flatnonzero(np.diff(self.backward.offsets))
        ids.setflags(write=False)
        return ids

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All edges as (heads, relations, tails), sorted by head, relation, tail."""
        heads = np.repeat(
            np.arange(self.num_entities, dtype=np.int64), np.diff(self.forward.offsets)
        )
        return heads, self.forward.relations.astype(np.int64), self.forward.entities.astype(np.int64)


# ---------------------------------------------------------------------------
# Triple files


def _resolve_delimiter(delimiter: str) -> str:
    try:
        return DELIMITERS[delimiter]
    except KeyError:
        raise GraphFormatError(f"unsupported delimiter {delimiter!r} (tab, comma, space)") from None


def _read_table(path: str | Path, delimiter: str) -> pd.DataFrame:
    """Read a triple file as strings with a `line` column (1-based line numbers)."""
    sep = _resolve_delimiter(delimiter)
    try:
        df = pd.read_csv(
            path,
            sep=sep,
            header=None,
            dtype=str,
            keep_default_na=False,
            na_values=[],
            skip_blank_lines=False,
            quoting=3,
            engine="c",
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame({"head": [], "relation": [], "tail": [], "line": []})
    except pd.errors.ParserError as e:
        raise GraphFormatError(f"{path}: malformed triple file: {e}") from e

    df = df.fillna("")
    df["line"] = np.arange(1, len(df) + 1)
    cols = [c for c in df.columns if c != "line"]
    filled = df[cols].apply(lambda s: s.str.strip() != "")
    blank = ~filled.any(axis=1)
    df, filled = df[~blank], filled[~blank]
    if df.empty:
        return pd.DataFrame({"head": [], "relation": [], "tail": [], "line": []})
    if len(cols) != 3:
        bad = df if len(cols) < 3 else df[filled[cols[3:]].any(axis=1)]
        line = int(bad["line"].iloc[0]) if len(bad) else int(df["line"].iloc[0])
        raise GraphFormatError(f"{path}:{line}: expected 3 fields")
    incomplete = ~filled.all(axis=1)
    if incomplete.any():
        line = int(df.loc[incomplete, "line"].iloc[0])
        raise GraphFormatError(f"{path}:{line}: expected 3 fields")
    out = df[cols + ["line"]].copy()
    out.columns = ["head", "relation", "tail", "line"]
    for c in ("head", "relation", "tail"):
        out[c] = out[c].str.strip()
    return out


def _as_ids(values: pd.Series, lines: pd.Series, path: str) -> np.ndarray | None:
    """Integer ids if every token is a non-negative integer, else None."""
    if values.empty or not values.str.fullmatch(r"\d+").all():
        return None
    as_int = pd.to_numeric(values, errors="coerce")
    too_big = as_int > MAX_ID
    if too_big.any():
        raise GraphFormatError(f"{path}:{int(lines[too_big].iloc[0])}: id overflow")
    return as_int.to_numpy(dtype=np.int64)


def _encode(frames: list[pd.DataFrame], path: str):
    """Encode entity and relation columns of several tables with one dictionary."""
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    if table.empty:
        empty = np.zeros(0, dtype=np.int64)
        return [(empty, empty, empty) for _ in frames], 0, 0, None, None

    ent_tokens = pd.concat([table["head"], table["tail"]], ignore_index=True)
    ent_lines = pd.concat([table["line"], table["line"]], ignore_index=True)
    ent_ids = _as_ids(ent_tokens, ent_lines, path)
    rel_ids = _as_ids(table["relation"], table["line"], path)

    n = len(table)
    entity_vocab = relation_vocab = None
    if ent_ids is None:
        # first-seen order over the file: head then tail of each line
        interleaved = np.column_stack([table["head"].to_numpy(), table["tail"].to_numpy()]).ravel()
        codes, uniques = pd.factorize(interleaved)
        heads, tails = codes[0::2].astype(np.int64), codes[1::2].astype(np.int64)
        entity_vocab = tuple(str(u) for u in uniques)
        num_entities = len(entity_vocab)
    else:
        heads, tails = ent_ids[:n], ent_ids[n:]
        num_entities = int(ent_ids.max()) + 1
    if rel_ids is None:
        codes, uniques = pd.factorize(table["relation"].to_numpy())
        rels = codes.astype(np.int64)
        relation_vocab = tuple(str(u) for u in uniques)
        num_relations = len(relation_vocab)
    else:
        rels = rel_ids
        num_relations = int(rel_ids.max()) + 1

    parts, start = [], 0
    for frame in frames:
        stop = start + len(frame)
        parts.append((heads[start:stop], rels[start:stop], tails[start:stop]))
        start = stop
    return parts, num_entities, num_relations, entity_vocab, relation_vocab


def _encode_with_dictionary(table: pd.DataFrame, vocab: dict, path: str):
    """Encode a table against a stored dictionary so ids keep their meaning."""
    lines = table["line"]

    def column(values: pd.Series, tokens: list[str] | None, what: str) -> np.ndarray:
        if values.empty:
            return np.zeros(0, dtype=np.int64)
        if tokens:
            codes = pd.Index(tokens).get_indexer(values)
            missing = np.flatnonzero(codes < 0)
            if len(missing):
                i = int(missing[0])
                raise GraphFormatError(
                    f"{path}:{int(lines.iloc[i])}: {what} {values.iloc[i]!r} not in the dictionary"
                )
            return codes.astype(np.int64)
        ids = _as_ids(values, lines, path)
        if ids is None:
            raise GraphFormatError(f"{path}: {what} tokens found but the dictionary holds ids")
        return ids

    ent_tokens, rel_tokens = vocab.get("entities"), vocab.get("relations")
    heads = column(table["head"], ent_tokens, "entity")
    tails = column(table["tail"], ent_tokens, "entity")
    rels = column(table["relation"], rel_tokens, "relation")
    seen_ent = int(max(heads.max(initial=-1), tails.max(initial=-1))) + 1
    n_ent = len(ent_tokens) if ent_tokens else max(int(vocab.get("num_entities", 0)), seen_ent)
    n_rel = (
        len(rel_tokens)
        if rel_tokens
        else max(int(vocab.get("num_relations", 0)), int(rels.max(initial=-1)) + 1)
    )
    ent_vocab = tuple(ent_tokens) if ent_tokens else None
    rel_vocab = tuple(rel_tokens) if rel_tokens else None
    return heads, rels, tails, n_ent, n_rel, ent_vocab, rel_vocab


def load_triples(path: str | Path, delimiter: str = "\t") -> KnowledgeGraph:
    """Load a delimiter-separated triple file into a KnowledgeGraph.

    A `<path>.dict.json` sidecar (written by `dump_triples`) fixes the id of
    every token; without one, tokens are numbered in first-seen order.

    Raises:
        GraphFormatError: malformed line (with its line number), id overflow, or
            a token missing from the sidecar dictionary.
    """
    table = _read_table(path, delimiter)
    vocab = read_dictionary(path)
    if vocab is not None:
        h, r, t, n_ent, n_rel, ent_vocab, rel_vocab = _encode_with_dictionary(
            table, vocab, str(path)
        )
    else:
        parts, n_ent, n_rel, ent_vocab, rel_vocab = _encode([table], str(path))
        h, r, t = parts[0]
    kg = KnowledgeGraph.from_triples(h, r, t, n_ent, n_rel, ent_vocab, rel_vocab)
    log.info(
        "loaded %s: %d entities, %d relations, %d edges",
        path, kg.num_entities, kg.num_relations, kg.stats.edge_count,
    )
    return kg


def load_splits(
    train: str | Path, valid: str | Path, test: str | Path, delimiter: str = "\t"
) -> tuple[KnowledgeGraph, KnowledgeGraph, KnowledgeGraph]:
    """Load edge splits as nested graphs G_train ⊆ G_valid ⊆ G_test over one dictionary."""
    tables = [_read_table(p, delimiter) for p in (train, valid, test)]
    parts, n_ent, n_rel, ent_vocab, rel_vocab = _encode(tables, str(train))
    graphs = []
    for k in range(1, 4):
        h = np.concatenate([p[0] for p in parts[:k]])
        r = np.concatenate([p[1] for p in parts[:k]])
        t = np.concatenate([p[2] for p in parts[:k]])
        graphs.append(KnowledgeGraph.from_triples(h, r, t, n_ent, n_rel, ent_vocab, rel_vocab))
    return graphs[0], graphs[1], graphs[2]


def dump_triples(kg: KnowledgeGraph, path: str | Path, delimiter: str = "\t") -> None:
    """Write the graph back as a triple file plus its dictionary sidecar.

    Tokens are written when the graph has a dictionary; the sidecar keeps the
    id of every token and the entity/relation counts, so `load_triples` gives
    back the same graph.
    """
    h, r, t = kg.triples()
    df = pd.DataFrame({"head": h, "relation": r, "tail": t})
    if kg.entity_tokens is not None:
        tokens = np.asarray(kg.entity_tokens, dtype=object)
        df["head"], df["tail"] = tokens[h], tokens[t]
    if kg.relation_tokens is not None:
        df["relation"] = np.asarray(kg.relation_tokens, dtype=object)[r]
    df.to_csv(path, sep=_resolve_delimiter(delimiter), header=False, index=False)
    write_dictionary(kg, path)


def dictionary_path(path: str | Path) -> Path:
    """Sidecar path holding the token dictionaries of a triple file or image."""
    return Path(f"{path}.dict.json")


def write_dictionary(kg: KnowledgeGraph, path: str | Path) -> None:
    with open(dictionary_path(path), "w", encoding="utf-8") as f:
        json.dump(
            {
                "entities": list(kg.entity_tokens) if kg.entity_tokens else None,
                "relations": list(kg.relation_tokens) if kg.relation_tokens else None,
                "num_entities": kg.num_entities,
                "num_relations": kg.num_relations,
            },
            f,
        )


def read_dictionary(path: str | Path) -> dict | None:
    """The sidecar of `path`, or None when there is none."""
    side = dictionary_path(path)
    if not side.exists():
        return None
    try:
        with open(side, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise GraphFormatError(f"{side}: malformed dictionary: {e}") from e


# ---------------------------------------------------------------------------
# Binary image


def write_image(kg: KnowledgeGraph, path: str | Path) -> None:
    """Write the binary graph image (and dictionary sidecar when present)."""
    with open(path, "wb") as f:
        f.write(
            _HEADER.pack(
                MAGIC, FORMAT_VERSION, kg.num_entities, kg.num_relations, kg.stats.edge_count
            )
        )
        for adj in (kg.forward, kg.backward):
            f.write(adj.offsets.astype("<u8").tobytes())
            f.write(adj.relations.astype("<u4").tobytes())
            f.write(adj.entities.astype("<u4").tobytes())
    if kg.entity_tokens is not None or kg.relation_tokens is not None:
        write_dictionary(kg, path)


def read_image(path: str | Path) -> KnowledgeGraph:
    """Read a graph image written by `write_image`."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise GraphFormatError(f"{path}: truncated graph image")
    magic, version, n_ent, n_rel, m = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise GraphFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise GraphFormatError(f"{path}: unsupported image version {version}")
    expected = _HEADER.size + 2 * (8 * (n_ent + 1) + 8 * m)
    if len(data) != expected:
        raise GraphFormatError(f"{path}: size {len(data)} != expected {expected}")

    pos = _HEADER.size

    def take(dtype: str, count: int) -> np.ndarray:
        nonlocal pos
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
        pos += arr.nbytes
        return arr

    fwd_off = take("<u8", n_ent + 1)
    fwd_rel = take("<u4", m)
    fwd_ent = take("<u4", m)
    take("<u8", n_ent + 1)
    take("<u4", m)
    take("<u4", m)
    heads = np.repeat(np.arange(n_ent, dtype=np.int64), np.diff(fwd_off.astype(np.int64)))

    ent_vocab = rel_vocab = None
    vocab = read_dictionary(path)
    if vocab is not None:
        ent_vocab = tuple(vocab["entities"]) if vocab.get("entities") else None
        rel_vocab = tuple(vocab["relations"]) if vocab.get("relations") else None
    return KnowledgeGraph.from_triples(
        heads, fwd_rel.astype(np.int64), fwd_ent.astype(np.int64), n_ent, n_rel, ent_vocab, rel_vocab
    )
