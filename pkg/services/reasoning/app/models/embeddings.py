"""Embedding tables (the sparse parameters) and query-embedding value types."""

from collections.abc import Callable
from dataclasses import dataclass, fields

import numpy as np
import torch

from app.errors import GraphIndexError, ShapeError


class EmbeddingTable:
    """`num_rows x width` rows plus their Adam moments.

    Rows are shared between worker threads and written without locks; readers
    may see a row mid-update.
    """

    def __init__(self, num_rows: int, width: int, dtype: torch.dtype = torch.float32):
        self.num_rows = num_rows
        self.width = width
        self.rows = torch.zeros(num_rows, width, dtype=dtype)
        self.adam_m = torch.zeros_like(self.rows)
        self.adam_v = torch.zeros_like(self.rows)

    @property
    def dtype(self) -> torch.dtype:
        return self.rows.dtype

    def init_uniform(self, bound: float, generator: torch.Generator | None = None) -> None:
        with torch.no_grad():
            self.rows.uniform_(-bound, bound, generator=generator)

    def check_ids(self, ids: torch.Tensor) -> None:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.num_rows):
            raise GraphIndexError(f"row id outside [0, {self.num_rows})")

    def gather(self, ids: np.ndarray | torch.Tensor | list[int]) -> "GatheredRows":
        """Copy the distinct rows among `ids` into one gradient-tracking leaf."""
        ids = torch.as_tensor(np.asarray(ids, dtype=np.int64)).reshape(-1)
        self.check_ids(ids)
        unique = torch.unique(ids, sorted=True)
        leaf = self.rows.index_select(0, unique).clone().requires_grad_(True)
        return GatheredRows(unique, leaf)


@dataclass(eq=False)
class GatheredRows:
    """Rows touched by one step; repeated ids share a slot so their gradients add up."""

    ids: torch.Tensor
    leaf: torch.Tensor

    def lookup(self, ids: np.ndarray | torch.Tensor) -> torch.Tensor:
        want = torch.as_tensor(np.asarray(ids, dtype=np.int64))
        flat = want.reshape(-1)
        pos = torch.searchsorted(self.ids, flat).clamp(max=max(len(self.ids) - 1, 0))
        if flat.numel() and not bool(torch.equal(self.ids[pos], flat)):
            raise GraphIndexError("lookup of a row that was not gathered")
        return self.leaf.index_select(0, pos).reshape(*want.shape, self.leaf.shape[-1])

    @property
    def grad(self) -> torch.Tensor:
        if self.leaf.grad is None:
            return torch.zeros_like(self.leaf)
        return self.leaf.grad


# ---------------------------------------------------------------------------
# Query embeddings. Every tensor has shape (*batch, width); ops broadcast over batch.


@dataclass(frozen=True, eq=False)
class QueryEmbedding:
    def tensors(self) -> tuple[torch.Tensor, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))

    def apply(self, fn: Callable[[torch.Tensor], torch.Tensor]) -> "QueryEmbedding":
        return type(self)(*(fn(t) for t in self.tensors()))

    @property
    def batch_shape(self) -> torch.Size:
        return self.tensors()[0].shape[:-1]

    def unsqueeze(self, dim: int) -> "QueryEmbedding":
        return self.apply(lambda t: t.unsqueeze(dim))

    def __getitem__(self, index) -> "QueryEmbedding":
        return self.apply(lambda t: t[index])


@dataclass(frozen=True, eq=False)
class PointVec(QueryEmbedding):
    vec: torch.Tensor


@dataclass(frozen=True, eq=False)
class ComplexVec(QueryEmbedding):
    re: torch.Tensor
    im: torch.Tensor


@dataclass(frozen=True, eq=False)
class Box(QueryEmbedding):
    center: torch.Tensor
    offset: torch.Tensor


@dataclass(frozen=True, eq=False)
class BetaVec(QueryEmbedding):
    alpha: torch.Tensor
    beta: torch.Tensor


def stack(embeddings: list[QueryEmbedding]) -> QueryEmbedding:
    """Stack same-variant embeddings along a new leading set dimension."""
    if not embeddings:
        raise ShapeError("cannot stack an empty list of embeddings")
    kind = type(embeddings[0])
    if any(type(e) is not kind for e in embeddings):
        raise ShapeError("mixed embedding variants: " + ", ".join(type(e).__name__ for e in embeddings))
    parts = zip(*(e.tensors() for e in embeddings), strict=True)
    try:
        return kind(*(torch.stack(list(p), dim=0) for p in parts))
    except RuntimeError as e:
        raise ShapeError(f"embedding shapes differ: {e}") from e


def same_variant(a: QueryEmbedding, b: QueryEmbedding) -> None:
    if type(a) is not type(b):
        raise ShapeError(f"variant mismatch: {type(a).__name__} vs {type(b).__name__}")
