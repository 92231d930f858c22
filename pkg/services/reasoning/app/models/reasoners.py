"""The seven reasoning models.

A model owns the dense operator networks and maps raw table rows into its
embedding space. Query embeddings are built bottom-up along the structure
tree: anchors embed entities, projection nodes apply `project` with the
slot's relation, merges apply `intersect`, negation nodes apply `negate`.
Unions sitting above every other merge become separate disjunct embeddings.

Distances are computed in float64 whatever the storage precision.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.distributions import Beta, kl_divergence

from app.errors import CapabilityError, ShapeError
from app.models.embeddings import (
    BetaVec,
    Box,
    ComplexVec,
    EmbeddingTable,
    PointVec,
    QueryEmbedding,
    same_variant,
    stack,
)
from app.models.kinds import ModelKind
from app.models.networks import DeepSet, OffsetGate, PairMLP, SetAttention, set_sum
from app.query.structure import Op, QueryStructure, normalize_union

DEFAULT_GAMMA = 6.0
DEFAULT_ALPHA = 0.02
DEFAULT_BETA_FLOOR = 0.05


def _f64(t: torch.Tensor) -> torch.Tensor:
    return t.to(torch.float64)


class ReasoningModel(nn.Module):
    """Base class; subclasses fill in the operators of one model kind."""

    kind: ModelKind

    def __init__(
        self,
        dim: int,
        hidden: int | None = None,
        gamma: float = DEFAULT_GAMMA,
        alpha: float = DEFAULT_ALPHA,
        beta_floor: float = DEFAULT_BETA_FLOOR,
    ):
        super().__init__()
        if self.kind.paired_dim and dim % 2:
            raise ShapeError(f"{self.kind.value} needs an even dim, got {dim}")
        self.dim = dim
        self.hidden = hidden or dim
        self.gamma = gamma
        self.alpha = alpha
        self.beta_floor = beta_floor

    @property
    def relation_width(self) -> int:
        return self.kind.relation_width(self.dim)

    # -- per-kind operators ------------------------------------------------

    def embed_entity(self, rows: torch.Tensor) -> QueryEmbedding:
        raise NotImplementedError

    def embed_relation(self, rows: torch.Tensor) -> QueryEmbedding:
        return PointVec(rows)

    def project(self, e: QueryEmbedding, r: QueryEmbedding) -> QueryEmbedding:
        raise NotImplementedError

    def _intersect(self, stacked: QueryEmbedding) -> QueryEmbedding:
        raise CapabilityError(f"{self.kind.value} has no intersection operator")

    def negate(self, e: QueryEmbedding) -> QueryEmbedding:
        raise CapabilityError(f"{self.kind.value} has no negation operator")

    def distance(self, q: QueryEmbedding, v: QueryEmbedding) -> torch.Tensor:
        raise NotImplementedError

    # -- shared ------------------------------------------------------------

    def _check_rows(self, rows: torch.Tensor, width: int) -> None:
        if rows.shape[-1] != width:
            raise ShapeError(f"{self.kind.value} expects rows of width {width}, got {rows.shape[-1]}")

    def intersect(self, es: list[QueryEmbedding]) -> QueryEmbedding:
        """Permutation-invariant intersection of at least two embeddings."""
        if len(es) < 2:
            raise ShapeError(f"intersection needs at least two inputs, got {len(es)}")
        return self._intersect(stack(es))

    def batched_distance(
        self, queries: QueryEmbedding, entities: QueryEmbedding, mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        """M x N distances; entries where `mask` is False are zero."""
        same_variant(queries, entities)
        m, n = queries.batch_shape, entities.batch_shape
        if len(m) != 1 or len(n) != 1:
            raise ShapeError(f"expected 1-d batches, got {tuple(m)} and {tuple(n)}")
        dists = self.distance(queries.unsqueeze(1), entities.unsqueeze(0))
        if mask is None:
            return dists
        mask = torch.as_tensor(mask, dtype=torch.bool)
        if tuple(mask.shape) != (m[0], n[0]):
            raise ShapeError(f"mask shape {tuple(mask.shape)} != {(m[0], n[0])}")
        return torch.where(mask, dists, torch.zeros_like(dists))

    def check_structure(self, q: QueryStructure) -> None:
        if not self.kind.supports_multihop and q.ops != (Op.PROJECTION, Op.ANCHOR):
            raise CapabilityError(f"{self.kind.value} answers single-hop (1p) queries only")
        if q.has_negation and not self.kind.supports_negation:
            raise CapabilityError(f"{self.kind.value} cannot embed negation ({q.label})")

    def embed_query(
        self,
        q: QueryStructure,
        anchor_rows: torch.Tensor,
        relation_rows: torch.Tensor,
        union: str = "dnf",
    ) -> list[QueryEmbedding]:
        """Embed a batch of groundings of `q`, one embedding per disjunct.

        Args:
            q: Structure shared by the batch.
            anchor_rows: (B, anchors, dim) entity rows in anchor-slot order.
            relation_rows: (B, projections, relation_width) rows in relation-slot order.
            union: "dnf" splits unions into disjuncts; "demorgan" rewrites them
                with negation (negation-capable kinds only) and yields one embedding.
        """
        self.check_structure(q)
        if union == "demorgan" and q.has_union:
            if not self.kind.supports_negation:
                raise CapabilityError(f"{self.kind.value} cannot embed unions by complement")
            q = normalize_union(q)
        if anchor_rows.shape[-2] != len(q.anchors) or relation_rows.shape[-2] != len(q.projections):
            raise ShapeError(
                f"{q.label} needs {len(q.anchors)} anchors and {len(q.projections)} relations, "
                f"got {anchor_rows.shape[-2]} and {relation_rows.shape[-2]}"
            )

        def walk(v: int) -> list[QueryEmbedding]:
            op = q.ops[v]
            kids = q.children[v]
            if op is Op.ANCHOR:
                return [self.embed_entity(anchor_rows[..., q.anchor_slot[v], :])]
            if op is Op.PROJECTION:
                r = self.embed_relation(relation_rows[..., q.relation_slot[v], :])
                return [self.project(e, r) for e in walk(kids[0])]
            if op is Op.UNION:
                return [d for c in kids for d in walk(c)]
            inputs = [walk(c) for c in kids]
            if any(len(alts) > 1 for alts in inputs):
                raise CapabilityError(f"union below {op.name.lower()} in {q.label} has no DNF split")
            if op is Op.NEGATION:
                return [self.negate(inputs[0][0])]
            return [self.intersect([alts[0] for alts in inputs])]

        return walk(0)

    def disjunct_distance(
        self, disjuncts: list[QueryEmbedding], entities: QueryEmbedding
    ) -> torch.Tensor:
        """M x N distances, minimum over the DNF disjuncts."""
        dists = [self.batched_distance(d, entities) for d in disjuncts]
        out = dists[0]
        for d in dists[1:]:
            out = torch.minimum(out, d)
        return out

    def init_tables(
        self, num_entities: int, num_relations: int, seed: int, dtype: torch.dtype = torch.float32
    ) -> tuple[EmbeddingTable, EmbeddingTable]:
        """Fresh entity and relation tables for this model."""
        gen = torch.Generator().manual_seed(seed)
        entities = EmbeddingTable(num_entities, self.dim, dtype)
        relations = EmbeddingTable(num_relations, self.relation_width, dtype)
        bound = (self.gamma + 2.0) / self.dim
        entities.init_uniform(bound, gen)
        relations.init_uniform(math.pi if self.kind is ModelKind.ROTATE_M else bound, gen)
        return entities, relations


class GQEModel(ReasoningModel):
    """Points; translation projection; DeepSet intersection; L2 distance."""

    kind = ModelKind.GQE

    def __init__(self, dim: int, hidden: int | None = None, **kwargs):
        super().__init__(dim, hidden, **kwargs)
        self.deepset = DeepSet(dim, self.hidden)

    def embed_entity(self, rows: torch.Tensor) -> PointVec:
        self._check_rows(rows, self.dim)
        return PointVec(rows)

    def project(self, e: QueryEmbedding, r: QueryEmbedding) -> PointVec:
        same_variant(e, r)
        return PointVec(e.vec + r.vec)

    def _intersect(self, stacked: PointVec) -> PointVec:
        return PointVec(self.deepset(stacked.vec))

    def distance(self, q: PointVec, v: PointVec) -> torch.Tensor:
        same_variant(q, v)
        return torch.linalg.vector_norm(_f64(q.vec) - _f64(v.vec), dim=-1)


class TransEModel(ReasoningModel):
    """Single-hop translation model."""

    kind = ModelKind.TRANSE

    def embed_entity(self, rows: torch.Tensor) -> PointVec:
        self._check_rows(rows, self.dim)
        return PointVec(rows)

    def project(self, e: PointVec, r: PointVec) -> PointVec:
        same_variant(e, r)
        return PointVec(e.vec + r.vec)

    def distance(self, q: PointVec, v: PointVec) -> torch.Tensor:
        same_variant(q, v)
        return torch.linalg.vector_norm(_f64(q.vec) - _f64(v.vec), dim=-1)


class Q2BModel(ReasoningModel):
    """Boxes; relation rows are [center delta | offset delta]."""

    kind = ModelKind.Q2B

    def __init__(self, dim: int, hidden: int | None = None, **kwargs):
        super().__init__(dim, hidden, **kwargs)
        self.center_attention = SetAttention(dim, self.hidden)
        self.offset_gate = OffsetGate(dim, self.hidden)

    def embed_entity(self, rows: torch.Tensor) -> Box:
        self._check_rows(rows, self.dim)
        return Box(rows, torch.zeros_like(rows))

    def embed_relation(self, rows: torch.Tensor) -> Box:
        self._check_rows(rows, 2 * self.dim)
        return Box(rows[..., : self.dim], F.relu(rows[..., self.dim :]))

    def project(self, e: Box, r: Box) -> Box:
        same_variant(e, r)
        return Box(e.center + r.center, e.offset + r.offset)

    def _intersect(self, stacked: Box) -> Box:
        weights = self.center_attention(stacked.center)
        center = set_sum(weights * stacked.center)
        offset = stacked.offset.min(dim=0).values * self.offset_gate(stacked.offset)
        return Box(center, offset)

    def distance(self, q: Box, v: Box) -> torch.Tensor:
        same_variant(q, v)
        center, offset, point = _f64(q.center), _f64(q.offset), _f64(v.center)
        lo, hi = center - offset, center + offset
        outside = (F.relu(point - hi) + F.relu(lo - point)).sum(dim=-1)
        inside = (center - torch.minimum(hi, torch.maximum(lo, point))).abs().sum(dim=-1)
        return outside + self.alpha * inside


class BetaEModel(ReasoningModel):
    """Products of Beta distributions; dim holds interleaved (alpha, beta) pairs."""

    kind = ModelKind.BETAE

    def __init__(self, dim: int, hidden: int | None = None, **kwargs):
        super().__init__(dim, hidden, **kwargs)
        self.projection = PairMLP(2 * dim, self.hidden, dim)
        self.attention = SetAttention(dim, self.hidden, dim // 2)

    def _positive(self, raw: torch.Tensor) -> torch.Tensor:
        return F.softplus(raw) + self.beta_floor

    def embed_entity(self, rows: torch.Tensor) -> BetaVec:
        self._check_rows(rows, self.dim)
        return BetaVec(self._positive(rows[..., 0::2]), self._positive(rows[..., 1::2]))

    def project(self, e: BetaVec, r: PointVec) -> BetaVec:
        if not isinstance(e, BetaVec) or not isinstance(r, PointVec):
            raise ShapeError("BetaE projection takes a BetaVec and a relation row")
        raw = self.projection(torch.cat([e.alpha, e.beta, r.vec], dim=-1))
        half = self.dim // 2
        return BetaVec(self._positive(raw[..., :half]), self._positive(raw[..., half:]))

    def _intersect(self, stacked: BetaVec) -> BetaVec:
        weights = self.attention(torch.cat([stacked.alpha, stacked.beta], dim=-1))
        return BetaVec(set_sum(weights * stacked.alpha), set_sum(weights * stacked.beta))

    def negate(self, e: BetaVec) -> BetaVec:
        if not isinstance(e, BetaVec):
            raise ShapeError("BetaE negation takes a BetaVec")
        floor = self.beta_floor
        return BetaVec((1.0 / e.alpha).clamp_min(floor), (1.0 / e.beta).clamp_min(floor))

    def distance(self, q: BetaVec, v: BetaVec) -> torch.Tensor:
        """Sum over dimensions of KL(Beta(entity) || Beta(query))."""
        same_variant(q, v)
        entity = Beta(_f64(v.alpha), _f64(v.beta), validate_args=False)
        query = Beta(_f64(q.alpha), _f64(q.beta), validate_args=False)
        return kl_divergence(entity, query).sum(dim=-1)


class _ComplexModel(ReasoningModel):
    """Entity rows are [real half | imaginary half]."""

    def __init__(self, dim: int, hidden: int | None = None, **kwargs):
        super().__init__(dim, hidden, **kwargs)
        self.deepset = DeepSet(dim, self.hidden)

    def _split(self, rows: torch.Tensor) -> ComplexVec:
        half = self.dim // 2
        return ComplexVec(rows[..., :half], rows[..., half:])

    def embed_entity(self, rows: torch.Tensor) -> ComplexVec:
        self._check_rows(rows, self.dim)
        return self._split(rows)

    @staticmethod
    def _multiply(e: ComplexVec, r: ComplexVec) -> ComplexVec:
        same_variant(e, r)
        return ComplexVec(e.re * r.re - e.im * r.im, e.re * r.im + e.im * r.re)

    def _deepset(self, stacked: ComplexVec) -> ComplexVec:
        return self._split(self.deepset(torch.cat([stacked.re, stacked.im], dim=-1)))


class RotatEModel(_ComplexModel):
    """Relations are phase rows; projection rotates each complex component."""

    kind = ModelKind.ROTATE_M

    def embed_relation(self, rows: torch.Tensor) -> ComplexVec:
        self._check_rows(rows, self.dim // 2)
        return ComplexVec(torch.cos(rows), torch.sin(rows))

    def project(self, e: ComplexVec, r: ComplexVec) -> ComplexVec:
        return self._multiply(e, r)

    def _intersect(self, stacked: ComplexVec) -> ComplexVec:
        return self._deepset(stacked)

    def distance(self, q: ComplexVec, v: ComplexVec) -> torch.Tensor:
        same_variant(q, v)
        diff = torch.cat([_f64(q.re) - _f64(v.re), _f64(q.im) - _f64(v.im)], dim=-1)
        return torch.linalg.vector_norm(diff, dim=-1)


class ComplExModel(_ComplexModel):
    """Complex product with real and imaginary parts normalized separately."""

    kind = ModelKind.COMPLEX_M

    def embed_relation(self, rows: torch.Tensor) -> ComplexVec:
        self._check_rows(rows, self.dim)
        return self._split(rows)

    @staticmethod
    def _normalize(e: ComplexVec) -> ComplexVec:
        return ComplexVec(F.normalize(e.re, dim=-1), F.normalize(e.im, dim=-1))

    def project(self, e: ComplexVec, r: ComplexVec) -> ComplexVec:
        return self._normalize(self._multiply(e, r))

    def _intersect(self, stacked: ComplexVec) -> ComplexVec:
        return self._normalize(self._deepset(stacked))

    def distance(self, q: ComplexVec, v: ComplexVec) -> torch.Tensor:
        same_variant(q, v)
        score = (_f64(q.re) * _f64(v.re) + _f64(q.im) * _f64(v.im)).sum(dim=-1)
        return -score


class DistMultModel(ReasoningModel):
    """Elementwise product projection followed by L2 normalization."""

    kind = ModelKind.DISTMULT_M

    def __init__(self, dim: int, hidden: int | None = None, **kwargs):
        super().__init__(dim, hidden, **kwargs)
        self.deepset = DeepSet(dim, self.hidden)

    def embed_entity(self, rows: torch.Tensor) -> PointVec:
        self._check_rows(rows, self.dim)
        return PointVec(rows)

    def project(self, e: PointVec, r: PointVec) -> PointVec:
        same_variant(e, r)
        return PointVec(F.normalize(e.vec * r.vec, dim=-1))

    def _intersect(self, stacked: PointVec) -> PointVec:
        return PointVec(F.normalize(self.deepset(stacked.vec), dim=-1))

    def distance(self, q: PointVec, v: PointVec) -> torch.Tensor:
        same_variant(q, v)
        return -(_f64(q.vec) * _f64(v.vec)).sum(dim=-1)


MODEL_CLASSES: dict[ModelKind, type[ReasoningModel]] = {
    ModelKind.GQE: GQEModel,
    ModelKind.Q2B: Q2BModel,
    ModelKind.BETAE: BetaEModel,
    ModelKind.TRANSE: TransEModel,
    ModelKind.ROTATE_M: RotatEModel,
    ModelKind.DISTMULT_M: DistMultModel,
    ModelKind.COMPLEX_M: ComplExModel,
}


def build_model(
    kind: ModelKind | str,
    dim: int,
    hidden: int | None = None,
    *,
    gamma: float = DEFAULT_GAMMA,
    alpha: float = DEFAULT_ALPHA,
    beta_floor: float = DEFAULT_BETA_FLOOR,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> ReasoningModel:
    """Create a model by kind.

    Args:
        kind: One of the ModelKind values (e.g. "Q2B", "RotatE-m").
        dim: Embedding dimension (even for paired kinds).
        hidden: Width of the dense networks (defaults to dim).
        gamma: Margin used by the loss.
        alpha: Q2B in-box distance weight.
        beta_floor: Lower bound added after softplus for BetaE parameters.
        seed: Seed for the dense-parameter initialization.
        dtype: Parameter dtype; float64 is used for gradient checks.
    """
    kind = ModelKind(kind)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = MODEL_CLASSES[kind](dim, hidden, gamma=gamma, alpha=alpha, beta_floor=beta_floor)
    return model.to(dtype)
