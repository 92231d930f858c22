"""Model kinds and their capabilities."""

from enum import Enum


class ModelKind(str, Enum):
    """The seven reasoning models."""

    GQE = "GQE"
    Q2B = "Q2B"
    BETAE = "BetaE"
    TRANSE = "TransE"
    ROTATE_M = "RotatE-m"
    DISTMULT_M = "DistMult-m"
    COMPLEX_M = "ComplEx-m"

    @property
    def supports_negation(self) -> bool:
        return self is ModelKind.BETAE

    @property
    def supports_multihop(self) -> bool:
        return self is not ModelKind.TRANSE

    @property
    def paired_dim(self) -> bool:
        """True when `dim` is split into pairs (Beta parameters or complex parts)."""
        return self in (ModelKind.BETAE, ModelKind.ROTATE_M, ModelKind.COMPLEX_M)

    @property
    def semantic_matching(self) -> bool:
        """Distance is a negated similarity score (may be negative)."""
        return self in (ModelKind.DISTMULT_M, ModelKind.COMPLEX_M)

    def relation_width(self, dim: int) -> int:
        """Width of a relation row: Q2B keeps center and offset deltas, RotatE-m phases only."""
        if self is ModelKind.Q2B:
            return 2 * dim
        if self is ModelKind.ROTATE_M:
            return dim // 2
        return dim
