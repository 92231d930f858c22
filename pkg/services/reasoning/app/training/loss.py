"""Contrastive margin objective over a batch with a shared, masked negative pool."""

import torch
import torch.nn.functional as F

from app.errors import RejectionCapError, ShapeError


def contrastive_loss(
    pos_dists: torch.Tensor,
    neg_dists: torch.Tensor,
    mask: torch.Tensor,
    gamma: float,
    pos_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean over queries of the positive and negative margin terms.

    For query i with answers A_i and unmasked negatives N_i:

        -(1/|A_i|) sum log sigmoid(gamma - d(q_i, a)) - (1/|N_i|) sum log sigmoid(d(q_i, n) - gamma)

    Args:
        pos_dists: (M,) or (M, A) distances to positives.
        neg_dists: (M, N) distances to the shared pool.
        mask: (M, N) bool, True where the pool entry is a negative of query i.
        gamma: Margin.
        pos_mask: Optional (M, A) bool when queries carry different answer counts.

    Raises:
        RejectionCapError: if some query has no unmasked negative.
    """
    pos = pos_dists.to(torch.float64)
    neg = neg_dists.to(torch.float64)
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if pos.dim() == 1:
        pos = pos.unsqueeze(1)
    if neg.dim() != 2 or tuple(mask.shape) != tuple(neg.shape) or neg.shape[0] != pos.shape[0]:
        raise ShapeError(
            f"loss shapes disagree: pos {tuple(pos.shape)}, neg {tuple(neg.shape)}, "
            f"mask {tuple(mask.shape)}"
        )
    counts = mask.sum(dim=1)
    if bool((counts == 0).any()):
        raise RejectionCapError("a query in the batch has no unmasked negatives")
    if pos_mask is None:
        pos_mask = torch.ones_like(pos, dtype=torch.bool)

    pos_terms = torch.where(pos_mask, F.logsigmoid(gamma - pos), torch.zeros_like(pos))
    pos_term = -pos_terms.sum(dim=1) / pos_mask.sum(dim=1)
    neg_terms = torch.where(mask, F.logsigmoid(neg - gamma), torch.zeros_like(neg))
    neg_term = -neg_terms.sum(dim=1) / counts
    return (pos_term + neg_term).mean()
