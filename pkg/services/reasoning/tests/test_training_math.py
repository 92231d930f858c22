"""Tests for `app/training/loss.py` and `app/training/optim.py`.

Loss arithmetic on hand-built batches and the row-wise Adam update against a
scalar reference.
"""

import math

import numpy as np
import pytest
import torch

from app.errors import RejectionCapError, ShapeError
from app.models.embeddings import EmbeddingTable
from app.training.loss import contrastive_loss
from app.training.optim import RowLocks, StepCounter, coalesce, sparse_adam_step


def _log_sigmoid(x: float) -> float:
    return -math.log1p(math.exp(-x))


def test_loss_at_margin_fixed_point() -> None:
    """Both distances at gamma give 2 log 2 per query."""
    gamma = 6.0
    pos = torch.full((4,), gamma)
    neg = torch.full((4, 5), gamma)
    loss = contrastive_loss(pos, neg, torch.ones(4, 5, dtype=torch.bool), gamma)
    assert abs(float(loss) - 2 * math.log(2.0)) < 1e-9
    assert loss.dtype == torch.float64


def test_loss_hand_built_batch() -> None:
    """gamma=2, positive at 1, one negative at 3: -2 log sigmoid(1)."""
    loss = contrastive_loss(
        torch.tensor([1.0]), torch.tensor([[3.0]]), torch.tensor([[True]]), 2.0
    )
    assert abs(float(loss) - (-2 * _log_sigmoid(1.0))) < 1e-12
    assert abs(float(loss) - 0.6265) < 1e-4


def test_loss_limit() -> None:
    """Positive at 0 and negatives far away leave only -log sigmoid(gamma)."""
    loss = contrastive_loss(
        torch.tensor([0.0]), torch.tensor([[1e6, 1e6]]), torch.ones(1, 2, dtype=torch.bool), 3.0
    )
    assert abs(float(loss) + _log_sigmoid(3.0)) < 1e-9


def test_masked_negatives_are_ignored() -> None:
    """Masked entries neither count nor contribute; the mean uses unmasked counts."""
    gamma = 1.0
    neg = torch.tensor([[gamma, 50.0, -7.0], [gamma, gamma, gamma]])
    mask = torch.tensor([[True, False, False], [True, True, True]])
    loss = contrastive_loss(torch.full((2,), gamma), neg, mask, gamma)
    assert abs(float(loss) - 2 * math.log(2.0)) < 1e-9


def test_empty_negative_row_rejected() -> None:
    with pytest.raises(RejectionCapError):
        contrastive_loss(
            torch.zeros(2), torch.zeros(2, 2), torch.tensor([[True, True], [False, False]]), 1.0
        )


def test_loss_shape_errors() -> None:
    with pytest.raises(ShapeError):
        contrastive_loss(torch.zeros(2), torch.zeros(2, 3), torch.ones(3, 2, dtype=torch.bool), 1.0)
    with pytest.raises(ShapeError):
        contrastive_loss(torch.zeros(3), torch.zeros(2, 2), torch.ones(2, 2, dtype=torch.bool), 1.0)


def test_multiple_positives_with_mask() -> None:
    pos = torch.tensor([[1.0, 99.0]])
    loss = contrastive_loss(
        pos, torch.tensor([[1.0]]), torch.tensor([[True]]), 1.0, pos_mask=torch.tensor([[True, False]])
    )
    assert abs(float(loss) - 2 * math.log(2.0)) < 1e-9


def _scalar_adam(x, m, v, g, lr, b1, b2, eps, t):
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mhat = m / (1 - b1**t)
    vhat = v / (1 - b2**t)
    return x - lr * mhat / (math.sqrt(vhat) + eps), m, v


def test_sparse_adam_matches_scalar_reference() -> None:
    """Ten random (gradient, hyperparameter) tuples over three steps."""
    rng = np.random.default_rng(0)
    for _ in range(10):
        lr = float(rng.uniform(1e-4, 1e-1))
        b1, b2 = float(rng.uniform(0.5, 0.95)), float(rng.uniform(0.9, 0.9999))
        eps = float(10 ** rng.uniform(-10, -6))
        table = EmbeddingTable(4, 3, dtype=torch.float64)
        table.rows.copy_(torch.from_numpy(rng.normal(size=(4, 3))))
        ref = table.rows.clone().numpy()
        ref_m, ref_v = np.zeros((4, 3)), np.zeros((4, 3))
        for t in range(1, 4):
            g = rng.normal(size=(1, 3))
            sparse_adam_step(table, torch.tensor([2]), torch.from_numpy(g), lr, b1, b2, eps, t)
            for j in range(3):
                ref[2, j], ref_m[2, j], ref_v[2, j] = _scalar_adam(
                    ref[2, j], ref_m[2, j], ref_v[2, j], g[0, j], lr, b1, b2, eps, t
                )
        assert np.allclose(table.rows.numpy(), ref, atol=1e-7, rtol=0)
        assert np.allclose(table.adam_m.numpy(), ref_m, atol=1e-12)
        assert np.allclose(table.adam_v.numpy(), ref_v, atol=1e-12)


def test_zero_gradient_leaves_fresh_row() -> None:
    """g=0 with zero moments leaves the row and moments unchanged."""
    table = EmbeddingTable(2, 2, dtype=torch.float64)
    table.rows.copy_(torch.tensor([[1.0, -2.0], [3.0, 4.0]], dtype=torch.float64))
    before = table.rows.clone()
    sparse_adam_step(table, torch.tensor([0]), torch.zeros(1, 2, dtype=torch.float64), 0.1, 0.9, 0.999, 1e-8, 1)
    assert torch.equal(table.rows, before)
    assert torch.count_nonzero(table.adam_m) == 0


def test_zero_gradient_decays_moments() -> None:
    table = EmbeddingTable(1, 1, dtype=torch.float64)
    table.adam_m.fill_(1.0)
    table.adam_v.fill_(1.0)
    sparse_adam_step(table, torch.tensor([0]), torch.zeros(1, 1, dtype=torch.float64), 0.1, 0.9, 0.99, 1e-8, 2)
    assert float(table.adam_m) == pytest.approx(0.9)
    assert float(table.adam_v) == pytest.approx(0.99)


def test_duplicate_ids_use_summed_gradient() -> None:
    """A row seen twice updates like one row with the pre-summed gradient."""
    a = EmbeddingTable(3, 2, dtype=torch.float64)
    b = EmbeddingTable(3, 2, dtype=torch.float64)
    g = torch.tensor([[0.5, -1.0], [0.25, 2.0], [1.0, 1.0]], dtype=torch.float64)
    sparse_adam_step(a, torch.tensor([1, 0, 1]), g, 0.01, 0.9, 0.999, 1e-8, 1)
    summed = torch.stack([g[1], g[0] + g[2]])
    sparse_adam_step(b, torch.tensor([0, 1]), summed, 0.01, 0.9, 0.999, 1e-8, 1)
    assert torch.equal(a.rows, b.rows)
    assert torch.equal(a.adam_v, b.adam_v)


def test_untouched_rows_unchanged() -> None:
    table = EmbeddingTable(5, 2)
    table.rows.normal_(generator=torch.Generator().manual_seed(0))
    before = table.rows.clone()
    sparse_adam_step(table, torch.tensor([3]), torch.ones(1, 2), 0.1, 0.9, 0.999, 1e-8, 1, RowLocks(4))
    changed = (table.rows != before).any(dim=1)
    assert changed.tolist() == [False, False, False, True, False]


def test_coalesce_sorts_and_sums() -> None:
    ids, grads = coalesce(torch.tensor([4, 2, 4]), torch.tensor([[1.0], [2.0], [3.0]]))
    assert ids.tolist() == [2, 4]
    assert grads.tolist() == [[2.0], [4.0]]


def test_step_counter_is_shared() -> None:
    counter = StepCounter()
    assert [counter.next() for _ in range(3)] == [1, 2, 3]
    assert counter.value == 3
