"""Row-wise Adam for embedding tables, plus the shared step counter and row locks."""

import threading
from contextlib import contextmanager

import torch

from app.models.embeddings import EmbeddingTable


class StepCounter:
    """Global Adam step shared by every worker."""

    def __init__(self, start: int = 0):
        self._value = start
        self._lock = threading.Lock()

    def next(self) -> int:
        with self._lock:
            self._value += 1
            return self._value

    @property
    def value(self) -> int:
        return self._value


class RowLocks:
    """Striped locks; a row maps to stripe `id % stripes`."""

    def __init__(self, stripes: int = 64):
        self._locks = [threading.Lock() for _ in range(stripes)]

    @contextmanager
    def hold(self, ids: torch.Tensor):
        # stripes are taken in ascending order
        stripes = sorted({int(i) % len(self._locks) for i in ids.tolist()})
        for s in stripes:
            self._locks[s].acquire()
        try:
            yield
        finally:
            for s in reversed(stripes):
                self._locks[s].release()


def coalesce(ids: torch.Tensor, grads: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Deduplicate row ids, summing the gradients of repeated ids."""
    unique, inverse = torch.unique(ids, sorted=True, return_inverse=True)
    if len(unique) == len(ids):
        order = torch.argsort(ids)
        return ids[order], grads[order]
    summed = torch.zeros(len(unique), grads.shape[1], dtype=grads.dtype)
    summed.index_add_(0, inverse, grads)
    return unique, summed


def sparse_adam_step(
    table: EmbeddingTable,
    ids: torch.Tensor,
    grads: torch.Tensor,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    step: int,
    locks: RowLocks | None = None,
) -> None:
    """Adam update of the touched rows only, each with its own moments.

    Rows are written back without synchronization unless `locks` is given;
    untouched rows and their moments are left alone.
    """
    ids = torch.as_tensor(ids, dtype=torch.int64)
    if not len(ids):
        return
    table.check_ids(ids)
    ids, grads = coalesce(ids, grads.detach().to(table.dtype))
    bias1 = 1.0 - beta1**step
    bias2 = 1.0 - beta2**step

    def apply() -> None:
        with torch.no_grad():
            m = table.adam_m.index_select(0, ids).mul_(beta1).add_(grads, alpha=1.0 - beta1)
            v = table.adam_v.index_select(0, ids).mul_(beta2).addcmul_(grads, grads, value=1.0 - beta2)
            denom = (v / bias2).sqrt_().add_(eps)
            rows = table.rows.index_select(0, ids).addcdiv_(m, denom, value=-lr / bias1)
            table.adam_m.index_copy_(0, ids, m)
            table.adam_v.index_copy_(0, ids, v)
            table.rows.index_copy_(0, ids, rows)

    if locks is None:
        apply()
    else:
        with locks.hold(ids):
            apply()
