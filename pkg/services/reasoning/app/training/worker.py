"""One training worker: gather rows, forward, backward, exchange, update."""

import threading
import time
from dataclasses import dataclass

import numpy as np
import torch

from app.errors import NonFiniteLossError
from app.logging_utils import get_logger
from app.models.embeddings import EmbeddingTable, GatheredRows
from app.models.reasoners import ReasoningModel
from app.sampler.negatives import TrainingBatch
from app.settings import TrainConfig
from app.training.loss import contrastive_loss
from app.training.optim import RowLocks, StepCounter, sparse_adam_step

log = get_logger(__name__)


class GradientExchange:
    """Barrier AllReduce of dense gradients between worker threads.

    Every worker sums the slots in worker order 0..W-1, so all of them get the
    same bits back.
    """

    def __init__(self, workers: int):
        self.workers = workers
        self._slots: list[list[torch.Tensor] | None] = [None] * workers
        self._barrier = threading.Barrier(workers)

    def allreduce(self, worker: int, grads: list[torch.Tensor]) -> list[torch.Tensor]:
        if self.workers == 1:
            return grads
        self._slots[worker] = grads
        self._barrier.wait()
        slots = [s for s in self._slots if s is not None]
        out = []
        for k in range(len(grads)):
            total = slots[0][k].clone()
            for s in slots[1:]:
                total += s[k]
            out.append(total / self.workers)
        self._barrier.wait()
        return out

    def abort(self) -> None:
        self._barrier.abort()


@dataclass(frozen=True)
class StepReport:
    step: int
    worker: int
    structure: str
    loss: float
    rows_touched: int
    queries: int
    sample_wait: float
    gather: float
    compute: float
    update: float

    @property
    def seconds(self) -> float:
        return self.sample_wait + self.gather + self.compute + self.update

    @property
    def qps(self) -> float:
        return self.queries / self.seconds if self.seconds > 0 else 0.0

    @property
    def queue_wait(self) -> float:
        return self.sample_wait / self.seconds if self.seconds > 0 else 0.0

    def log_line(self) -> str:
        return (
            f"step={self.step} worker={self.worker} structure={self.structure} "
            f"loss={self.loss:.6f} qps={self.qps:.1f} queue_wait={self.queue_wait:.3f}"
        )


class TrainWorker:
    """Holds one copy of the dense parameters and shares the embedding tables."""

    def __init__(
        self,
        index: int,
        model: ReasoningModel,
        entities: EmbeddingTable,
        relations: EmbeddingTable,
        config: TrainConfig,
        exchange: GradientExchange,
        counter: StepCounter,
        locks: RowLocks | None = None,
    ):
        self.index = index
        self.model = model
        self.entities = entities
        self.relations = relations
        self.config = config
        self.exchange = exchange
        self.counter = counter
        self.locks = locks
        self.params = [p for p in model.parameters() if p.requires_grad]
        self.optimizer = (
            torch.optim.Adam(
                self.params,
                lr=config.learning_rate,
                betas=(config.beta1, config.beta2),
                eps=config.eps,
            )
            if self.params
            else None
        )

    def gather(self, batch: TrainingBatch) -> tuple[GatheredRows, GatheredRows]:
        """Copy every entity and relation row the batch touches."""
        ent = self.entities.gather(
            np.concatenate([batch.anchors.ravel(), batch.positives, batch.negatives])
        )
        rel = self.relations.gather(batch.relations.ravel())
        return ent, rel

    def forward(
        self, batch: TrainingBatch, ent: GatheredRows, rel: GatheredRows
    ) -> torch.Tensor:
        """Batch loss over the gathered rows."""
        model = self.model
        disjuncts = model.embed_query(
            batch.structure, ent.lookup(batch.anchors), rel.lookup(batch.relations)
        )
        positives = model.embed_entity(ent.lookup(batch.positives))
        negatives = model.embed_entity(ent.lookup(batch.negatives))
        pos = torch.stack([model.distance(d, positives) for d in disjuncts]).min(dim=0).values
        neg = model.disjunct_distance(disjuncts, negatives)
        return contrastive_loss(pos, neg, torch.from_numpy(batch.mask), model.gamma)

    def train_step(self, step: int, batch: TrainingBatch, sample_wait: float = 0.0) -> StepReport:
        """Run one synchronized step on `batch`.

        Raises:
            NonFiniteLossError: the loss is NaN or infinite (the exchange is aborted too).
        """
        t0 = time.perf_counter()
        for p in self.params:
            p.grad = None
        ent, rel = self.gather(batch)
        t1 = time.perf_counter()
        loss = self.forward(batch, ent, rel)
        if not bool(torch.isfinite(loss)):
            self.exchange.abort()
            raise NonFiniteLossError(
                f"worker {self.index} step {step} ({batch.structure.label}): loss={float(loss)}"
            )
        loss.backward()
        grads = [
            p.grad.detach() if p.grad is not None else torch.zeros_like(p) for p in self.params
        ]
        averaged = self.exchange.allreduce(self.index, grads)
        t2 = time.perf_counter()

        if self.optimizer is not None:
            for p, g in zip(self.params, averaged, strict=True):
                p.grad = g.clone()
            self.optimizer.step()
        t = self.counter.next()
        cfg = self.config
        for table, rows in ((self.entities, ent), (self.relations, rel)):
            sparse_adam_step(
                table, rows.ids, rows.grad, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, t,
                self.locks,
            )
        t3 = time.perf_counter()
        return StepReport(
            step=step,
            worker=self.index,
            structure=batch.structure.label,
            loss=float(loss.detach()),
            rows_touched=int(len(ent.ids) + len(rel.ids)),
            queries=batch.size,
            sample_wait=sample_wait,
            gather=t1 - t0,
            compute=t2 - t1,
            update=t3 - t2,
        )
