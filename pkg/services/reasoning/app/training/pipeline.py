"""Multi-worker training run.

Per worker: a sampler pool fills a bounded queue with batches, one compute
thread drains it. Workers share the embedding tables and the Adam step
counter, and meet at a barrier each step to average dense gradients. The
structure of every step comes from a schedule seeded only by (seed, step), so
all workers sample the same structure at the same step.
"""

import copy
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from app.errors import KGRError
from app.kg.store import KnowledgeGraph
from app.logging_utils import get_logger
from app.models.checkpoint import save_checkpoint
from app.models.embeddings import EmbeddingTable
from app.models.reasoners import ReasoningModel, build_model
from app.sampler.grounding import ground_query, instantiate_with_cache
from app.sampler.negatives import TrainingBatch, build_batch
from app.sampler.prefetch import BatchPrefetcher, StructureSchedule, step_rng
from app.settings import TrainConfig
from app.training.optim import RowLocks, StepCounter
from app.training.worker import GradientExchange, StepReport, TrainWorker

log = get_logger(__name__)


@dataclass
class TrainResult:
    model: ReasoningModel
    entities: EmbeddingTable
    relations: EmbeddingTable
    reports: list[StepReport] = field(default_factory=list)
    seconds: float = 0.0
    checkpoint_path: Path | None = None
    worker_models: list[ReasoningModel] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        """Per-step loss of worker 0."""
        return [r.loss for r in self.reports if r.worker == 0]

    @property
    def queries_per_second(self) -> float:
        total = sum(r.queries for r in self.reports)
        return total / self.seconds if self.seconds > 0 else 0.0


def make_batch_fn(
    config: TrainConfig, kg: KnowledgeGraph, schedule: StructureSchedule, worker: int
):
    """Batch producer for one worker; deterministic in (seed, worker, step)."""
    settings = config.sampler_settings()
    verify = config.negative_mode == "verified"

    def produce(step: int) -> TrainingBatch:
        rng = step_rng(config.seed, worker + 1, step)
        q = schedule.at(step)
        if not verify:
            queries = [ground_query(q, kg, rng, settings) for _ in range(config.batch_size)]
            return build_batch(queries, config.shared_negatives, kg, rng, settings, verify=False)
        grounded = [instantiate_with_cache(q, kg, rng, settings) for _ in range(config.batch_size)]
        return build_batch(
            [g for g, _ in grounded],
            config.shared_negatives,
            kg,
            rng,
            settings,
            caches=[c for _, c in grounded],
        )

    return produce


class _MetricsLog:
    def __init__(self, path: str | Path | None):
        self._lock = threading.Lock()
        self._file = open(path, "w", encoding="utf-8") if path else None

    def write(self, report: StepReport) -> None:
        if self._file is None:
            return
        with self._lock:
            self._file.write(report.log_line() + "\n")
            self._file.flush()

    def close(self) -> None:
        if self._file is not None:
            self._file.close()


def run(
    config: TrainConfig,
    kg: KnowledgeGraph,
    checkpoint_path: str | Path | None = None,
    metrics_path: str | Path | None = None,
    model: ReasoningModel | None = None,
    tables: tuple[EmbeddingTable, EmbeddingTable] | None = None,
) -> TrainResult:
    """Train for `config.steps` synchronized steps.

    Args:
        config: Validated training configuration.
        kg: Training graph.
        checkpoint_path: Where to write the checkpoint (skipped when None).
        metrics_path: Line-delimited metrics log (skipped when None).
        model: Optional initial model (otherwise built from the config).
        tables: Optional initial (entities, relations) tables.

    Raises:
        CapabilityError: the model cannot embed a scheduled structure.
        SamplerExhaustedError: a structure cannot be grounded on `kg`.
    """
    schedule = StructureSchedule(config.schedule, config.seed)
    if model is None:
        model = build_model(
            config.model,
            config.dim,
            config.width,
            gamma=config.margin,
            alpha=config.alpha,
            beta_floor=config.beta_floor,
            seed=config.seed,
        )
    for q in schedule.structures.values():
        model.check_structure(q)
    entities, relations = tables or model.init_tables(
        kg.num_entities, kg.num_relations, config.seed
    )

    exchange = GradientExchange(config.workers)
    counter = StepCounter()
    locks = RowLocks() if config.row_locking else None
    workers = [
        TrainWorker(
            w, copy.deepcopy(model), entities, relations, config, exchange, counter, locks
        )
        for w in range(config.workers)
    ]
    prefetchers = [
        BatchPrefetcher(
            make_batch_fn(config, kg, schedule, w),
            config.steps,
            depth=config.prefetch_depth,
            threads=config.sampler_threads,
            name=f"sampler-{w}",
        )
        for w in range(config.workers)
    ]
    metrics = _MetricsLog(metrics_path)
    reports: list[list[StepReport]] = [[] for _ in workers]
    errors: list[BaseException] = []

    def loop(w: int) -> None:
        worker, source = workers[w], prefetchers[w]
        try:
            for item in source:
                report = worker.train_step(item.step, item.item, item.wait_seconds)
                reports[w].append(report)
                metrics.write(report)
                if w == 0 and (item.step + 1) % config.log_every == 0:
                    log.info(report.log_line())
        except threading.BrokenBarrierError as e:
            errors.append(e)
        except BaseException as e:
            errors.append(e)
            exchange.abort()

    log.info(
        "training %s dim=%d workers=%d steps=%d schedule=%s",
        config.model.value, config.dim, config.workers, config.steps, config.structure_schedule,
    )
    started = time.perf_counter()
    threads = [threading.Thread(target=loop, args=(w,), name=f"worker-{w}") for w in range(len(workers))]
    try:
        for p in prefetchers:
            p.start()
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        for p in prefetchers:
            p.shutdown()
        metrics.close()
    seconds = time.perf_counter() - started

    real = [e for e in errors if not isinstance(e, threading.BrokenBarrierError)]
    if real:
        raise real[0]
    if errors:
        raise KGRError("training aborted: workers lost synchronization")

    merged = sorted((r for rs in reports for r in rs), key=lambda r: (r.step, r.worker))
    result = TrainResult(
        model=workers[0].model,
        entities=entities,
        relations=relations,
        reports=merged,
        seconds=seconds,
        worker_models=[w.model for w in workers],
    )
    if checkpoint_path is not None:
        meta = {
            "config": json.loads(config.model_dump_json()),
            "final_loss": result.losses[-1] if result.losses else None,
            "steps": config.steps,
            "seconds": seconds,
            "queries_per_second": result.queries_per_second,
            "metrics_path": str(metrics_path) if metrics_path else None,
        }
        save_checkpoint(checkpoint_path, result.model, entities, relations, counter.value, meta)
        result.checkpoint_path = Path(checkpoint_path)
    log.info("TRAINING COMPLETE %.1fs %.1f queries/s", seconds, result.queries_per_second)
    return result
