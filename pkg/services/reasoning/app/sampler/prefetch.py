"""Background batch production for one training worker.

Pattern:
  - `start()` launches a feeder thread that submits one sampling job per step
    to a thread pool and parks the futures in a bounded queue;
  - the compute thread calls `get()` and receives batches in step order;
  - `shutdown()` stops the feeder and cancels whatever has not run yet.

The queue never holds more than `depth` pending batches, so producers stall
once they are `depth` steps ahead of the consumer.
"""

import queue
import threading
import time
from collections.abc import Callable, Iterator
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Generic, TypeVar

import numpy as np

from app.logging_utils import get_logger
from app.query.structure import QueryStructure, resolve_structure

log = get_logger(__name__)

T = TypeVar("T")

_DONE = object()


def step_rng(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic generator for a (seed, key, ...) tuple."""
    return np.random.default_rng([seed, *keys])


class StructureSchedule:
    """Weighted choice of one structure per step, identical for every worker."""

    def __init__(self, schedule: list[tuple[str, float]], seed: int):
        self.names = [name for name, _ in schedule]
        weights = np.array([w for _, w in schedule], dtype=np.float64)
        self.weights = weights / weights.sum()
        self.structures = {name: resolve_structure(name) for name in self.names}
        self.seed = seed

    def name_at(self, step: int) -> str:
        if len(self.names) == 1:
            return self.names[0]
        rng = step_rng(self.seed, step, 0)
        return self.names[int(rng.choice(len(self.names), p=self.weights))]

    def at(self, step: int) -> QueryStructure:
        return self.structures[self.name_at(step)]


@dataclass(frozen=True)
class Prefetched(Generic[T]):
    step: int
    item: T
    wait_seconds: float


class BatchPrefetcher(Generic[T]):
    """Runs `produce(step)` for steps `0..steps-1` ahead of the consumer."""

    def __init__(
        self,
        produce: Callable[[int], T],
        steps: int,
        *,
        depth: int = 4,
        threads: int = 2,
        name: str = "prefetch",
    ):
        self.produce = produce
        self.steps = steps
        self.depth = depth
        self.name = name
        self.executor = ThreadPoolExecutor(max_workers=threads, thread_name_prefix=name)
        self.pending: queue.Queue = queue.Queue(maxsize=depth)
        self.max_occupancy = 0
        self.consumed: list[int] = []
        self._stop = threading.Event()
        self._feeder = threading.Thread(target=self._feed, name=f"{name}-feeder", daemon=True)
        self._started = False
        self._exhausted = False

    def start(self) -> "BatchPrefetcher[T]":
        if not self._started:
            log.debug("%s.start steps=%d depth=%d", self.name, self.steps, self.depth)
            self._started = True
            self._feeder.start()
        return self

    def _put(self, item: object) -> bool:
        while not self._stop.is_set():
            try:
                self.pending.put(item, timeout=0.05)
                self.max_occupancy = max(self.max_occupancy, self.pending.qsize())
                return True
            except queue.Full:
                continue
        return False

    def _feed(self) -> None:
        for step in range(self.steps):
            if self._stop.is_set():
                return
            future: Future = self.executor.submit(self.produce, step)
            if not self._put((step, future)):
                future.cancel()
                return
        self._put(_DONE)

    def get(self) -> Prefetched[T] | None:
        """Next batch in step order, or None once every step was handed out."""
        self.start()
        if self._exhausted:
            return None
        began = time.perf_counter()
        entry = self.pending.get()
        if entry is _DONE:
            self._exhausted = True
            return None
        step, future = entry
        item = future.result()
        self.consumed.append(step)
        return Prefetched(step, item, time.perf_counter() - began)

    def __iter__(self) -> Iterator[Prefetched[T]]:
        while (entry := self.get()) is not None:
            yield entry

    def shutdown(self) -> None:
        self._stop.set()
        while True:
            try:
                entry = self.pending.get_nowait()
            except queue.Empty:
                break
            if entry is not _DONE:
                entry[1].cancel()
        if self._started:
            self._feeder.join()
        self.executor.shutdown(wait=True, cancel_futures=True)
        log.debug("%s.shutdown consumed=%d", self.name, len(self.consumed))

    def __enter__(self) -> "BatchPrefetcher[T]":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()
