"""Tests for `app/sampler/prefetch.py`.

Step ordering, the bounded queue and the structure schedule.
"""

import threading
import time

import pytest

from app.sampler.prefetch import BatchPrefetcher, StructureSchedule, step_rng


def test_batches_arrive_in_step_order() -> None:
    """Out-of-order completion still hands batches out by step."""

    def produce(step: int) -> int:
        time.sleep(0.002 * ((7 - step) % 4))
        return step * 10

    with BatchPrefetcher(produce, 12, depth=3, threads=4) as pf:
        got = [(p.step, p.item) for p in pf]
    assert got == [(s, s * 10) for s in range(12)]
    assert pf.consumed == list(range(12))


def test_queue_stays_bounded() -> None:
    """A slow consumer never sees more than `depth` parked batches."""
    pf = BatchPrefetcher(lambda s: s, 30, depth=2, threads=2).start()
    try:
        for _ in range(30):
            time.sleep(0.003)
            assert pf.get() is not None
        assert pf.get() is None
        assert pf.get() is None
    finally:
        pf.shutdown()
    assert 1 <= pf.max_occupancy <= 2


def test_producer_errors_surface_in_get() -> None:
    def produce(step: int) -> int:
        if step == 2:
            raise RuntimeError("boom")
        return step

    with BatchPrefetcher(produce, 5, depth=2) as pf:
        assert pf.get().item == 0
        assert pf.get().item == 1
        with pytest.raises(RuntimeError, match="boom"):
            pf.get()


def test_shutdown_with_unconsumed_steps() -> None:
    """Shutdown returns even while the feeder is blocked on a full queue."""
    started = threading.Event()

    def produce(step: int) -> int:
        started.set()
        return step

    pf = BatchPrefetcher(produce, 1000, depth=2).start()
    assert started.wait(2.0)
    pf.shutdown()
    assert len(pf.consumed) == 0


def test_schedule_single_entry() -> None:
    """One entry means every step uses that structure."""
    schedule = StructureSchedule([("2p", 1.0)], seed=3)
    assert {schedule.name_at(s) for s in range(50)} == {"2p"}
    assert schedule.at(7).name == "2p"


def test_schedule_is_deterministic_and_weighted() -> None:
    a = StructureSchedule([("1p", 3.0), ("2i", 1.0)], seed=5)
    b = StructureSchedule([("1p", 3.0), ("2i", 1.0)], seed=5)
    names = [a.name_at(s) for s in range(2000)]
    assert names == [b.name_at(s) for s in range(2000)]
    share = names.count("1p") / len(names)
    assert 0.70 < share < 0.80


def test_step_rng_streams() -> None:
    assert step_rng(1, 2, 3).integers(1 << 30) == step_rng(1, 2, 3).integers(1 << 30)
    assert step_rng(1, 2, 3).integers(1 << 30) != step_rng(1, 3, 2).integers(1 << 30)
