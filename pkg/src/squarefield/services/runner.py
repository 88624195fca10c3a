"""Row runner: a queue of independent experiment rows served by a pool of worker threads.

Results are stored by submission index, so the aggregated order never depends on which
worker finished first.
"""

from __future__ import annotations

import logging
import queue
import threading
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

logger = logging.getLogger(__name__)


class RowStatus(Enum):
    PENDING = "pending"
    IN_PROGRESS = "in_progress"
    COMPLETE = "complete"
    FAILED = "failed"


@dataclass
class RowJob:
    """A single queued row."""

    index: int
    item: Any
    fn: Callable[[Any], Any] = field(repr=False)
    status: RowStatus = RowStatus.PENDING
    result: Any = None
    error: BaseException | None = None
    done: threading.Event = field(default_factory=threading.Event, repr=False)


@dataclass
class _Worker:
    """Tracks a worker thread and its stop signal."""

    thread: threading.Thread
    stop_event: threading.Event


class RowRunner:
    """Owns the row queue and a pool of daemon worker threads.

    ``max_workers = 1`` runs every row inline on the calling thread.
    """

    def __init__(self, max_workers: int = 1) -> None:
        self._queue: queue.Queue[RowJob] = queue.Queue()
        self._lock = threading.RLock()
        self._max_workers = max(1, int(max_workers))
        self._workers: list[_Worker] = []

    # ------------------------------------------------------------------
    # Public API
    # ------------------------------------------------------------------

    @property
    def max_workers(self) -> int:
        return self._max_workers

    def map(self, fn: Callable[[Any], Any], items: Iterable[Any]) -> list[Any]:
        """fn over items in submission order; the lowest-index failure is re-raised."""
        jobs = [RowJob(index=i, item=item, fn=fn) for i, item in enumerate(items)]
        if self._max_workers == 1 or len(jobs) <= 1:
            for job in jobs:
                self._run(job)
        else:
            self._ensure_pool()
            for job in jobs:
                self._queue.put(job)
            for job in jobs:
                job.done.wait()
        for job in jobs:
            if job.status is RowStatus.FAILED:
                raise job.error
        return [job.result for job in jobs]

    def close(self) -> None:
        """Stop the worker threads; queued rows are left for no one."""
        with self._lock:
            workers, self._workers = self._workers, []
            for worker in workers:
                worker.stop_event.set()
        for worker in workers:
            worker.thread.join(timeout=1)

    def __enter__(self) -> RowRunner:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    # ------------------------------------------------------------------
    # Internals
    # ------------------------------------------------------------------

    def _ensure_pool(self) -> None:
        with self._lock:
            self._workers = [w for w in self._workers if w.thread.is_alive()]
            for _ in range(self._max_workers - len(self._workers)):
                stop_event = threading.Event()
                thread = threading.Thread(
                    target=self._worker_loop,
                    args=(stop_event,),
                    daemon=True,
                )
                thread.start()
                self._workers.append(_Worker(thread=thread, stop_event=stop_event))

    def _worker_loop(self, stop_event: threading.Event) -> None:
        while True:
            if stop_event.is_set():
                return
            try:
                job = self._queue.get(timeout=0.1)
            except queue.Empty:
                continue
            if stop_event.is_set():
                self._queue.put(job)
                return
            self._run(job)

    def _run(self, job: RowJob) -> None:
        with self._lock:
            job.status = RowStatus.IN_PROGRESS
        try:
            result = job.fn(job.item)
        except Exception as exc:
            with self._lock:
                job.status = RowStatus.FAILED
                job.error = exc
            logger.debug("Row %d failed: %s", job.index, exc)
        else:
            with self._lock:
                job.result = result
                job.status = RowStatus.COMPLETE
        finally:
            job.done.set()
