from __future__ import annotations

import logging
import os
from collections.abc import Callable, Hashable, Iterable
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any

import psutil

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorkerJob:
    """``fn(*key)`` must be a picklable top-level callable when run in a process pool."""

    fn: Callable[..., Any]
    key: tuple[Hashable, ...]


@dataclass(frozen=True)
class JobOutcome:
    key: tuple[Hashable, ...]
    result: Any = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def default_jobs() -> int:
    return psutil.cpu_count(logical=False) or os.cpu_count() or 1


def _run_one(job: WorkerJob) -> JobOutcome:
    try:
        return JobOutcome(key=job.key, result=job.fn(*job.key))
    except Exception as e:  # noqa: BLE001
        logger.debug("job %s failed", job.key, exc_info=True)
        return JobOutcome(key=job.key, error=f"{type(e).__name__}: {e}")


def run_jobs(jobs: Iterable[WorkerJob], max_workers: int = 1) -> list[JobOutcome]:
    """Run every job and return the outcomes sorted by key, whatever the completion order."""
    pending = list(jobs)
    if max_workers <= 1 or len(pending) <= 1:
        outcomes = [_run_one(j) for j in pending]
    else:
        workers = min(max_workers, len(pending))
        logger.info("running %d jobs on %d processes", len(pending), workers)
        outcomes = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_one, j): j for j in pending}
            for fut in as_completed(futures):
                outcomes.append(fut.result())
    return sorted(outcomes, key=lambda o: o.key)
