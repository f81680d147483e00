from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Literal

from PySide6.QtCore import QObject, QRunnable, Signal, Slot

logger = logging.getLogger(__name__)

Channel = Literal["report", "oracles"]


class WorkerSignals(QObject):
    # (channel, req_id, payload)
    result = Signal(str, int, object)
    error = Signal(str, int, str)
    finished = Signal()


@dataclass(frozen=True)
class WorkerJob:
    """A background load tagged with the page channel and request id it answers."""

    fn: Callable[[], Any]
    channel: Channel
    req_id: int
    label: str = ""


class Worker(QRunnable):
    """Runs a report load or an oracle suite off the GUI thread."""

    def __init__(self, job: WorkerJob) -> None:
        super().__init__()
        self.job = job
        self.signals = WorkerSignals()
        self.setAutoDelete(False)

    @Slot()
    def run(self) -> None:
        job = self.job
        try:
            payload = job.fn()
        except Exception as e:  # noqa: BLE001
            logger.exception("%s job %d failed", job.channel, job.req_id)
            prefix = f"{job.label}: " if job.label else ""
            self.signals.error.emit(job.channel, job.req_id, f"{prefix}{e}")
        else:
            self.signals.result.emit(job.channel, job.req_id, payload)
        finally:
            self.signals.finished.emit()
