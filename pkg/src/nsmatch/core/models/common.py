from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Generic, Literal, TypeVar

T = TypeVar("T")

Status = Literal["ok", "warn", "fail"]


def _now() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class StageResult(Generic[T]):
    """Outcome of one unit of work (an experiment run, an oracle suite) plus its notices."""

    data: T
    status: Status = "ok"
    notes: tuple[str, ...] = ()
    ts: datetime = field(default_factory=_now, compare=False)

    @property
    def warning_count(self) -> int:
        return len(self.notes)

    def with_note(self, note: str) -> StageResult[T]:
        status: Status = "fail" if self.status == "fail" else "warn"
        return StageResult(data=self.data, status=status, notes=self.notes + (note,), ts=self.ts)
