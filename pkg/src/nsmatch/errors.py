from __future__ import annotations


class NsmatchError(Exception):
    """Root of every error raised by nsmatch."""


class ShapeError(NsmatchError, ValueError):
    pass


class NonFiniteError(NsmatchError, ValueError):
    pass


class ConfigError(NsmatchError, ValueError):
    pass


class DataFormatError(NsmatchError, ValueError):
    def __init__(self, message: str, row: int | None = None) -> None:
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class NotFittedError(NsmatchError, RuntimeError):
    pass


class TrainingError(NsmatchError, RuntimeError):
    def __init__(self, message: str, epoch: int | None = None) -> None:
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
        self.epoch = epoch


class MatchingError(NsmatchError, ValueError):
    pass


class InfeasibleMatchError(MatchingError):
    def __init__(self, level: object) -> None:
        super().__init__(f"no control mass at score level {level!r}")
        self.level = level


class ProblemSizeError(NsmatchError, ValueError):
    def __init__(self, size: int, cap: int) -> None:
        super().__init__(f"transport problem has {size} cost entries, cap is {cap}")
        self.size = size
        self.cap = cap


class BoundError(NsmatchError, ValueError):
    pass


class SolverError(NsmatchError, RuntimeError):
    pass
