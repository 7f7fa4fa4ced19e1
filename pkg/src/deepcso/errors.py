"""Exception hierarchy shared by every deepcso module.

The CLI maps any ``DeepCSOError`` to exit code 1 and prints ``kind`` with the message.
"""

from __future__ import annotations


class DeepCSOError(Exception):
    kind = "error"


class InvalidArgumentError(DeepCSOError, ValueError):
    kind = "invalid argument"


class ShapeError(DeepCSOError, ValueError):
    kind = "shape error"


class InvalidStateError(DeepCSOError, ValueError):
    kind = "invalid state"


class ConfigError(DeepCSOError, ValueError):
    kind = "config error"


class IngestionError(DeepCSOError, ValueError):
    kind = "ingestion error"

    def __init__(self, message: str, *, row: int | None = None) -> None:
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class DegenerateDataError(DeepCSOError, ValueError):
    kind = "degenerate data"

    def __init__(self, message: str, *, channel: str | None = None) -> None:
        super().__init__(message)
        self.channel = channel


class EmptyLagSpecError(DeepCSOError, ValueError):
    kind = "empty lag spec"


class EmptyDatasetError(DeepCSOError, ValueError):
    kind = "empty dataset"


class SplitError(DeepCSOError, ValueError):
    kind = "split error"


class SingularSystemError(DeepCSOError, ValueError):
    kind = "singular system"


class SearchError(DeepCSOError, RuntimeError):
    kind = "search error"


class CheckpointParseError(DeepCSOError, ValueError):
    kind = "checkpoint parse error"

    def __init__(self, message: str, *, offset: int) -> None:
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedVersionError(DeepCSOError, ValueError):
    kind = "unsupported version"


class SchemaError(DeepCSOError, ValueError):
    kind = "schema error"

    def __init__(self, message: str, *, missing: tuple[str, ...] = ()) -> None:
        super().__init__(message)
        self.missing = missing


class HistoryError(DeepCSOError, ValueError):
    kind = "history error"
