"""Shared exception types.

Every data or processing error raised by this package derives from
``CxrPipeError`` so the CLI can map them to a single exit code. Stage
failures of the end-to-end pipeline get their own class because they map
to a different exit code.
"""


class CxrPipeError(Exception):
    """Base class for all data/processing errors in this package."""


class InvariantViolation(CxrPipeError):
    """A domain invariant was violated (e.g. abnormal=0 with a location class set)."""


class StageFailure(CxrPipeError):
    """A pipeline stage aborted; carries the stage name and the original cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
