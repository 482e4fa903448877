"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SpecTempError(Exception):
    """Base class for every error raised by spectemp."""


class EmptyTimeline(SpecTempError):
    pass


class SegmentOutOfRange(SpecTempError):
    pass


class TemplateFieldMissing(SpecTempError, KeyError):
    pass


class RemoteUnavailable(SpecTempError):
    """The endpoint could not be reached after all retry attempts."""

    def __init__(self, message: str, *, reason: str = "network"):
        super().__init__(message)
        self.reason = reason


class RemoteRejected(SpecTempError):
    """The endpoint answered with a non-2xx status that is not worth retrying."""

    def __init__(self, status: int, body: str = ""):
        super().__init__(f"remote endpoint rejected request with status {status}")
        self.status = status
        self.body = body


class SessionAborted(SpecTempError):
    """An adapter failed mid-session. ``rounds`` holds what completed before the failure."""

    def __init__(self, message: str, rounds: list | None = None):
        super().__init__(message)
        self.rounds = list(rounds or [])


class EmptyInput(SpecTempError, ValueError):
    pass


class UndefinedIoU(SpecTempError, ValueError):
    pass


class DimensionMismatch(SpecTempError, ValueError):
    pass


class GroupTooSmall(SpecTempError, ValueError):
    pass


class GroupError(SpecTempError, ValueError):
    pass


class MalformedRecord(SpecTempError, ValueError):
    pass


class AlignmentError(SpecTempError, ValueError):
    pass


class ConfigError(SpecTempError, ValueError):
    pass
