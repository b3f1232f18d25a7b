"""Exception hierarchy shared across the runtime."""

from __future__ import annotations


class FileBusError(Exception):
    """Base class for every error raised by filebus."""


# workspace kernel


class RootNotEmpty(FileBusError):
    pass


class IoFailure(FileBusError):
    pass


class PathTraversal(FileBusError):
    pass


class NotFound(FileBusError):
    pass


class PayloadTooLarge(FileBusError):
    pass


class ArtifactExists(FileBusError):
    pass


class PermissionDenied(FileBusError):
    """A delta op was refused by the scope check.

    ``reason`` is one of ``OutOfScope``, ``AppendOnlyViolation``, ``Traversal``.
    """

    def __init__(self, reason: str, kind: str, path: str, index: int = 0):
        super().__init__(f"{reason}: {kind} {path}")
        self.reason = reason
        self.kind = kind
        self.path = path
        self.index = index


class ConfigError(FileBusError):
    pass


# control plane


class DuplicateToolId(FileBusError):
    pass


class TierViolation(FileBusError):
    pass


class UnknownSubagent(FileBusError):
    pass


class UnknownRole(FileBusError):
    pass


class UnknownTool(FileBusError):
    pass


class OversizeEvent(FileBusError):
    pass


class MalformedAction(FileBusError):
    pass


class BudgetExceeded(FileBusError):
    pass


class ModeRejected(FileBusError):
    pass


# backends


class BackendFailure(FileBusError):
    pass


class NoMatchingRule(BackendFailure):
    pass


class ParseError(FileBusError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class InvalidAction(ParseError):
    pass


# tools


class SpawnFailure(FileBusError):
    pass


class WorkingDirEscape(FileBusError):
    pass


class ProviderUnavailable(FileBusError):
    pass


# engine


class NoCheckpoint(FileBusError):
    pass


class CheckpointCorrupt(FileBusError):
    pass


class ConfigMismatch(FileBusError):
    pass
